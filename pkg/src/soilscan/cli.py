"""Command-line entry point: ``soilscan <command> [options]``.

Every artifact carries the effective configuration and seed. CSV artifacts
put it on a leading ``# config:`` line, JSON artifacts under ``"config"``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .acquisition import SimulatedStream, SweepConfig, run_sweep
from .calibration import (
    TARGET_TRENDS,
    calibrate_fixtures,
    calibrated_salt_models,
    models_from_dict,
    models_to_dict,
    trend_slopes,
)
from .dataset import (
    SimSetup,
    generate_controlled_set,
    generate_field_like_set,
    labeled_raw,
    load_dataset,
    salt_regression,
    save_dataset,
)
from .errors import (
    AcquisitionError,
    AlignmentError,
    CalibrationError,
    ConfigurationError,
    ContractError,
    DegenerateFitError,
    DomainError,
    EmptyFeatureError,
    FeatureUnavailableError,
    FoldError,
    LoadError,
)
from .features import FeatureScheme, SpectralFeaturizer
from .learning.ensemble import EnsembleSpec, SoftVotingEnsemble
from .learning.validation import AugmentationConfig, augment_arrays, loocv_evaluate
from .propagation import NoiseModel, stable_hash
from .spectrum import BANDS, write_atomic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_LOAD = 3
EXIT_NUMERIC = 4
EXIT_CALIBRATION = 5

COMMANDS = ("simulate", "sweep", "featurize", "augment", "train", "evaluate", "calibrate", "regress")
SCHEMES = {"hop": FeatureScheme.hop, "agg": FeatureScheme.aggregate, "weighted": FeatureScheme.weighted}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def _common(p: argparse.ArgumentParser, manifest: bool = True):
    if manifest:
        p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)


def _learning(p: argparse.ArgumentParser):
    p.add_argument("--scheme", choices=sorted(SCHEMES), default="agg")
    p.add_argument("--interval-mhz", type=float, default=10.0)
    p.add_argument("--band", choices=("low", "high", "both"), default="both")
    p.add_argument("--threshold-ppm", type=float, default=200.0)
    p.add_argument("--r", type=int, default=200)
    p.add_argument("--sigma-max", type=float, default=3.0)
    p.add_argument("--augment-space", choices=("raw", "feature"), default="raw")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="soilscan", description="RF soil lead screening toolkit")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a simulated dataset")
    _common(p, manifest=False)
    p.add_argument("--design", choices=("controlled", "field"), default="controlled")
    p.add_argument("--noise-db", type=float, default=None)
    p.add_argument("--n", type=int, default=22)
    p.add_argument("--n-above", type=int, default=10)
    p.add_argument("--separable", action="store_true")
    p.add_argument("--threshold-ppm", type=float, default=200.0)
    p.add_argument("--fixtures", help="salt response fixtures JSON from 'calibrate'")

    p = sub.add_parser("sweep", help="run the acquisition loop against a stored spectrum")
    _common(p)
    p.add_argument("--sample", required=True)
    p.add_argument("--band", choices=sorted(BANDS), default="low")
    p.add_argument("--jitter-db", type=float, default=0.0)

    p = sub.add_parser("featurize", help="write the feature table")
    _common(p)
    _learning(p)

    p = sub.add_parser("augment", help="write the augmented training table")
    _common(p)
    _learning(p)

    p = sub.add_parser("train", help="fit the ensemble on the whole dataset")
    _common(p)
    _learning(p)

    p = sub.add_parser("evaluate", help="repeated leave-one-out evaluation")
    _common(p)
    _learning(p)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("calibrate", help="fit salt response fixtures to the trend constraints")
    _common(p, manifest=False)

    p = sub.add_parser("regress", help="R^2 of each salt against Diff800 and Diff2300")
    _common(p)
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "out"}


def _dump_json(path: Path, doc: dict) -> None:
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _csv(path: Path, config: dict, header: list[str], rows) -> None:
    lines = ["# config: " + json.dumps(config, sort_keys=True), ",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bands(args) -> list[str]:
    return ["low", "high"] if args.band == "both" else [args.band]


def _prepare(args):
    ds = load_dataset(args.manifest)
    if len(ds) == 0:
        raise ConfigurationError(f"{args.manifest} lists no samples")
    data, layout = labeled_raw(ds, _bands(args), args.threshold_ppm)
    scheme = SCHEMES[args.scheme](args.interval_mhz)
    return ds, data, layout, scheme


def _say(stage: str, text: str) -> None:
    print(f"[{stage}] {text}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> None:
    models = calibrated_salt_models()
    if args.fixtures:
        path = Path(args.fixtures)
        if not path.is_file():
            raise LoadError(f"fixtures not found: {path}")
        models = models_from_dict(json.loads(path.read_text())["models"])
    if args.design == "controlled":
        setup = SimSetup(noise=NoiseModel(args.noise_db or 0.0))
        ds = generate_controlled_set(setup=setup, seed=args.seed, models=models)
    else:
        setup = SimSetup(noise=NoiseModel(0.5 if args.noise_db is None else args.noise_db))
        ds = generate_field_like_set(args.n, args.n_above, args.seed, args.separable, setup=setup,
                                     threshold=args.threshold_ppm, models=models)
    ds = type(ds)(ds.records, ds.step_mhz, {**ds.provenance, "config": _config(args)})
    path = save_dataset(ds, _out(args))
    _say("simulate", f"{len(ds)} samples -> {path} (hash {ds.content_hash()[:12]})")


def cmd_sweep(args) -> None:
    ds = load_dataset(args.manifest)
    try:
        spectrum = ds[args.sample].spectra[args.band]
    except KeyError as exc:
        raise ConfigurationError(f"no {args.band} spectrum for sample {args.sample!r}") from exc
    stream = SimulatedStream.from_spectrum(spectrum, jitter_db=args.jitter_db)
    swept, trace = run_sweep(stream, SweepConfig(BANDS[args.band], step_mhz=spectrum.step_mhz), args.seed)
    out = _out(args)
    write_atomic(out / "trace.csv", "# config: " + json.dumps(_config(args), sort_keys=True) + "\n" + trace.to_log())
    swept = type(swept)(swept.freqs_mhz, swept.power_dbm, swept.band_label, swept.step_mhz,
                        swept.grid_start_mhz, {**swept.provenance, "config": _config(args)})
    swept.save(out / f"{args.sample}_{args.band}_swept.csv")
    _say("sweep", f"{len(swept)} points collected, {len(trace.skipped_freqs)} skipped, "
                  f"{trace.count('recollected')} recollects")


def cmd_featurize(args) -> None:
    ds, data, layout, scheme = _prepare(args)
    fz = SpectralFeaturizer(layout, scheme).fit(data.features)
    F = fz.transform(data.features)
    rows = [[sid, int(lab), float(pb), *map(float, f)] for sid, lab, pb, f in
            zip(data.sample_ids, data.labels, data.pb_ppm, F)]
    _csv(_out(args) / "features.csv", _config(args), ["id", "label", "pb_ppm", *fz.names_], rows)
    _say("featurize", f"{F.shape[0]} samples x {F.shape[1]} {args.scheme} features")


def _augment_features(args, data, layout, scheme):
    fz = SpectralFeaturizer(layout, scheme).fit(data.features)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    if args.augment_space == "raw":
        X, y = augment_arrays(data.features, data.labels, args.r, args.sigma_max, rng)
        X = fz.transform(X)
    else:
        X, y = augment_arrays(fz.transform(data.features), data.labels, args.r, args.sigma_max, rng)
    return fz, X, y


def cmd_augment(args) -> None:
    _, data, layout, scheme = _prepare(args)
    fz, X, y = _augment_features(args, data, layout, scheme)
    ids = [f"{sid}#{c}" for sid in data.sample_ids for c in range(args.r)]
    rows = [[i, int(lab), *map(float, x)] for i, lab, x in zip(ids, y, X)]
    _csv(_out(args) / "augmented.csv", _config(args), ["id", "label", *fz.names_], rows)
    _say("augment", f"{len(data)} samples x r={args.r} -> {X.shape[0]} rows")


def cmd_train(args) -> None:
    _, data, layout, scheme = _prepare(args)
    fz, X, y = _augment_features(args, data, layout, scheme)
    ens = SoftVotingEnsemble(EnsembleSpec()).fit(X, y)
    doc = {"config": _config(args), "features": fz.names_, "ensemble": ens.to_dict(),
           "training_accuracy": float(np.mean(ens.predict(fz.transform(data.features)) == data.labels))}
    _dump_json(_out(args) / "model.json", doc)
    _say("train", f"ensemble fitted on {X.shape[0]} rows, {X.shape[1]} features, "
                  f"training accuracy {doc['training_accuracy']:.3f}")


def cmd_evaluate(args) -> None:
    ds, data, layout, scheme = _prepare(args)
    aug = AugmentationConfig(r=args.r, sigma_max=args.sigma_max, seed=args.seed, space=args.augment_space)
    report = loocv_evaluate(data, EnsembleSpec(), aug, k=args.k, seed=args.seed,
                            featurizer=lambda: SpectralFeaturizer(layout, scheme), n_jobs=args.jobs,
                            extra_config={"cli": _config(args), "dataset_hash": ds.content_hash(),
                                          "scheme": scheme.to_dict() | {"weights": None}})
    out = _out(args)
    _dump_json(out / "report.json", report.to_dict())
    write_atomic(out / "trials.csv", "# config: " + json.dumps(_config(args), sort_keys=True) + "\n"
                 + report.trials_csv())
    _say("evaluate", f"{len(report.trials)} trials, accuracy {report.accuracy:.3f}, recall {report.recall:.3f}")


def cmd_calibrate(args) -> None:
    models = calibrate_fixtures(TARGET_TRENDS)
    doc = {"config": _config(args), "constraints": [c.describe() for c in TARGET_TRENDS],
           "models": models_to_dict(models), "models_hash": stable_hash(models_to_dict(models))}
    out = _out(args)
    _dump_json(out / "fixtures.json", doc)
    grid, slopes = trend_slopes(models)
    names = sorted(slopes)
    _csv(out / "slopes.csv", _config(args), ["freq_mhz", *(f"{n}_db_per_ppm" for n in names)],
         [[float(f), *(float(slopes[n][i]) for n in names)] for i, f in enumerate(grid)])
    _say("calibrate", f"{len(TARGET_TRENDS)} constraints satisfied")


def cmd_regress(args) -> None:
    ds = load_dataset(args.manifest)
    table = salt_regression(ds)
    out = _out(args)
    _dump_json(out / "regression.json", {"config": _config(args), "dataset_hash": ds.content_hash(),
                                         "r2": table})
    _csv(out / "regression.csv", _config(args), ["ingredient", "Diff800", "Diff2300"],
         [[salt, row["Diff800"], row["Diff2300"]] for salt, row in table.items()])
    cells = ", ".join(f"{s}~{f}={v:.3f}" for s, row in table.items() for f, v in row.items())
    _say("regress", cells)


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise ConfigurationError("no command given")
        if getattr(args, "r", 1) < 1 or getattr(args, "k", 1) < 1:
            raise ConfigurationError("--r and --k must be >= 1")
        HANDLERS[args.command](args)
    except ConfigurationError as exc:
        print(f"soilscan: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LoadError as exc:
        print(f"soilscan: load error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    except CalibrationError as exc:
        print(f"soilscan: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (FoldError, DegenerateFitError, DomainError, AlignmentError, FeatureUnavailableError,
            EmptyFeatureError, ContractError, AcquisitionError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"soilscan: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
