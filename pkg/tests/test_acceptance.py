"""Acceptance criteria 1-7. Each test prints one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary.
"""

import hashlib
import json
import math
import shutil
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soilscan.acquisition import COLLECTED, RECOLLECTED, SKIPPED, ScriptedStream, SweepConfig, run_sweep
from soilscan.calibration import TARGET_TRENDS, calibrate_fixtures
from soilscan.cli import EXIT_OK, main
from soilscan.dataset import (
    generate_controlled_set,
    generate_field_like_set,
    labeled_raw,
    load_dataset,
    manifest_from_table,
    salt_regression,
)
from soilscan.features import FeatureScheme, SpectralFeaturizer
from soilscan.learning.ensemble import EnsembleSpec
from soilscan.learning.validation import (
    AugmentationConfig,
    LabeledDataset,
    augment,
    loocv_evaluate,
    report_metrics,
    train_fold,
    trial_seed,
)
from soilscan.medium import CONSTANTS, attenuation_coefficient, loss_tangent, phase_coefficient
from soilscan.propagation import ConstantMedium, PathGeometry, TransmitConfig, received_power
from soilscan.spectrum import HIGH_BAND, LOW_BAND, dbm_to_mw, mw_to_dbm


def run(*argv):
    return main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def field_featurizer(layout):
    return lambda: SpectralFeaturizer(layout, FeatureScheme.aggregate(10.0))


def test_criterion_1_metric_arithmetic(verdict):
    table = {"TN": 0.36, "FP": 0.18, "FN": 0.091, "TP": 0.36}
    report_metrics(table)
    t0 = time.perf_counter()
    m = report_metrics(table)
    ms = 1e3 * (time.perf_counter() - t0)
    ok = abs(m.accuracy - 0.72) <= 0.005 and abs(m.recall - 0.80) <= 0.01 and ms < 1.0
    assert verdict(1, "reported confusion table -> accuracy/recall", ok,
                   f"accuracy {m.accuracy:.4f} (0.72+-0.005), recall {m.recall:.4f} (0.80+-0.01), {ms:.3f} ms")


def test_criterion_2_regression_selectivity(verdict):
    t0 = time.perf_counter()
    models = calibrate_fixtures(TARGET_TRENDS)
    r2 = salt_regression(generate_controlled_set(seed=0, models=models))
    secs = time.perf_counter() - t0
    pb800, nacl2300, pb2300 = r2["Pb(NO3)2"]["Diff800"], r2["NaCl"]["Diff2300"], r2["Pb(NO3)2"]["Diff2300"]
    ok = pb800 >= 0.9 and nacl2300 >= 0.9 and pb2300 <= 0.2 and secs < 10
    assert verdict(2, "calibrated controlled regression", ok,
                   f"Pb~Diff800 {pb800:.3f} (>=0.9), NaCl~Diff2300 {nacl2300:.3f} (>=0.9), "
                   f"Pb~Diff2300 {pb2300:.3f} (<=0.2), NaCl~Diff800 {r2['NaCl']['Diff800']:.3f}, {secs:.1f} s")


def _null_accuracy(n_seeds=20, k=100):
    # labels of a field-like feature table shuffled per seed; feature-space augmentation at r=10
    data, layout = labeled_raw(generate_field_like_set(seed=0))
    F = SpectralFeaturizer(layout, FeatureScheme.aggregate(100.0)).fit(data.features).transform(data.features)
    accs = []
    for s in range(n_seeds):
        pb = np.random.default_rng(1000 + s).permutation(data.pb_ppm)
        shuffled = LabeledDataset.from_ppm(F, pb)
        rep = loocv_evaluate(shuffled, EnsembleSpec(), AugmentationConfig(r=10, sigma_max=3.0, space="feature"),
                             k=k, seed=s)
        accs.append(rep.accuracy)
    return accs


def _external_format_copy(tmp_path):
    # stand-in for a local copy of an external dataset: property table plus two-column spectra
    src = generate_field_like_set(seed=11)
    raw = tmp_path / "external" / "spectra"
    raw.mkdir(parents=True)
    lines = ["Sample,Pb_ppm,Moisture,pH,Organic"]
    for r in src.records:
        lines.append(f"{r.id},{r.pb_ppm!r},{r.moisture!r},{r.metadata['ph']!r},{r.metadata['organic_pct']!r}")
        for band, s in r.spectra.items():
            body = "\n".join(f"{f!r},{p!r}" for f, p in zip(s.freqs_mhz.tolist(), s.power_dbm.tolist()))
            (raw / f"{r.id}-{band}.txt").write_text("Frequency (MHz),Power (dBm)\n" + body + "\n")
    table = tmp_path / "external" / "soil_properties.csv"
    table.write_text("\n".join(lines) + "\n")
    return manifest_from_table(table, raw, tmp_path / "ingested",
                               columns={"id": "Sample", "pb_ppm": "Pb_ppm", "moisture": "Moisture"},
                               pattern="{id}-{band}.txt")


@pytest.mark.slow
def test_criterion_3_field_substitutes(verdict, tmp_path):
    # (a) separable field-like set, default r=200 with raw-spectrum augmentation
    data, layout = labeled_raw(generate_field_like_set(seed=0, separable=True))
    rep = loocv_evaluate(data, EnsembleSpec(), AugmentationConfig(r=200), k=1, seed=0,
                         featurizer=field_featurizer(layout))
    ok_a = rep.accuracy == 1.0 and rep.recall == 1.0

    # (b) label-shuffled null data
    t0 = time.perf_counter()
    accs = _null_accuracy()
    secs = time.perf_counter() - t0
    mean = float(np.mean(accs))
    ok_b = 0.35 <= mean <= 0.65 and secs < 300

    # (c) adapter + evaluate end to end
    manifest = _external_format_copy(tmp_path)
    out = tmp_path / "report"
    code = run("evaluate", "--manifest", manifest, "--out", out, "--r", 20, "--k", 2, "--seed", 3)
    doc = json.loads((out / "report.json").read_text()) if code == EXIT_OK else {}
    trials = (out / "trials.csv").read_text().splitlines() if code == EXIT_OK else []
    ok_c = (code == EXIT_OK and {"confusion", "accuracy", "recall", "config", "n_trials"} <= set(doc)
            and set(doc["confusion"]) == {"TN", "FP", "FN", "TP"} and doc["n_trials"] == 44
            and len(trials) == 2 + 44 and abs(sum(doc["confusion"].values()) - 1) <= 1e-9)

    assert verdict(3, "field substitutes: separable / null / adapter", ok_a and ok_b and ok_c,
                   f"(a) acc {rep.accuracy:.3f} rec {rep.recall:.3f}; "
                   f"(b) null mean acc {mean:.3f} over {len(accs)} seeds in [0.35, 0.65], "
                   f"range {min(accs):.3f}-{max(accs):.3f}, {secs:.0f} s; "
                   f"(c) exit {code}, {doc.get('n_trials', 0)} trials")


def test_criterion_4_physics_invariants(verdict):
    counts = {}
    many = settings(max_examples=1000, database=None)

    def tally(name):
        counts[name] = counts.get(name, 0) + 1

    eps = st.floats(1.0, 80.0)
    freq = st.floats(1e8, 5e9)

    @many
    @given(eps, st.one_of(st.just(0.0), st.floats(1e-9, 10.0)), freq)
    def alpha_zero_iff_lossless(e, t, f):
        tally("alpha=0 iff tan=0")
        assert (attenuation_coefficient(e, t, f) == 0.0) == (t == 0.0)
        assert phase_coefficient(e, t, f) >= 2 * math.pi * f * math.sqrt(e) / CONSTANTS.c * (1 - 1e-15)

    @many
    @given(eps, st.floats(1e-6, 0.05), freq)
    def small_loss_taylor(e, t, f):
        tally("small-loss Taylor")
        approx = math.pi * f * math.sqrt(e) * t / CONSTANTS.c
        assert attenuation_coefficient(e, t, f) == pytest.approx(approx, rel=1e-3)

    @many
    @given(eps, st.floats(0.0, 5.0), st.floats(1e-4, 2.0), st.floats(1e8, 4e9), st.floats(1.001, 3.0))
    def tan_falls_with_f(e, loss, sigma, f, ratio):
        tally("tan 1/f monotone")
        assert loss_tangent(e, loss, sigma, f * ratio) < loss_tangent(e, loss, sigma, f)

    media = {"a": ConstantMedium(3.0, 0.01), "b": ConstantMedium(10.0, 0.3), "c": ConstantMedium(25.0, 1.2)}

    @many
    @given(st.lists(st.tuples(st.sampled_from("abc"), st.floats(1e-4, 0.5)), min_size=1, max_size=6),
           st.randoms(use_true_random=False), st.floats(700.0, 2500.0))
    def segment_order(segments, rnd, f):
        tally("segment order")
        shuffled = list(segments)
        rnd.shuffle(shuffled)
        p1 = received_power(TransmitConfig(), PathGeometry(tuple(segments)), media, f)
        p2 = received_power(TransmitConfig(), PathGeometry(tuple(shuffled)), media, f)
        assert p1 == pytest.approx(p2, rel=1e-12, abs=1e-12)

    @many
    @given(st.floats(-200.0, 100.0))
    def dbm_round_trip(p):
        tally("dBm round trip")
        assert abs(mw_to_dbm(dbm_to_mw(p)) - p) <= 1e-12 * max(1.0, abs(p))

    t0 = time.perf_counter()
    failures = []
    for check in (alpha_zero_iff_lossless, small_loss_taylor, tan_falls_with_f, segment_order, dbm_round_trip):
        try:
            check()
        except Exception as exc:  # reported in the verdict line
            failures.append(f"{check.__name__}: {type(exc).__name__}")
    secs = time.perf_counter() - t0
    ok = not failures and min(counts.values()) >= 1000 and len(counts) == 5 and secs < 30
    assert verdict(4, "physics property suite", ok,
                   f"{min(counts.values())}+ cases each over {len(counts)} properties, {secs:.1f} s"
                   + (f"; failed {failures}" if failures else ""))


def test_criterion_5_acquisition_traces(verdict):
    t0 = time.perf_counter()
    cfg = SweepConfig(LOW_BAND)
    spectrum, trace = run_sweep(ScriptedStream({750.0: 4, 900.0: 5}), cfg, 0)
    expected = []
    for f in cfg.grid().tolist():
        if f == 750.0:
            expected += [(f, RECOLLECTED, i) for i in range(4)] + [(f, COLLECTED, 4)]
        elif f == 900.0:
            expected += [(f, RECOLLECTED, i) for i in range(5)] + [(f, SKIPPED, 5)]
        else:
            expected.append((f, COLLECTED, 0))
    got = [(e.freq_mhz, e.action, e.attempt) for e in trace.events]
    high, high_trace = run_sweep(ScriptedStream(), SweepConfig(HIGH_BAND), 0)
    secs = time.perf_counter() - t0
    ok = (got == expected and trace.skipped_freqs == (900.0,) and len(spectrum) == 600
          and cfg.grid().size == 601 and SweepConfig(HIGH_BAND).grid().size == 401
          and len(high) == 401 and high_trace.count(RECOLLECTED) == 0 and secs < 5
          and (cfg.fft_size, cfg.avg_points, cfg.std_threshold_dbm, cfg.max_retries, cfg.step_mhz)
          == (1024, 100, 0.02, 5, 0.5))
    assert verdict(5, "acquisition 0/4/5-failure traces and grids", ok,
                   f"{len(got)} events match, skipped {list(trace.skipped_freqs)}, grids 601/401, {secs:.2f} s")


def test_criterion_6_determinism(verdict, tmp_path):
    def pipeline(root, jobs):
        runs = [
            ("simulate", "--design", "field", "--noise-db", 0.5, "--out", root / "field"),
            ("simulate", "--noise-db", 0.05, "--out", root / "ctrl"),
            ("sweep", "--manifest", root / "field" / "manifest.json", "--sample", "F3", "--band", "high",
             "--jitter-db", 0.01, "--out", root / "sweep"),
            ("featurize", "--manifest", root / "field" / "manifest.json", "--scheme", "weighted",
             "--out", root / "feat"),
            ("augment", "--manifest", root / "field" / "manifest.json", "--r", 20, "--out", root / "aug"),
            ("train", "--manifest", root / "field" / "manifest.json", "--r", 20, "--out", root / "train"),
            ("evaluate", "--manifest", root / "field" / "manifest.json", "--r", 10, "--k", 2,
             "--jobs", jobs, "--out", root / "eval"),
            ("calibrate", "--out", root / "cal"),
            ("regress", "--manifest", root / "ctrl" / "manifest.json", "--out", root / "reg"),
        ]
        for argv in runs:
            assert run(*argv, "--seed", 5) == EXIT_OK
        return {p.relative_to(root).as_posix(): sha(p) for p in sorted(root.rglob("*")) if p.is_file()}

    # artifacts echo their input paths, so every run writes to the same directory
    root = tmp_path / "run"
    a = pipeline(root, 1)
    first = load_dataset(root / "field" / "manifest.json").content_hash()
    kept = [(root / "eval" / name).read_text() for name in ("trials.csv", "report.json")]
    shutil.rmtree(root)
    b = pipeline(root, 1)
    same = a == b and load_dataset(root / "field" / "manifest.json").content_hash() == first
    shutil.rmtree(root)
    c = pipeline(root, 4)
    # only the echoed --jobs value may differ between sequential and parallel runs
    differs = sorted(k for k in a if a[k] != c.get(k))
    now = [(root / "eval" / name).read_text() for name in ("trials.csv", "report.json")]
    reports = [json.loads(kept[1]), json.loads(now[1])]
    for rep in reports:
        rep["config"]["cli"].pop("jobs")
    parallel_same = (kept[0].splitlines()[1:] == now[0].splitlines()[1:] and reports[0] == reports[1]
                     and set(differs) <= {"eval/report.json", "eval/trials.csv"})
    ok = same and parallel_same
    assert verdict(6, "byte-identical reruns, parallel == sequential", ok,
                   f"{len(a)} artifacts hashed, rerun identical {same}, parallel identical {parallel_same}")


def test_criterion_7_augmentation_contract(verdict):
    data, layout = labeled_raw(generate_field_like_set(seed=0))
    aug = AugmentationConfig(r=200)
    full = augment(data, aug)
    ratio_ok = full.labels.mean() == data.labels.mean()
    spec = EnsembleSpec()
    probe = data.features[:4] + 0.1
    rows, leaks = set(), 0
    for held_out in (0, 7, 21):
        seed = trial_seed(0, 0, held_out)
        clean = train_fold(data, held_out, spec, aug, seed, field_featurizer(layout))
        X = data.features.copy()
        X[held_out] = 1e6
        poisoned = LabeledDataset(X, data.labels, data.pb_ppm, data.sample_ids)
        dirty = train_fold(poisoned, held_out, spec, aug, seed, field_featurizer(layout))
        rows.add(clean.train_rows)
        leaks += int(not np.array_equal(clean.predict_proba(probe), dirty.predict_proba(probe)))
    ok = len(full) == 4400 and rows == {4200} and ratio_ok and leaks == 0
    assert verdict(7, "augmentation contract", ok,
                   f"22 x r=200 -> {len(full)} rows, per-fold training rows {sorted(rows)} (21 x 200), "
                   f"label ratio kept {ratio_ok}, leaking folds {leaks}")
