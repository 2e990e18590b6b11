"""Dataset manifests, the controlled spiking design and synthetic field-like sets.

Manifest layout (``schema_version`` 1)::

    {
      "schema_version": 1,
      "step_mhz": 0.5,
      "provenance": {...},
      "samples": [
        {"id": "S1", "spectra": {"low": "spectra/S1_low.csv", "high": "..."},
         "pb_ppm": 0.0, "nacl_ppm": 50.0, "moisture": 0.2, "metadata": {...}}
      ]
    }

Spectrum paths are relative to the manifest's directory. ``pb_ppm`` is the
screening quantity: designed Pb(NO3)2 ppm for controlled samples, pXRF-style
Pb ppm for field samples.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .calibration import NACL, PB_NITRATE, calibrated_salt_models
from .errors import ConfigurationError, DomainError, LoadError
from .features import RawLayout, diff800, diff2300
from .learning.validation import LabeledDataset, SCREENING_THRESHOLD_PPM, linear_regression_r2
from .medium import DEFAULT_DIELECTRIC, DielectricModel, SaltResponseModel, SoilSample
from .propagation import DEFAULT_PATH, NoiseModel, PathGeometry, TransmitConfig, simulate_spectrum, stable_hash
from .spectrum import BANDS, Spectrum, write_atomic

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PB_MASS_FRACTION = 207.2 / 331.2  # Pb share of Pb(NO3)2 by mass, about 0.6256


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampleRecord:
    id: str
    spectra: Mapping[str, Spectrum]
    pb_ppm: float
    nacl_ppm: float = 0.0
    moisture: float = 0.0
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.pb_ppm >= 0:
            raise DomainError(f"sample {self.id}: pb_ppm must be >= 0")
        object.__setattr__(self, "spectra", dict(self.spectra))
        object.__setattr__(self, "metadata", dict(self.metadata))

    def fingerprint(self) -> dict:
        return {
            "id": self.id, "pb_ppm": self.pb_ppm, "nacl_ppm": self.nacl_ppm, "moisture": self.moisture,
            "metadata": self.metadata,
            "spectra": {b: [s.band_label, s.step_mhz, s.grid_start_mhz, s.freqs_mhz.tolist(), s.power_dbm.tolist()]
                        for b, s in sorted(self.spectra.items())},
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    records: tuple[SampleRecord, ...] = ()
    step_mhz: float = 0.5
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise DomainError(f"duplicate sample ids: {dup}")
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "provenance", dict(self.provenance))

    def __len__(self):
        return len(self.records)

    def __getitem__(self, sample_id: str) -> SampleRecord:
        for r in self.records:
            if r.id == sample_id:
                return r
        raise KeyError(sample_id)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def content_hash(self) -> str:
        """sha256 over records sorted by id, so row order does not matter."""
        recs = sorted(self.records, key=lambda r: r.id)
        return stable_hash({"step_mhz": self.step_mhz, "records": [r.fingerprint() for r in recs]})

    def where(self, predicate) -> "Dataset":
        return Dataset(tuple(r for r in self.records if predicate(r)), self.step_mhz, self.provenance)

    def spiked(self) -> "Dataset":
        """Drop the baseline rows of a controlled set."""
        return self.where(lambda r: r.metadata.get("role") != "baseline")


# --------------------------------------------------------------------------
# manifest io
# --------------------------------------------------------------------------


def save_dataset(ds: Dataset, directory: str | os.PathLike, name: str = "manifest.json") -> Path:
    """Write spectra CSVs plus a manifest under ``directory``; returns the manifest path."""
    root = Path(directory)
    (root / "spectra").mkdir(parents=True, exist_ok=True)
    samples = []
    for r in ds.records:
        paths = {}
        for band, s in sorted(r.spectra.items()):
            rel = Path("spectra") / f"{r.id}_{band}.csv"
            s.save(root / rel)
            paths[band] = rel.as_posix()
        samples.append({"id": r.id, "spectra": paths, "pb_ppm": r.pb_ppm, "nacl_ppm": r.nacl_ppm,
                        "moisture": r.moisture, "metadata": r.metadata})
    doc = {"schema_version": SCHEMA_VERSION, "step_mhz": ds.step_mhz, "provenance": ds.provenance,
           "content_hash": ds.content_hash(), "samples": samples}
    out = root / name
    write_atomic(out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out


def _read_manifest(path: Path) -> dict:
    if not path.is_file():
        raise LoadError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise LoadError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def load_dataset(manifest: str | os.PathLike) -> Dataset:
    """Load every spectrum referenced by a manifest and attach sample properties.

    Raises LoadError naming the sample and path for missing files, duplicate
    ids and spectra whose grid step differs from the declared ``step_mhz``.
    """
    path = Path(manifest)
    doc = _read_manifest(path)
    step = float(doc.get("step_mhz", 0.5))
    root = path.parent
    seen: set[str] = set()
    records = []
    for entry in doc.get("samples", []):
        sid = str(entry.get("id", ""))
        if not sid:
            raise LoadError(f"{path}: sample without id")
        if sid in seen:
            raise LoadError(f"{path}: duplicate sample id {sid!r}")
        seen.add(sid)
        spectra = {}
        for band, rel in sorted(entry.get("spectra", {}).items()):
            fp = root / rel
            if not fp.is_file():
                raise LoadError(f"sample {sid}: spectrum file not found: {fp}")
            try:
                s = Spectrum.load(fp, band_label=band if band in BANDS else None)
            except LoadError as exc:
                raise LoadError(f"sample {sid}: {exc}") from exc
            if abs(s.step_mhz - step) > 1e-9:
                raise LoadError(f"sample {sid}: {fp} has step {s.step_mhz} MHz, manifest declares {step} MHz")
            spectra[band] = s
        try:
            records.append(SampleRecord(sid, spectra, float(entry["pb_ppm"]), float(entry.get("nacl_ppm", 0.0)),
                                        float(entry.get("moisture", 0.0)), entry.get("metadata", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"sample {sid}: bad properties in {path} ({exc})") from exc
    return Dataset(tuple(records), step, doc.get("provenance", {}))


def manifest_from_table(table: str | os.PathLike, spectra_dir: str | os.PathLike, out_dir: str | os.PathLike,
                        columns: Mapping[str, str] | None = None, bands: Sequence[str] = ("low", "high"),
                        step_mhz: float = 0.5, pattern: str = "{id}_{band}.csv") -> Path:
    """Adapter for a local copy of an external dataset.

    ``table`` is a CSV of per-sample properties; ``columns`` maps our keys
    (``id``, ``pb_ppm``, ``nacl_ppm``, ``moisture``) to its headers. Other
    columns become metadata. Each sample's spectra are two-column numeric
    files (frequency MHz, power dBm; an optional header row is skipped)
    found as ``pattern`` inside ``spectra_dir``. Writes a manifest plus
    converted spectra under ``out_dir`` and returns the manifest path.
    """
    cols = {"id": "id", "pb_ppm": "pb_ppm", "nacl_ppm": "nacl_ppm", "moisture": "moisture"}
    cols.update(columns or {})
    table = Path(table)
    if not table.is_file():
        raise LoadError(f"property table not found: {table}")
    with table.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    records = []
    for row in rows:
        if cols["id"] not in row or cols["pb_ppm"] not in row:
            raise LoadError(f"{table}: needs columns {cols['id']!r} and {cols['pb_ppm']!r}")
        sid = row[cols["id"]].strip()
        spectra = {}
        for band in bands:
            fp = Path(spectra_dir) / pattern.format(id=sid, band=band)
            spectra[band] = _read_two_column(fp, band, step_mhz, sid)
        used = {cols[k] for k in cols}
        meta = {k: _maybe_float(v) for k, v in row.items() if k not in used}
        try:
            records.append(SampleRecord(
                sid, spectra, float(row[cols["pb_ppm"]]),
                float(row.get(cols["nacl_ppm"]) or 0.0), float(row.get(cols["moisture"]) or 0.0), meta))
        except ValueError as exc:
            raise LoadError(f"sample {sid}: {exc}") from exc
    ds = Dataset(tuple(records), step_mhz, {"kind": "ingested", "source": str(table)})
    return save_dataset(ds, out_dir)


def _maybe_float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return v


def _read_two_column(fp: Path, band: str, step: float, sid: str) -> Spectrum:
    if not fp.is_file():
        raise LoadError(f"sample {sid}: spectrum file not found: {fp}")
    data = []
    with fp.open(newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                data.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise LoadError(f"sample {sid}: {fp} line {i + 1} is not numeric")
    arr = np.array(data, dtype=float).reshape(-1, 2)
    start = BANDS[band].start_mhz if band in BANDS else float(arr[0, 0])
    try:
        return Spectrum(arr[:, 0], arr[:, 1], band, step, start, {"kind": "ingested", "source": str(fp)})
    except (DomainError, ValueError) as exc:
        raise LoadError(f"sample {sid}: {fp}: {exc}") from exc


# --------------------------------------------------------------------------
# controlled spiking design
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignRow:
    """Cartesian block of the spiking design.

    Every NaCl level is combined with every Pb(NO3)2 level; sample ids run
    consecutively from ``first_id``.
    """

    first_id: int
    nacl_ppm: tuple[float, ...]
    pb_nitrate_ppm: tuple[float, ...]
    base_mass: float = 1600.0

    def __post_init__(self):
        if any(v < 0 for v in (*self.nacl_ppm, *self.pb_nitrate_ppm)):
            raise DomainError("design concentrations must be non-negative")
        if not self.nacl_ppm or not self.pb_nitrate_ppm:
            raise DomainError("each design row needs at least one level per salt")

    def expand(self) -> list[tuple[int, float, float, float]]:
        combos = [(n, p) for n in self.nacl_ppm for p in self.pb_nitrate_ppm]
        return [(self.first_id + i, n, p, self.base_mass) for i, (n, p) in enumerate(combos)]


@dataclass(frozen=True)
class SpikingDesign:
    rows: tuple[DesignRow, ...]

    def expand(self) -> list[tuple[int, float, float, float]]:
        out = [e for row in self.rows for e in row.expand()]
        ids = [e[0] for e in out]
        if len(set(ids)) != len(ids):
            raise DomainError("design rows overlap in sample ids")
        return out


SPIKING_DESIGN = SpikingDesign((
    DesignRow(1, (0, 50, 100, 200, 400, 1000, 2000), (0,)),
    DesignRow(8, (0,), (200, 400, 1000, 2000)),
    DesignRow(15, (100, 400, 2000), (100, 400, 2000)),
))


@dataclass(frozen=True)
class SimSetup:
    step_mhz: float = 0.5
    moisture: float = 0.2
    bands: tuple[str, ...] = ("low", "high")
    path: PathGeometry = DEFAULT_PATH
    dielectric: DielectricModel = DEFAULT_DIELECTRIC
    noise: NoiseModel = NoiseModel()
    gain_dbm: float = 6.0

    def config(self, band: str) -> TransmitConfig:
        if band not in BANDS:
            raise ConfigurationError(f"unknown band {band!r}")
        return TransmitConfig(band=BANDS[band], step_mhz=self.step_mhz, gain_dbm=self.gain_dbm)

    def to_dict(self) -> dict:
        return {"step_mhz": self.step_mhz, "moisture": self.moisture, "bands": list(self.bands),
                "path": [list(s) for s in self.path.segments], "noise_db": self.noise.sigma_db,
                "gain_dbm": self.gain_dbm}


def _sample_seed(seed: int, index: int, band: str) -> int:
    band_no = sorted(BANDS).index(band) if band in BANDS else 99
    return int(np.random.SeedSequence([int(seed), int(index), band_no]).generate_state(1)[0])


def _simulate_record(sid: str, index: int, sample: SoilSample, setup: SimSetup, seed: int,
                     models: Mapping[str, SaltResponseModel], pb_ppm: float, meta: Mapping) -> SampleRecord:
    spectra = {b: simulate_spectrum(setup.config(b), setup.path, sample, setup.noise,
                                    _sample_seed(seed, index, b), models, setup.dielectric)
               for b in setup.bands}
    return SampleRecord(sid, spectra, pb_ppm, sample.concentration(NACL), sample.moisture, meta)


def generate_controlled_set(design: SpikingDesign = SPIKING_DESIGN, setup: SimSetup = SimSetup(), seed: int = 0,
                            models: Mapping[str, SaltResponseModel] | None = None) -> Dataset:
    """Simulated spectra for every design sample plus two baselines.

    ``B0`` is dry base soil, ``B1`` base soil with the design moisture. The
    spiked samples ``S<id>`` all carry the design moisture.
    """
    models = calibrated_salt_models() if models is None else models
    records = [
        _simulate_record("B0", 0, SoilSample(moisture=0.0), setup, seed, models, 0.0, {"role": "baseline"}),
        _simulate_record("B1", 1, SoilSample(moisture=setup.moisture), setup, seed, models, 0.0,
                         {"role": "baseline"}),
    ]
    for sid, nacl, pb, mass in design.expand():
        sample = SoilSample.from_ppm({NACL: nacl, PB_NITRATE: pb}, moisture=setup.moisture, base_mass=mass)
        records.append(_simulate_record(f"S{sid}", 1 + sid, sample, setup, seed, models, float(pb),
                                        {"role": "spiked", "design_id": sid}))
    prov = {"kind": "simulated", "generator": "controlled", "seed": seed, "setup": setup.to_dict(),
            "models_hash": stable_hash(dict(models))}
    return Dataset(tuple(records), setup.step_mhz, prov)


# --------------------------------------------------------------------------
# synthetic field-like set
# --------------------------------------------------------------------------

FIELD_RANGES = {
    "pb_ppm": (36.0, 1550.0),
    "moisture": (0.01, 0.40),
    "organic_pct": (4.0, 26.0),
    "ph": (4.70, 7.07),
    "total_salt_g": (58.0, 710.0),
}


def generate_field_like_set(n: int = 22, n_above: int = 10, seed: int = 0, separable: bool = False,
                            separation_db: float = 10.0, setup: SimSetup = SimSetup(noise=NoiseModel(0.5)),
                            threshold: float = SCREENING_THRESHOLD_PPM,
                            models: Mapping[str, SaltResponseModel] | None = None) -> Dataset:
    """Synthetic stand-in for field samples, drawn uniformly within field ranges.

    Not measured data. Pb is drawn below the threshold for ``n - n_above``
    samples and at or above it for the rest; other properties are uniform
    in :data:`FIELD_RANGES`. Total salt is mapped to NaCl ppm of the base
    mass. With ``separable`` every above-threshold low-band spectrum is
    lifted by ``separation_db``, giving a set any sound classifier splits
    perfectly.
    """
    if not 0 <= n_above <= n:
        raise DomainError("n_above must lie in [0, n]")
    models = calibrated_salt_models() if models is None else models
    rng = np.random.default_rng(seed)
    lo, hi = FIELD_RANGES["pb_ppm"]
    pb = np.concatenate([rng.uniform(lo, threshold, n - n_above), rng.uniform(threshold, hi, n_above)])
    pb = pb[rng.permutation(n)]
    draws = {k: rng.uniform(*FIELD_RANGES[k], n) for k in ("moisture", "organic_pct", "ph", "total_salt_g")}
    records = []
    for i in range(n):
        base_mass = 1600.0
        nacl = 1e6 * draws["total_salt_g"][i] / (base_mass * 1000.0)
        meta = {"synthetic": True, "organic_pct": float(draws["organic_pct"][i]), "ph": float(draws["ph"][i]),
                "total_salt_g": float(draws["total_salt_g"][i])}
        sample = SoilSample.from_ppm({NACL: nacl, PB_NITRATE: pb[i] / PB_MASS_FRACTION},
                                     moisture=float(draws["moisture"][i]), base_mass=base_mass)
        rec = _simulate_record(f"F{i + 1}", i, sample, setup, seed, models, float(pb[i]), meta)
        if separable and pb[i] >= threshold and "low" in rec.spectra:
            spectra = dict(rec.spectra)
            spectra["low"] = spectra["low"].shifted(separation_db)
            rec = SampleRecord(rec.id, spectra, rec.pb_ppm, rec.nacl_ppm, rec.moisture, rec.metadata)
        records.append(rec)
    prov = {"kind": "synthetic-field-like", "seed": seed, "n_above": n_above, "separable": separable,
            "separation_db": separation_db if separable else 0.0, "setup": setup.to_dict()}
    return Dataset(tuple(records), setup.step_mhz, prov)


# --------------------------------------------------------------------------
# bridges to features and learning
# --------------------------------------------------------------------------


def labeled_raw(ds: Dataset, bands: Iterable[str] = ("low", "high"),
                threshold: float = SCREENING_THRESHOLD_PPM) -> tuple[LabeledDataset, RawLayout]:
    """Raw spectra matrix (band blocks side by side) with 200 ppm labels."""
    bands = list(bands)
    missing = [(r.id, b) for r in ds.records for b in bands if b not in r.spectra]
    if missing:
        raise ConfigurationError(f"samples lack requested bands: {missing[:5]}")
    layout, raw = RawLayout.from_spectra({b: [r.spectra[b] for r in ds.records] for b in bands})
    data = LabeledDataset.from_ppm(raw, [r.pb_ppm for r in ds.records], ds.ids, layout.column_names(), threshold)
    return data, layout


def diff_features(ds: Dataset) -> dict[str, np.ndarray]:
    return {
        "Diff800": np.array([diff800(r.spectra["low"]) for r in ds.records]),
        "Diff2300": np.array([diff2300(r.spectra["high"]) for r in ds.records]),
    }


def salt_regression(ds: Dataset) -> dict[str, dict[str, float]]:
    """R^2 of each salt against each difference feature over the spiked samples.

    Layout ``{salt: {feature: r2}}``, salts ``Pb(NO3)2`` and ``NaCl``.
    """
    spiked = ds.spiked()
    feats = diff_features(spiked)
    targets = {PB_NITRATE: np.array([r.pb_ppm for r in spiked.records]),
               NACL: np.array([r.nacl_ppm for r in spiked.records])}
    return {salt: {name: linear_regression_r2(x, y).r2 for name, x in feats.items()} for salt, y in targets.items()}
