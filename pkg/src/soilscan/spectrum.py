"""Power spectra on a fixed frequency grid, with CSV + sidecar persistence."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import AlignmentError, DomainError, FeatureUnavailableError, LoadError

GRID_TOL = 1e-6  # MHz
CSV_HEADER = ("freq_mhz", "power_dbm")


@dataclass(frozen=True)
class Band:
    name: str
    start_mhz: float
    end_mhz: float

    def __post_init__(self):
        if not self.start_mhz < self.end_mhz:
            raise DomainError(f"band {self.name}: start must be below end")

    def grid(self, step_mhz: float) -> np.ndarray:
        if not step_mhz > 0:
            raise DomainError("step_mhz must be > 0")
        n = math.floor((self.end_mhz - self.start_mhz) / step_mhz + 1e-9) + 1
        return self.start_mhz + step_mhz * np.arange(n)


LOW_BAND = Band("low", 700.0, 1000.0)
HIGH_BAND = Band("high", 2300.0, 2500.0)
BANDS = {"low": LOW_BAND, "high": HIGH_BAND}


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Received power (dBm) at grid frequencies (MHz).

    Frequencies sit on ``grid_start_mhz + k * step_mhz``; points may be
    missing (skipped during acquisition) but never off-grid.
    """

    freqs_mhz: np.ndarray
    power_dbm: np.ndarray
    band_label: str
    step_mhz: float
    grid_start_mhz: float
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        f = _readonly(self.freqs_mhz)
        p = _readonly(self.power_dbm)
        object.__setattr__(self, "freqs_mhz", f)
        object.__setattr__(self, "power_dbm", p)
        if f.shape != p.shape or f.ndim != 1:
            raise DomainError("freqs and power must be 1-D arrays of equal length")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise DomainError("frequencies must be strictly increasing")
        if not self.step_mhz > 0:
            raise DomainError("step_mhz must be > 0")
        k = (f - self.grid_start_mhz) / self.step_mhz
        if f.size and np.max(np.abs(k - np.round(k))) * self.step_mhz > GRID_TOL:
            raise AlignmentError(f"spectrum {self.band_label}: frequencies are off the {self.step_mhz} MHz grid")
        object.__setattr__(self, "provenance", dict(self.provenance))

    @classmethod
    def on_band(cls, band: Band, step_mhz: float, power_dbm, provenance: Mapping | None = None) -> "Spectrum":
        return cls(band.grid(step_mhz), power_dbm, band.name, step_mhz, band.start_mhz, provenance or {})

    def __len__(self):
        return self.freqs_mhz.size

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return (self.same_grid(other) and np.array_equal(self.freqs_mhz, other.freqs_mhz)
                and np.array_equal(self.power_dbm, other.power_dbm))

    __hash__ = None

    def same_grid(self, other: "Spectrum") -> bool:
        return (self.band_label == other.band_label
                and math.isclose(self.step_mhz, other.step_mhz, abs_tol=1e-12)
                and math.isclose(self.grid_start_mhz, other.grid_start_mhz, abs_tol=GRID_TOL))

    def grid_index(self, f_mhz) -> np.ndarray:
        return np.round((np.asarray(f_mhz, dtype=float) - self.grid_start_mhz) / self.step_mhz).astype(int)

    def resolve(self, f_mhz: float) -> float:
        """Nearest grid frequency to ``f_mhz`` that is present in the spectrum."""
        k = int(np.round((f_mhz - self.grid_start_mhz) / self.step_mhz))
        grid_f = self.grid_start_mhz + k * self.step_mhz
        if abs(grid_f - f_mhz) > self.step_mhz / 2 + GRID_TOL:
            raise FeatureUnavailableError(f"{f_mhz} MHz is off grid")
        idx = np.flatnonzero(self.grid_index(self.freqs_mhz) == k)
        if idx.size == 0:
            raise FeatureUnavailableError(f"frequency {f_mhz} MHz (grid point {grid_f:g} MHz) is missing")
        return float(self.freqs_mhz[idx[0]])

    def power_at(self, f_mhz: float) -> float:
        g = self.resolve(f_mhz)
        return float(self.power_dbm[np.searchsorted(self.freqs_mhz, g)])

    def drop(self, freqs_mhz) -> "Spectrum":
        """Copy without the given grid frequencies (used to mimic skips)."""
        kill = set(self.grid_index(freqs_mhz).tolist())
        keep = np.array([k not in kill for k in self.grid_index(self.freqs_mhz).tolist()], dtype=bool)
        return Spectrum(self.freqs_mhz[keep], self.power_dbm[keep], self.band_label, self.step_mhz,
                        self.grid_start_mhz, self.provenance)

    def shifted(self, offset_db: float) -> "Spectrum":
        return Spectrum(self.freqs_mhz, self.power_dbm + offset_db, self.band_label, self.step_mhz,
                        self.grid_start_mhz, self.provenance)

    def metadata(self) -> dict:
        return {
            "band": self.band_label,
            "step_mhz": self.step_mhz,
            "grid_start_mhz": self.grid_start_mhz,
            "points": len(self),
            "provenance": dict(self.provenance),
        }

    # ------------------------------------------------------------------ io

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        for f, p in zip(self.freqs_mhz.tolist(), self.power_dbm.tolist()):
            buf.write(f"{f!r},{p!r}\n")
        return buf.getvalue()

    def save(self, path: str | os.PathLike) -> Path:
        """Write ``path`` (CSV) and ``path + '.meta.json'`` atomically."""
        path = Path(path)
        write_atomic(path, self.to_csv_text())
        write_atomic(sidecar_path(path), json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | os.PathLike, band_label: str | None = None,
             step_mhz: float | None = None, grid_start_mhz: float | None = None) -> "Spectrum":
        """Read a spectrum CSV; grid metadata comes from the sidecar unless given."""
        path = Path(path)
        if not path.is_file():
            raise LoadError(f"spectrum file not found: {path}")
        meta = {}
        side = sidecar_path(path)
        if side.is_file():
            meta = json.loads(side.read_text())
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(r.strip() for r in rows[0]) != CSV_HEADER:
            raise LoadError(f"{path}: expected header {','.join(CSV_HEADER)}")
        try:
            data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float).reshape(-1, 2)
        except ValueError as exc:
            raise LoadError(f"{path}: {exc}") from exc
        band_label = band_label or meta.get("band")
        step = step_mhz if step_mhz is not None else meta.get("step_mhz")
        if step is None and data.shape[0] > 1:
            step = float(np.min(np.diff(data[:, 0])))
        start = grid_start_mhz if grid_start_mhz is not None else meta.get("grid_start_mhz")
        if start is None:
            start = BANDS[band_label].start_mhz if band_label in BANDS else float(data[0, 0])
        prov = meta.get("provenance") or {"kind": "ingested", "source": str(path)}
        try:
            return cls(data[:, 0], data[:, 1], band_label or "unknown", float(step), float(start), prov)
        except (AlignmentError, DomainError) as exc:
            raise LoadError(f"{path}: {exc}") from exc


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def subtract_background(measured: Spectrum, background: Spectrum) -> Spectrum:
    """Pointwise dB difference ``measured - background`` on identical grids."""
    if not measured.same_grid(background):
        raise AlignmentError("spectra use different grids "
                             f"({measured.band_label}/{measured.step_mhz} vs {background.band_label}/{background.step_mhz})")
    a, b = measured.freqs_mhz, background.freqs_mhz
    n = min(a.size, b.size)
    mismatch = np.flatnonzero(np.abs(a[:n] - b[:n]) > GRID_TOL)
    if mismatch.size or a.size != b.size:
        first = float(a[mismatch[0]]) if mismatch.size else float((a if a.size > n else b)[n])
        raise AlignmentError(f"grids differ starting at {first:g} MHz")
    prov = {
        "kind": "derived",
        "op": "subtract_background",
        "parents": [dict(measured.provenance), dict(background.provenance)],
    }
    return Spectrum(a, measured.power_dbm - background.power_dbm, measured.band_label,
                    measured.step_mhz, measured.grid_start_mhz, prov)


def dbm_to_mw(p_dbm):
    out = np.power(10.0, np.asarray(p_dbm, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def mw_to_dbm(p_mw):
    p = np.asarray(p_mw, dtype=float)
    if np.any(p <= 0):
        raise DomainError("power in mW must be > 0")
    out = 10.0 * np.log10(p)
    return float(out) if out.ndim == 0 else out
