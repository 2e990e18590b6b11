"""Spectrum -> feature vector transforms.

Every scheme is a linear map of the present power values, built by
:func:`scheme_matrix`. Bins are ``[start + k*I, start + (k+1)*I)`` anchored
at the grid start; the last partial bin is kept; bins with no present
frequency are dropped along with their names.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import AlignmentError, ConfigurationError, EmptyFeatureError, FeatureUnavailableError
from .spectrum import BANDS, GRID_TOL, Spectrum

log = logging.getLogger(__name__)

DIFF_FEATURES = {
    "diff800": ("low", 810.1, 790.1),
    "diff2300": ("high", 2408.6, 2401.1),
}

KINDS = ("diffpair", "hop", "aggregate", "weighted")
_SHORT = {"hop": "hop", "aggregate": "agg", "weighted": "wagg"}


def _diff(s: Spectrum, name: str) -> float:
    _, hi, lo = DIFF_FEATURES[name]
    g_hi, g_lo = s.resolve(hi), s.resolve(lo)
    log.debug("%s: %g MHz -> %g MHz, %g MHz -> %g MHz", name, hi, g_hi, lo, g_lo)
    return s.power_at(hi) - s.power_at(lo)


def diff800(s: Spectrum) -> float:
    """Power at 810.1 MHz minus power at 790.1 MHz (nearest grid points)."""
    return _diff(s, "diff800")


def diff2300(s: Spectrum) -> float:
    """Power at 2408.6 MHz minus power at 2401.1 MHz (nearest grid points)."""
    return _diff(s, "diff2300")


@dataclass(frozen=True, eq=False)
class FeatureScheme:
    """How to reduce a spectrum to features.

    ``weights`` (weighted kind only) holds one non-negative weight per grid
    point of the band, indexed from the grid start.
    """

    kind: str
    interval_mhz: float | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown feature scheme {self.kind!r}")
        if self.kind != "diffpair" and not (self.interval_mhz and self.interval_mhz > 0):
            raise ConfigurationError(f"{self.kind} needs a positive interval_mhz")
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ConfigurationError("weights must be finite and non-negative")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @classmethod
    def diffpair(cls):
        return cls("diffpair")

    @classmethod
    def hop(cls, interval_mhz: float):
        return cls("hop", interval_mhz)

    @classmethod
    def aggregate(cls, interval_mhz: float):
        return cls("aggregate", interval_mhz)

    @classmethod
    def weighted(cls, interval_mhz: float, weights=None):
        return cls("weighted", interval_mhz, weights)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "interval_mhz": self.interval_mhz,
                "weights": None if self.weights is None else self.weights.tolist()}


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray
    source: str = ""
    resolved: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError("feature names must be unique")
        if len(self.names) != len(self.values):
            raise ConfigurationError("names and values differ in length")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("feature values must be finite")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _grid_count(band_label: str, grid_start: float, step: float, freqs: np.ndarray) -> int:
    band = BANDS.get(band_label)
    if band is not None and abs(band.start_mhz - grid_start) < GRID_TOL:
        return band.grid(step).size
    return int(np.round((freqs[-1] - grid_start) / step)) + 1 if freqs.size else 0


def scheme_matrix(freqs: np.ndarray, band_label: str, grid_start: float, step: float,
                  scheme: FeatureScheme) -> tuple[np.ndarray, list[str], dict[str, float]]:
    """Linear map ``W`` with ``features = W @ power`` for the present ``freqs``.

    Also returns feature names and, for diff features, the grid frequency each
    nominal frequency resolved to.
    """
    freqs = np.asarray(freqs, dtype=float)
    k = np.round((freqs - grid_start) / step).astype(int)
    if scheme.kind == "diffpair":
        rows, names, resolved = [], [], {}
        for name, (band, hi, lo) in DIFF_FEATURES.items():
            if band != band_label:
                continue
            row = np.zeros(freqs.size)
            for f_nominal, sign in ((hi, 1.0), (lo, -1.0)):
                kk = int(np.round((f_nominal - grid_start) / step))
                hit = np.flatnonzero(k == kk)
                if hit.size == 0:
                    raise FeatureUnavailableError(
                        f"{name}: frequency {f_nominal} MHz (grid {grid_start + kk * step:g} MHz) is missing")
                row[hit[0]] = sign
                resolved[f"{f_nominal:g}"] = float(freqs[hit[0]])
            rows.append(row)
            names.append(name)
        if not rows:
            raise EmptyFeatureError(f"no difference feature defined for band {band_label!r}")
        return np.vstack(rows), names, resolved

    interval = float(scheme.interval_mhz)
    ratio = interval / step
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigurationError(f"interval {interval} MHz is not a positive multiple of the {step} MHz step")
    per_bin = int(round(ratio))
    bins = k // per_bin
    weights = None
    if scheme.kind == "weighted":
        if scheme.weights is None:
            raise ConfigurationError("weighted scheme has no weights; fit them on training spectra first")
        n_grid = _grid_count(band_label, grid_start, step, freqs)
        if scheme.weights.size != n_grid:
            raise ConfigurationError(f"weights have length {scheme.weights.size}, grid has {n_grid} points")
        weights = scheme.weights[k]
    rows, names = [], []
    for b in np.unique(bins).tolist():
        members = np.flatnonzero(bins == b)
        row = np.zeros(freqs.size)
        if scheme.kind == "hop":
            row[members[0]] = 1.0
        elif scheme.kind == "aggregate":
            row[members] = 1.0 / members.size
        else:
            w = weights[members]
            total = w.sum()
            if total <= 0:
                continue
            row[members] = w / total
        rows.append(row)
        names.append(f"{band_label}_{_SHORT[scheme.kind]}_{grid_start + b * interval:g}")
    if not rows:
        raise EmptyFeatureError("every feature bin is empty")
    return np.vstack(rows), names, {}


def featurize(s: Spectrum, scheme: FeatureScheme) -> FeatureVector:
    W, names, resolved = scheme_matrix(s.freqs_mhz, s.band_label, s.grid_start_mhz, s.step_mhz, scheme)
    source = str(s.provenance.get("config_hash") or s.provenance.get("source") or "")
    return FeatureVector(tuple(names), W @ s.power_dbm, source, resolved)


def check_same_grid(spectra: Sequence[Spectrum]) -> None:
    for s in spectra[1:]:
        if not s.same_grid(spectra[0]):
            raise AlignmentError(f"spectrum on grid {s.band_label}/{s.step_mhz}@{s.grid_start_mhz} "
                                 f"does not match {spectra[0].band_label}/{spectra[0].step_mhz}@{spectra[0].grid_start_mhz}")


def feature_matrix(spectra: Sequence[Spectrum], scheme: FeatureScheme) -> tuple[np.ndarray, list[str]]:
    """Stack featurized spectra; keep only features available in every spectrum."""
    if not spectra:
        return np.empty((0, 0)), []
    check_same_grid(spectra)
    vectors = [featurize(s, scheme).as_dict() for s in spectra]
    names = [n for n in vectors[0] if all(n in v for v in vectors[1:])]
    X = np.array([[v[n] for n in names] for v in vectors], dtype=float).reshape(len(spectra), len(names))
    return X, names


def variance_weights(power: np.ndarray, freqs: np.ndarray, grid_start: float, step: float,
                     n_grid: int) -> np.ndarray:
    """Per-grid-point across-sample variance, usable as weighted-scheme weights.

    ``power`` is (samples x len(freqs)); grid points not in ``freqs`` get 0.
    """
    power = np.asarray(power, dtype=float)
    w = np.zeros(n_grid)
    k = np.round((np.asarray(freqs) - grid_start) / step).astype(int)
    w[k] = power.var(axis=0) if power.shape[0] > 1 else 0.0
    return w


def fit_weighted_scheme(spectra: Sequence[Spectrum], interval_mhz: float) -> FeatureScheme:
    """Weighted scheme with variance weights fitted on (training) spectra only."""
    check_same_grid(spectra)
    common = _common_freqs(spectra)
    s0 = spectra[0]
    P = np.array([s.power_dbm[np.isin(np.round(s.freqs_mhz, 6), np.round(common, 6))] for s in spectra])
    n_grid = _grid_count(s0.band_label, s0.grid_start_mhz, s0.step_mhz, common)
    return FeatureScheme.weighted(interval_mhz, variance_weights(P, common, s0.grid_start_mhz, s0.step_mhz, n_grid))


def _common_freqs(spectra: Sequence[Spectrum]) -> np.ndarray:
    keys = set(np.round(spectra[0].freqs_mhz, 6).tolist())
    for s in spectra[1:]:
        keys &= set(np.round(s.freqs_mhz, 6).tolist())
    return np.array(sorted(keys))


# --------------------------------------------------------------------------
# raw-matrix featurizer used inside cross-validation folds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BandBlock:
    band_label: str
    grid_start: float
    step: float
    freqs: np.ndarray


@dataclass(frozen=True)
class RawLayout:
    """Column layout of a raw spectra matrix: band blocks side by side."""

    blocks: tuple[BandBlock, ...]

    @classmethod
    def from_spectra(cls, per_band: Mapping[str, Sequence[Spectrum]]) -> tuple["RawLayout", np.ndarray]:
        """Layout and raw matrix (samples x columns) over frequencies common to all samples."""
        blocks, parts = [], []
        for label, spectra in per_band.items():
            check_same_grid(spectra)
            common = _common_freqs(spectra)
            s0 = spectra[0]
            blocks.append(BandBlock(label if label else s0.band_label, s0.grid_start_mhz, s0.step_mhz, common))
            parts.append(np.array([s.power_dbm[np.isin(np.round(s.freqs_mhz, 6), np.round(common, 6))]
                                   for s in spectra]))
        return cls(tuple(blocks)), np.hstack(parts) if parts else np.empty((0, 0))

    @property
    def width(self) -> int:
        return sum(b.freqs.size for b in self.blocks)

    def column_names(self) -> list[str]:
        return [f"{b.band_label}_{f:g}" for b in self.blocks for f in b.freqs.tolist()]


class SpectralFeaturizer:
    """Fit/transform wrapper turning raw spectra rows into scheme features.

    For the weighted scheme without explicit weights, :meth:`fit` derives
    variance weights from the rows it is given (the training split).
    """

    def __init__(self, layout: RawLayout, scheme: FeatureScheme):
        self.layout = layout
        self.scheme = scheme
        self.W_: np.ndarray | None = None
        self.names_: list[str] = []

    def fit(self, raw: np.ndarray) -> "SpectralFeaturizer":
        raw = np.asarray(raw, dtype=float)
        mats, names, col = [], [], 0
        for b in self.layout.blocks:
            width = b.freqs.size
            scheme = self.scheme
            if scheme.kind == "weighted" and scheme.weights is None:
                n_grid = _grid_count(b.band_label, b.grid_start, b.step, b.freqs)
                w = variance_weights(raw[:, col:col + width], b.freqs, b.grid_start, b.step, n_grid)
                scheme = FeatureScheme.weighted(scheme.interval_mhz, w)
            W, n, _ = scheme_matrix(b.freqs, b.band_label, b.grid_start, b.step, scheme)
            block = np.zeros((W.shape[0], self.layout.width))
            block[:, col:col + width] = W
            mats.append(block)
            names.extend(n)
            col += width
        self.W_ = np.vstack(mats)
        self.names_ = names
        return self

    def transform(self, raw: np.ndarray) -> np.ndarray:
        if self.W_ is None:
            raise ConfigurationError("featurizer used before fit")
        return np.asarray(raw, dtype=float) @ self.W_.T
