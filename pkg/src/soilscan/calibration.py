"""Salt response fixtures and their calibration against qualitative trends.

The starting fixtures have flat frequency shapes. :func:`calibrate_fixtures`
adjusts the piecewise-linear shape knots by multiplicative coordinate
descent until every trend constraint holds on the simulated grid, or raises
:class:`CalibrationError` naming what is still violated.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import CalibrationError, ConfigurationError
from .medium import DEFAULT_DIELECTRIC, DielectricModel, FreqShape, SaltResponseModel, SoilSample
from .propagation import DEFAULT_PATH, PathGeometry, soil_loss_db
from .spectrum import HIGH_BAND, LOW_BAND

log = logging.getLogger(__name__)

NACL = "NaCl"
PB_NITRATE = "Pb(NO3)2"

SHAPE_KNOTS_MHZ = (700.0, 780.0, 790.0, 800.0, 810.0, 825.0, 850.0, 1000.0,
                   2300.0, 2395.0, 2401.0, 2405.0, 2409.0, 2415.0, 2500.0)

DEFAULT_SALT_MODELS: Mapping[str, SaltResponseModel] = {
    NACL: SaltResponseModel(1.5e-4, FreqShape(SHAPE_KNOTS_MHZ, (1.0,) * len(SHAPE_KNOTS_MHZ)), -3e-5),
    PB_NITRATE: SaltResponseModel(5e-5, FreqShape(SHAPE_KNOTS_MHZ, (1.0,) * len(SHAPE_KNOTS_MHZ)), -5e-5),
}

# grid-resolved endpoints of the two difference features (high, low)
DIFF_POINTS = {"diff800": (810.1, 790.1), "diff2300": (2408.6, 2401.1)}

SHAPE_BOUNDS = (1e-3, 1e3)
MIN_SLOPE = 1e-6  # dB per ppm; a trend must be at least this steep to count


@dataclass(frozen=True)
class SignTrend:
    """d(power)/d(ppm of ``salt``) has ``sign`` at every grid point of [lo, hi] MHz."""

    salt: str
    lo_mhz: float
    hi_mhz: float
    sign: int

    def describe(self) -> str:
        word = "rises" if self.sign > 0 else "falls"
        return f"power {word} with {self.salt} on {self.lo_mhz:g}-{self.hi_mhz:g} MHz"


@dataclass(frozen=True)
class MagnitudeOrder:
    """|d power/d ppm| of ``stronger`` exceeds that of ``weaker`` on [lo, hi] MHz."""

    stronger: str
    weaker: str
    lo_mhz: float
    hi_mhz: float

    def describe(self) -> str:
        return f"|slope| {self.stronger} > {self.weaker} on {self.lo_mhz:g}-{self.hi_mhz:g} MHz"


@dataclass(frozen=True)
class Selectivity:
    """A difference feature responds ``ratio`` times more to ``target`` than to ``other``."""

    feature: str
    target: str
    other: str
    ratio: float = 10.0

    def describe(self) -> str:
        return f"{self.feature} selective for {self.target} over {self.other} (x{self.ratio:g})"


Constraint = Union[SignTrend, MagnitudeOrder, Selectivity]

TARGET_TRENDS: tuple[Constraint, ...] = (
    SignTrend(PB_NITRATE, 790.0, 805.0, +1),
    SignTrend(PB_NITRATE, 825.0, 1000.0, -1),
    SignTrend(NACL, 790.0, 805.0, +1),
    SignTrend(NACL, 825.0, 1000.0, -1),
    SignTrend(PB_NITRATE, 2300.0, 2500.0, -1),
    SignTrend(NACL, 2300.0, 2500.0, -1),
    MagnitudeOrder(NACL, PB_NITRATE, 2300.0, 2500.0),
    Selectivity("diff800", PB_NITRATE, NACL, 10.0),
    Selectivity("diff2300", NACL, PB_NITRATE, 10.0),
)


@dataclass(frozen=True)
class CalibrationSetup:
    step_mhz: float = 0.5
    moisture: float = 0.2
    probe_ppm: float = 1000.0
    path: PathGeometry = DEFAULT_PATH
    dielectric: DielectricModel = DEFAULT_DIELECTRIC


def _grid(step: float) -> np.ndarray:
    return np.concatenate([LOW_BAND.grid(step), HIGH_BAND.grid(step)])


def _nearest(grid: np.ndarray, f: float) -> int:
    return int(np.argmin(np.abs(grid - f)))


class _Evaluator:
    def __init__(self, constraints: Sequence[Constraint], setup: CalibrationSetup):
        self.constraints = list(constraints)
        self.setup = setup
        self.grid = _grid(setup.step_mhz)
        self.base = SoilSample(moisture=setup.moisture)
        self.base_loss = soil_loss_db(self.base, self.grid, {}, setup.path, setup.dielectric)
        self.salts = sorted({s for c in self.constraints for s in _salts_of(c)})

    def slopes(self, models: Mapping[str, SaltResponseModel]) -> dict[str, np.ndarray]:
        """d(power)/d(ppm) per salt across the grid, by finite difference at ``probe_ppm``."""
        out = {}
        ppm = self.setup.probe_ppm
        for salt in self.salts:
            sample = self.base.with_salt(salt, ppm)
            loss = soil_loss_db(sample, self.grid, models, self.setup.path, self.setup.dielectric)
            out[salt] = -(loss - self.base_loss) / ppm
        return out

    def _mask(self, lo, hi):
        m = (self.grid >= lo - 1e-9) & (self.grid <= hi + 1e-9)
        if not m.any():
            raise ConfigurationError(f"constraint band {lo}-{hi} MHz contains no grid point")
        return m

    def _diff(self, slope, feature):
        hi, lo = DIFF_POINTS[feature]
        return slope[_nearest(self.grid, hi)] - slope[_nearest(self.grid, lo)]

    def violation(self, c: Constraint, slopes) -> float:
        if isinstance(c, SignTrend):
            s = c.sign * slopes[c.salt][self._mask(c.lo_mhz, c.hi_mhz)]
            return float(np.sum(np.maximum(0.0, MIN_SLOPE - s)))
        if isinstance(c, MagnitudeOrder):
            m = self._mask(c.lo_mhz, c.hi_mhz)
            strong, weak = np.abs(slopes[c.stronger][m]), np.abs(slopes[c.weaker][m])
            return float(np.sum(np.maximum(0.0, weak + MIN_SLOPE - strong)))
        if isinstance(c, Selectivity):
            t = abs(self._diff(slopes[c.target], c.feature))
            o = abs(self._diff(slopes[c.other], c.feature))
            return max(0.0, c.ratio * o - t) + max(0.0, MIN_SLOPE - t)
        raise ConfigurationError(f"unknown constraint type {type(c).__name__}")

    def objective(self, models) -> float:
        slopes = self.slopes(models)
        return sum(self.violation(c, slopes) for c in self.constraints)

    def violated(self, models) -> list[str]:
        slopes = self.slopes(models)
        return [c.describe() for c in self.constraints if self.violation(c, slopes) > 0]


def _salts_of(c: Constraint) -> tuple[str, ...]:
    if isinstance(c, SignTrend):
        return (c.salt,)
    if isinstance(c, MagnitudeOrder):
        return (c.stronger, c.weaker)
    return (c.target, c.other)


def calibrate_fixtures(targets: Iterable[Constraint] = TARGET_TRENDS,
                       initial: Mapping[str, SaltResponseModel] = DEFAULT_SALT_MODELS,
                       setup: CalibrationSetup = CalibrationSetup(),
                       max_passes: int = 200) -> dict[str, SaltResponseModel]:
    """Fit freq_shape knots so that all ``targets`` hold.

    Returns a new model mapping; ``initial`` is returned unchanged (as a
    dict copy) when there are no targets or they already hold.
    """
    targets = list(targets)
    models = dict(initial)
    if not targets:
        return models
    ev = _Evaluator(targets, setup)
    missing = [s for s in ev.salts if s not in models]
    if missing:
        raise ConfigurationError(f"no initial response model for {missing}")
    best = ev.objective(models)
    coords = [(salt, i) for salt in ev.salts for i in range(len(models[salt].freq_shape.values))]
    lo, hi = SHAPE_BOUNDS
    for factor in (4.0, 2.0, 1.25, 1.05):
        for _ in range(max_passes):
            if best == 0.0:
                break
            improved = False
            for salt, i in coords:
                current = models[salt].freq_shape.values[i]
                for step in (factor, 1.0 / factor):
                    value = min(hi, max(lo, current * step))
                    if value == current:
                        continue
                    trial = dict(models)
                    m = models[salt]
                    trial[salt] = SaltResponseModel(m.sigma_per_ppm, m.freq_shape.with_value(i, value),
                                                    m.eps_loss_per_ppm)
                    score = ev.objective(trial)
                    if score < best - 1e-15:
                        models, best, improved = trial, score, True
                        break
            if not improved:
                break
        if best == 0.0:
            break
    if best > 0.0:
        raise CalibrationError(ev.violated(models))
    log.debug("calibration converged")
    return models


@functools.lru_cache(maxsize=1)
def _cached_default() -> tuple:
    return tuple(sorted(calibrate_fixtures().items()))


def calibrated_salt_models() -> dict[str, SaltResponseModel]:
    """Fixtures calibrated against :data:`TARGET_TRENDS` (computed once per process)."""
    return dict(_cached_default())


def trend_slopes(models: Mapping[str, SaltResponseModel], salts: Sequence[str] = (NACL, PB_NITRATE),
                 setup: CalibrationSetup = CalibrationSetup()) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Grid and per-salt d(power)/d(ppm) for inspection and tests."""
    ev = _Evaluator([SignTrend(s, 700.0, 1000.0, 1) for s in salts], setup)
    return ev.grid, ev.slopes(models)


def models_to_dict(models: Mapping[str, SaltResponseModel]) -> dict:
    return {name: m.to_dict() for name, m in sorted(models.items())}


def models_from_dict(doc: Mapping) -> dict[str, SaltResponseModel]:
    return {name: SaltResponseModel.from_dict(d) for name, d in doc.items()}

