"""Frequency-dependent electrical properties of salt-bearing soil.

Frequencies cross this module's public API in MHz unless the parameter is
named ``f_hz``; :func:`mhz_to_hz` is the only conversion point.

All scalar formulas accept numpy arrays and broadcast elementwise.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class PhysicalConstants:
    c: float = 2.99792458e8  # m/s
    eps0: float = 8.8541878128e-12  # F/m


CONSTANTS = PhysicalConstants()

# Topp et al. cubic, volumetric water content from apparent permittivity.
TOPP_COEFFS = (-5.3e-2, 2.92e-2, -5.5e-4, 4.3e-6)


def mhz_to_hz(f_mhz):
    return np.asarray(f_mhz, dtype=float) * 1e6


def _scalar_or_array(x):
    arr = np.asarray(x, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


# --------------------------------------------------------------------------
# composition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SaltSpec:
    name: str
    concentration: float  # ppm by mass

    def __post_init__(self):
        if not self.concentration >= 0:
            raise DomainError(f"salt {self.name!r}: concentration must be >= 0, got {self.concentration}")


@dataclass(frozen=True)
class SoilSample:
    """One soil sample: base mass, dissolved salts and moisture.

    ``metadata`` holds optional field descriptors (``ph``, ``organic_pct``,
    ``gravel_pct``, ``total_salt_g``, ``pb_ppm``).
    """

    base_mass: float = 1600.0
    salts: tuple[SaltSpec, ...] = ()
    moisture: float = 0.0
    metadata: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.base_mass > 0:
            raise DomainError(f"base_mass must be > 0, got {self.base_mass}")
        if not 0.0 <= self.moisture <= 1.0:
            raise DomainError(f"moisture must lie in [0, 1], got {self.moisture}")
        object.__setattr__(self, "salts", tuple(self.salts))
        names = [s.name for s in self.salts]
        if len(set(names)) != len(names):
            raise DomainError(f"duplicate salt names in sample: {names}")
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    @classmethod
    def from_ppm(cls, salts: Mapping[str, float], moisture: float = 0.0,
                 base_mass: float = 1600.0, metadata: Mapping[str, float] | None = None) -> "SoilSample":
        specs = tuple(SaltSpec(name, float(ppm)) for name, ppm in salts.items())
        return cls(base_mass=base_mass, salts=specs, moisture=moisture, metadata=metadata or {})

    def concentration(self, name: str) -> float:
        for s in self.salts:
            if s.name == name:
                return s.concentration
        return 0.0

    def with_salt(self, name: str, ppm: float) -> "SoilSample":
        """Copy of the sample with ``name`` set to ``ppm`` (added if absent)."""
        salts = [s for s in self.salts if s.name != name] + [SaltSpec(name, ppm)]
        return SoilSample(self.base_mass, tuple(salts), self.moisture, dict(self.metadata))

    def to_dict(self) -> dict:
        return {
            "base_mass_g": self.base_mass,
            "moisture": self.moisture,
            "salts": [{"name": s.name, "ppm": s.concentration} for s in self.salts],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SoilSample":
        """Build a sample from the declarative config schema.

        Keys: ``base_mass_g`` (default 1600), ``moisture`` (default 0),
        ``salts`` as a list of ``{name, ppm}``, optional ``metadata`` map.
        """
        known = {"base_mass_g", "moisture", "salts", "metadata"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown soil sample keys: {sorted(unknown)}")
        try:
            salts = tuple(SaltSpec(str(s["name"]), float(s["ppm"])) for s in doc.get("salts", []))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed salts entry: {exc}") from exc
        return cls(
            base_mass=float(doc.get("base_mass_g", 1600.0)),
            salts=salts,
            moisture=float(doc.get("moisture", 0.0)),
            metadata=dict(doc.get("metadata", {})),
        )


def load_sample(path: str | os.PathLike) -> SoilSample:
    """Read one sample definition from a JSON file (schema of :meth:`SoilSample.from_dict`)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read soil sample {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    return SoilSample.from_dict(doc)


@dataclass(frozen=True)
class FreqShape:
    """Piecewise-linear positive gain curve over frequency (MHz).

    Flat extrapolation beyond the outer knots.
    """

    knots_mhz: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "knots_mhz", tuple(float(k) for k in self.knots_mhz))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.knots_mhz) != len(self.values) or not self.knots_mhz:
            raise ConfigurationError("freq_shape needs one value per knot")
        if any(b <= a for a, b in zip(self.knots_mhz, self.knots_mhz[1:])):
            raise ConfigurationError("freq_shape knots must be strictly increasing")
        if any(not v > 0 for v in self.values):
            raise ConfigurationError("freq_shape multipliers must be > 0")

    @classmethod
    def flat(cls, value: float = 1.0) -> "FreqShape":
        return cls((0.0,), (value,))

    def __call__(self, f_mhz):
        return _scalar_or_array(np.interp(np.asarray(f_mhz, dtype=float), self.knots_mhz, self.values))

    def with_value(self, index: int, value: float) -> "FreqShape":
        vals = list(self.values)
        vals[index] = value
        return FreqShape(self.knots_mhz, tuple(vals))


@dataclass(frozen=True)
class SaltResponseModel:
    """Per-salt electrical response: conductivity and dielectric-loss slopes."""

    sigma_per_ppm: float  # S/m per ppm at shape multiplier 1
    freq_shape: FreqShape = field(default_factory=FreqShape.flat)
    eps_loss_per_ppm: float = 0.0

    def __post_init__(self):
        if not self.sigma_per_ppm >= 0:
            raise ConfigurationError("sigma_per_ppm must be >= 0")

    def to_dict(self) -> dict:
        return {
            "sigma_per_ppm": self.sigma_per_ppm,
            "eps_loss_per_ppm": self.eps_loss_per_ppm,
            "knots_mhz": list(self.freq_shape.knots_mhz),
            "values": list(self.freq_shape.values),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SaltResponseModel":
        return cls(
            sigma_per_ppm=float(doc["sigma_per_ppm"]),
            freq_shape=FreqShape(tuple(doc["knots_mhz"]), tuple(doc["values"])),
            eps_loss_per_ppm=float(doc.get("eps_loss_per_ppm", 0.0)),
        )


# --------------------------------------------------------------------------
# scalar physics
# --------------------------------------------------------------------------


def conductivity(sample: SoilSample, f_mhz, models: Mapping[str, SaltResponseModel],
                 sigma_base: float = 0.0):
    """Bulk soil conductivity in S/m: linear superposition over the salts."""
    f = np.asarray(f_mhz, dtype=float)
    if np.any(f <= 0):
        raise DomainError("frequency must be > 0")
    total = np.full(f.shape, float(sigma_base))
    for salt in sample.salts:
        try:
            model = models[salt.name]
        except KeyError:
            raise ConfigurationError(f"no response model for salt {salt.name!r}") from None
        total = total + salt.concentration * model.sigma_per_ppm * np.asarray(model.freq_shape(f))
    return _scalar_or_array(total)


def loss_tangent(eps_real, eps_loss, sigma, f_hz):
    """tan(delta) = (eps'' + sigma / (2 pi f eps0)) / eps'."""
    f = np.asarray(f_hz, dtype=float)
    if np.any(f <= 0):
        raise DomainError(f"frequency must be > 0, got {f_hz}")
    eps_real = np.asarray(eps_real, dtype=float)
    if np.any(eps_real < 1):
        raise DomainError("eps_real must be >= 1")
    conduction = np.asarray(sigma, dtype=float) / (2.0 * math.pi * f * CONSTANTS.eps0)
    return _scalar_or_array((np.asarray(eps_loss, dtype=float) + conduction) / eps_real)


def _check_wave_args(eps_real, tan_d, f_hz):
    if np.any(np.asarray(f_hz) <= 0):
        raise DomainError("frequency must be > 0")
    if np.any(np.asarray(tan_d) < 0):
        raise DomainError("loss tangent must be >= 0")
    if np.any(np.asarray(eps_real) < 1):
        raise DomainError("eps_real must be >= 1")


def attenuation_coefficient(eps_real, tan_d, f_hz):
    """Attenuation coefficient alpha in Np/m."""
    _check_wave_args(eps_real, tan_d, f_hz)
    t = np.asarray(tan_d, dtype=float)
    root = np.sqrt(1.0 + t * t)
    # sqrt(1+t^2) - 1 rewritten to avoid cancellation when t is small
    radical = np.asarray(eps_real, dtype=float) / 2.0 * (t * t / (root + 1.0))
    k0 = 2.0 * math.pi * np.asarray(f_hz, dtype=float) / CONSTANTS.c
    return _scalar_or_array(k0 * np.sqrt(radical))


def phase_coefficient(eps_real, tan_d, f_hz):
    """Phase coefficient beta in rad/m (lossy-dielectric companion of alpha)."""
    _check_wave_args(eps_real, tan_d, f_hz)
    t = np.asarray(tan_d, dtype=float)
    radical = np.asarray(eps_real, dtype=float) / 2.0 * (np.sqrt(1.0 + t * t) + 1.0)
    k0 = 2.0 * math.pi * np.asarray(f_hz, dtype=float) / CONSTANTS.c
    return _scalar_or_array(k0 * np.sqrt(radical))


def apparent_permittivity_from_velocity(v):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0) or np.any(v > CONSTANTS.c):
        raise DomainError("velocity must satisfy 0 < v <= c")
    return _scalar_or_array((CONSTANTS.c / v) ** 2)


def moisture_from_permittivity(eps_a):
    """Volumetric moisture from apparent permittivity via the Topp cubic, clamped to [0, 1]."""
    e = np.asarray(eps_a, dtype=float)
    if np.any(e < 1):
        raise DomainError("apparent permittivity must be >= 1")
    a0, a1, a2, a3 = TOPP_COEFFS
    theta = a0 + a1 * e + a2 * e**2 + a3 * e**3
    return _scalar_or_array(np.clip(theta, 0.0, 1.0))


# --------------------------------------------------------------------------
# base soil dielectric model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DielectricModel:
    """Dry soil matrix plus Debye water, combined by a two-phase mixing rule.

    ``mixing`` is ``"refractive"`` (complex square roots add, weighted by
    volume fraction) or ``"linear"`` (permittivities add).
    """

    eps_dry: float = 3.5
    eps_loss_dry: float = 0.05
    water_eps_static: float = 80.0
    water_eps_inf: float = 4.9
    water_relaxation_s: float = 9.3e-12
    mixing: str = "refractive"

    def __post_init__(self):
        if self.mixing not in ("refractive", "linear"):
            raise ConfigurationError(f"unknown mixing rule {self.mixing!r}")

    def water(self, f_hz):
        wt = 2.0 * math.pi * np.asarray(f_hz, dtype=float) * self.water_relaxation_s
        delta = self.water_eps_static - self.water_eps_inf
        return self.water_eps_inf + delta / (1 + wt * wt), delta * wt / (1 + wt * wt)

    def permittivity(self, moisture: float, f_hz):
        """Return ``(eps_real, eps_loss)`` of the moist soil matrix."""
        f = np.asarray(f_hz, dtype=float)
        if moisture == 0.0:
            return np.full(f.shape, self.eps_dry), np.full(f.shape, self.eps_loss_dry)
        w_re, w_im = self.water(f)
        water = w_re - 1j * w_im
        dry = complex(self.eps_dry, -self.eps_loss_dry)
        if self.mixing == "refractive":
            mix = (moisture * np.sqrt(water) + (1 - moisture) * np.sqrt(dry)) ** 2
        else:
            mix = moisture * water + (1 - moisture) * dry
        return np.real(mix), -np.imag(mix)


DEFAULT_DIELECTRIC = DielectricModel()


@dataclass(frozen=True)
class MediumProperties:
    eps_real: float | np.ndarray
    eps_loss: float | np.ndarray
    sigma: float | np.ndarray
    loss_tangent: float | np.ndarray
    alpha: float | np.ndarray
    beta: float | np.ndarray


def properties_from(eps_real, eps_loss, sigma, f_hz) -> MediumProperties:
    tan_d = loss_tangent(eps_real, eps_loss, sigma, f_hz)
    return MediumProperties(
        eps_real=_scalar_or_array(eps_real),
        eps_loss=_scalar_or_array(eps_loss),
        sigma=_scalar_or_array(sigma),
        loss_tangent=tan_d,
        alpha=attenuation_coefficient(eps_real, tan_d, f_hz),
        beta=phase_coefficient(eps_real, tan_d, f_hz),
    )


def medium_properties(sample: SoilSample, f_mhz, models: Mapping[str, SaltResponseModel],
                      dielectric: DielectricModel = DEFAULT_DIELECTRIC,
                      sigma_base: float = 0.0) -> MediumProperties:
    """Full electrical state of ``sample`` at ``f_mhz`` (scalar or array).

    Salt dielectric-loss contributions are added to the matrix loss and the
    sum is floored at zero.
    """
    f_hz = mhz_to_hz(f_mhz)
    eps_real, eps_loss = dielectric.permittivity(sample.moisture, f_hz)
    for salt in sample.salts:
        if salt.name not in models:
            raise ConfigurationError(f"no response model for salt {salt.name!r}")
        eps_loss = eps_loss + salt.concentration * models[salt.name].eps_loss_per_ppm
    eps_loss = np.maximum(eps_loss, 0.0)
    sigma = conductivity(sample, f_mhz, models, sigma_base)
    return properties_from(eps_real, eps_loss, sigma, f_hz)
