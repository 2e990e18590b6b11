"""Forward model: received tone power through a layered air/wall/soil path.

A single-tone signal of amplitude A_s crossing segments of length d_i in
media with coefficients (alpha_i, beta_i) arrives as

    S_r = A_s * exp(-sum_i (alpha_i + j beta_i) d_i)

and only |S_r| is reported, as dBm relative to the transmit gain.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .errors import ConfigurationError, DomainError
from .medium import (
    DEFAULT_DIELECTRIC,
    DielectricModel,
    MediumProperties,
    SaltResponseModel,
    SoilSample,
    medium_properties,
    mhz_to_hz,
    properties_from,
)
from .spectrum import LOW_BAND, Band, Spectrum

NEPER_TO_DB = 20.0 / math.log(10.0)


@dataclass(frozen=True)
class TransmitConfig:
    amplitude: float = 1.0
    phase: float = 0.0
    gain_dbm: float = 6.0
    band: Band = LOW_BAND
    step_mhz: float = 0.5
    spreading_loss_db: float = 0.0  # fixed-geometry free-space loss, folded into one constant

    def __post_init__(self):
        if not self.step_mhz > 0:
            raise DomainError("step_mhz must be > 0")
        if not self.amplitude > 0:
            raise DomainError("amplitude must be > 0")

    def grid(self) -> np.ndarray:
        return self.band.grid(self.step_mhz)


@dataclass(frozen=True)
class PathGeometry:
    segments: tuple[tuple[str, float], ...]

    def __post_init__(self):
        segs = tuple((str(m), float(d)) for m, d in self.segments)
        if any(not d > 0 for _, d in segs):
            raise DomainError("segment lengths must be > 0")
        object.__setattr__(self, "segments", segs)

    @property
    def total_distance(self) -> float:
        return sum(d for _, d in self.segments)


# 18 cm antenna separation: air, container wall, soil, wall, air.
DEFAULT_PATH = PathGeometry((("air", 0.060), ("wall", 0.001), ("soil", 0.098), ("wall", 0.001), ("air", 0.020)))


class Medium(Protocol):
    def properties(self, f_mhz) -> MediumProperties: ...


@dataclass(frozen=True)
class ConstantMedium:
    """Frequency-flat dielectric (air, container plastic)."""

    eps_real: float = 1.0
    loss_tangent: float = 0.0

    def properties(self, f_mhz) -> MediumProperties:
        f_hz = mhz_to_hz(f_mhz)
        eps_loss = np.broadcast_to(self.eps_real * self.loss_tangent, f_hz.shape)
        return properties_from(np.broadcast_to(self.eps_real, f_hz.shape), eps_loss, 0.0, f_hz)


@dataclass(frozen=True)
class SoilMedium:
    sample: SoilSample
    models: Mapping[str, SaltResponseModel]
    dielectric: DielectricModel = DEFAULT_DIELECTRIC

    def properties(self, f_mhz) -> MediumProperties:
        return medium_properties(self.sample, f_mhz, self.models, self.dielectric)


AIR = ConstantMedium(1.0, 0.0)
WALL = ConstantMedium(2.3, 5e-4)


def standard_media(sample: SoilSample, models: Mapping[str, SaltResponseModel],
                   dielectric: DielectricModel = DEFAULT_DIELECTRIC) -> dict[str, Medium]:
    return {"air": AIR, "wall": WALL, "soil": SoilMedium(sample, models, dielectric)}


def _resolve(path: PathGeometry, media: Mapping[str, Medium], f_mhz):
    out = []
    for medium_id, length in path.segments:
        if medium_id not in media:
            raise ConfigurationError(f"path segment references unknown medium {medium_id!r}")
        out.append((media[medium_id].properties(f_mhz), length))
    return out


def received_signal(config: TransmitConfig, path: PathGeometry, media: Mapping[str, Medium], f_mhz):
    """Complex received amplitude (phase included)."""
    loss = 0.0
    phase = config.phase
    for props, length in _resolve(path, media, f_mhz):
        loss = loss + np.asarray(props.alpha) * length
        phase = phase - np.asarray(props.beta) * length
    return config.amplitude * np.exp(-loss) * np.exp(1j * phase)


def received_power(config: TransmitConfig, path: PathGeometry, media: Mapping[str, Medium], f_mhz):
    """Received power in dBm; accepts scalar or array frequencies."""
    neper = 0.0
    for props, length in _resolve(path, media, f_mhz):
        neper = neper + np.asarray(props.alpha) * length
    # log-domain evaluation of 20 log10(A_s * exp(-neper)) avoids underflow
    p = config.gain_dbm - config.spreading_loss_db + 20.0 * math.log10(config.amplitude) - NEPER_TO_DB * neper
    p = np.asarray(p, dtype=float)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. Gaussian noise in dB added to each grid point."""

    sigma_db: float = 0.0

    def __post_init__(self):
        if not self.sigma_db >= 0:
            raise DomainError("noise sigma must be >= 0")


def point_normals(seed: int, indices) -> np.ndarray:
    """One standard normal per absolute grid index, seeded by (seed, index).

    Independent of evaluation order, so chunked or parallel evaluation
    reproduces the sequential result.
    """
    return np.array([np.random.default_rng([int(seed), int(k)]).standard_normal() for k in indices])


def stable_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "__dataclass_fields__"):
        return {k: getattr(o, k) for k in o.__dataclass_fields__}
    if isinstance(o, Mapping):
        return dict(o)
    raise TypeError(f"cannot hash {type(o).__name__}")


def simulate_spectrum(config: TransmitConfig, path: PathGeometry, sample: SoilSample,
                      noise: NoiseModel, seed: int, models: Mapping[str, SaltResponseModel],
                      dielectric: DielectricModel = DEFAULT_DIELECTRIC,
                      media: Mapping[str, Medium] | None = None) -> Spectrum:
    """Simulated received-power spectrum over the configured band grid."""
    grid = config.grid()
    media = standard_media(sample, models, dielectric) if media is None else media
    power = np.asarray(received_power(config, path, media, grid), dtype=float)
    if noise.sigma_db > 0:
        abs_index = np.round(grid / config.step_mhz).astype(np.int64)
        power = power + noise.sigma_db * point_normals(seed, abs_index)
    config_hash = stable_hash({
        "config": config, "path": path.segments, "sample": sample.to_dict(),
        "noise": noise.sigma_db, "models": dict(models), "dielectric": dielectric,
    })
    prov = {"kind": "simulated", "seed": int(seed), "config_hash": config_hash}
    return Spectrum(grid, power, config.band.name, config.step_mhz, config.band.start_mhz, prov)


def soil_loss_db(sample: SoilSample, f_mhz, models: Mapping[str, SaltResponseModel],
                 path: PathGeometry = DEFAULT_PATH, dielectric: DielectricModel = DEFAULT_DIELECTRIC):
    """dB loss contributed by the soil segments alone."""
    props = medium_properties(sample, f_mhz, models, dielectric)
    length = sum(d for m, d in path.segments if m == "soil")
    return NEPER_TO_DB * np.asarray(props.alpha) * length
