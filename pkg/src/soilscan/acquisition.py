"""Frequency-sweep acquisition controller.

For each grid frequency the controller tunes the stream, estimates tone
power from ``avg_points`` FFT blocks, and accepts the estimate only if the
standard deviation of those block powers is within ``std_threshold_dbm``.
An unstable estimate is recollected; after ``max_retries`` consecutive
failures the frequency is skipped and reported. Partial estimates of a
skipped frequency are discarded.
"""

from __future__ import annotations

import io
import math
from functools import lru_cache
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol

import numpy as np

from .errors import AcquisitionError, ContractError, DomainError
from .propagation import TransmitConfig
from .spectrum import LOW_BAND, Band, Spectrum, dbm_to_mw

MIN_DBM = -300.0  # stands in for -inf on an all-zero block

COLLECTED = "collected"
RECOLLECTED = "recollected"
SKIPPED = "skipped"


@dataclass(frozen=True)
class SweepConfig:
    band: Band = LOW_BAND
    step_mhz: float = 0.5
    fft_size: int = 1024
    avg_points: int = 100
    std_threshold_dbm: float = 0.02
    max_retries: int = 5

    def __post_init__(self):
        n = self.fft_size
        if n < 1 or n & (n - 1):
            raise DomainError("fft_size must be a power of two")
        if self.avg_points < 1:
            raise DomainError("avg_points must be >= 1")
        if not self.std_threshold_dbm > 0:
            raise DomainError("std_threshold_dbm must be > 0")
        if self.max_retries < 1:
            raise DomainError("max_retries must be >= 1")
        if not self.step_mhz > 0:
            raise DomainError("step_mhz must be > 0")

    @classmethod
    def from_transmit(cls, tx: TransmitConfig, **kw) -> "SweepConfig":
        return cls(band=tx.band, step_mhz=tx.step_mhz, **kw)

    def grid(self) -> np.ndarray:
        return self.band.grid(self.step_mhz)


class SampleStream(Protocol):
    """Source of complex baseband blocks for a tuned carrier frequency."""

    def start(self, seed: int) -> None: ...

    def tune(self, freq_mhz: float) -> None: ...

    def read(self, n: int) -> np.ndarray: ...


def fft_power_estimate(block: np.ndarray, fft_size: int | None = None) -> float:
    """Power of the strongest FFT bin, in dBm.

    The FFT is scaled by 1/N so a complex tone of amplitude ``a`` centred on
    a bin reports ``10 log10(a**2)``; sample units are sqrt(mW).
    """
    block = np.asarray(block)
    n = block.shape[0] if fft_size is None else fft_size
    if block.ndim != 1 or block.shape[0] != n:
        raise ContractError(f"block length {block.shape} does not match fft_size {n}")
    return float(_peak_dbm(block[None, :])[0])


def _peak_dbm(blocks: np.ndarray) -> np.ndarray:
    n = blocks.shape[1]
    spec = np.fft.fft(blocks, axis=1)
    peak = np.max(spec.real * spec.real + spec.imag * spec.imag, axis=1) / float(n * n)
    with np.errstate(divide="ignore"):
        return np.maximum(MIN_DBM, 10.0 * np.log10(peak))


@dataclass(frozen=True)
class PointEstimate:
    power_dbm: float
    std_dbm: float


def estimate_point(stream: SampleStream, freq_mhz: float, cfg: SweepConfig) -> PointEstimate:
    """Mean and sample standard deviation of ``avg_points`` FFT power estimates."""
    stream.tune(freq_mhz)
    blocks = np.empty((cfg.avg_points, cfg.fft_size), dtype=complex)
    for i in range(cfg.avg_points):
        try:
            block = stream.read(cfg.fft_size)
        except (StopIteration, EOFError) as exc:
            raise AcquisitionError(f"stream exhausted at {freq_mhz} MHz") from exc
        if block is None or len(block) != cfg.fft_size:
            raise AcquisitionError(f"stream exhausted at {freq_mhz} MHz")
        blocks[i] = block
    powers = _peak_dbm(blocks)
    # identical readings give exactly zero spread (the mean can pick up rounding)
    std = float(np.std(powers, ddof=1)) if np.ptp(powers) > 0 else 0.0
    return PointEstimate(float(np.mean(powers)), std)


@dataclass(frozen=True)
class SweepEvent:
    freq_mhz: float
    action: str
    attempt: int
    power_dbm: float | None = None
    std_dbm: float | None = None

    def to_line(self) -> str:
        p = "" if self.power_dbm is None else repr(self.power_dbm)
        s = "" if self.std_dbm is None else repr(self.std_dbm)
        return f"{self.freq_mhz!r},{self.action},{self.attempt},{p},{s}"

    @classmethod
    def from_line(cls, line: str) -> "SweepEvent":
        f, action, attempt, p, s = line.strip().split(",")
        return cls(float(f), action, int(attempt), float(p) if p else None, float(s) if s else None)


TRACE_HEADER = "freq_mhz,action,attempt,power_dbm,std_dbm"


@dataclass(frozen=True)
class SweepTrace:
    events: tuple[SweepEvent, ...]
    skipped_freqs: tuple[float, ...] = ()

    def to_log(self) -> str:
        buf = io.StringIO()
        buf.write(TRACE_HEADER + "\n")
        for e in self.events:
            buf.write(e.to_line() + "\n")
        return buf.getvalue()

    @classmethod
    def from_log(cls, text: str) -> "SweepTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != TRACE_HEADER:
            raise ContractError("trace log is missing its header")
        events = tuple(SweepEvent.from_line(ln) for ln in lines[1:])
        return cls(events, tuple(e.freq_mhz for e in events if e.action == SKIPPED))

    def count(self, action: str) -> int:
        return sum(1 for e in self.events if e.action == action)


def run_sweep(stream: SampleStream, cfg: SweepConfig, seed: int) -> tuple[Spectrum, SweepTrace]:
    """Run the collect / recollect / skip loop over the whole band grid."""
    stream.start(seed)
    events: list[SweepEvent] = []
    skipped: list[float] = []
    freqs: list[float] = []
    powers: list[float] = []
    for f in cfg.grid().tolist():
        failures = 0
        while True:
            est = estimate_point(stream, f, cfg)
            if est.std_dbm <= cfg.std_threshold_dbm:
                events.append(SweepEvent(f, COLLECTED, failures, est.power_dbm, est.std_dbm))
                freqs.append(f)
                powers.append(est.power_dbm)
                break
            events.append(SweepEvent(f, RECOLLECTED, failures, est.power_dbm, est.std_dbm))
            failures += 1
            if failures >= cfg.max_retries:
                events.append(SweepEvent(f, SKIPPED, failures))
                skipped.append(f)
                break
    prov = {"kind": "swept", "seed": int(seed), "skipped": len(skipped)}
    spectrum = Spectrum(np.array(freqs), np.array(powers), cfg.band.name, cfg.step_mhz,
                        cfg.band.start_mhz, prov)
    return spectrum, SweepTrace(tuple(events), tuple(skipped))


# --------------------------------------------------------------------------
# streams
# --------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _unit_tone(n: int, bin_index: int) -> np.ndarray:
    t = np.arange(n)
    out = np.exp(1j * 2.0 * math.pi * bin_index * t / n)
    out.flags.writeable = False
    return out


def _tone(power_dbm: float, n: int, bin_index: int, phase: float = 0.0) -> np.ndarray:
    amp = math.sqrt(dbm_to_mw(power_dbm))
    if phase:
        amp = amp * complex(math.cos(phase), math.sin(phase))
    return amp * _unit_tone(n, bin_index)


class SimulatedStream:
    """Bin-centred tone whose level follows a power-vs-frequency function.

    ``jitter_db`` adds Gaussian dB jitter per block. Each block's randomness
    is seeded by (seed, frequency index, block counter), so a replay with the
    same seed is identical.
    """

    def __init__(self, power_fn: Callable[[float], float], step_mhz: float = 0.5,
                 jitter_db: float = 0.0, tone_bin: int = 102):
        self.power_fn = power_fn
        self.step_mhz = step_mhz
        self.jitter_db = jitter_db
        self.tone_bin = tone_bin
        self._seed = 0
        self._freq = None
        self._reads = 0

    @classmethod
    def from_spectrum(cls, spectrum: Spectrum, jitter_db: float = 0.0, **kw) -> "SimulatedStream":
        table = dict(zip(np.round(spectrum.freqs_mhz, 6).tolist(), spectrum.power_dbm.tolist()))
        return cls(lambda f: table[round(f, 6)], spectrum.step_mhz, jitter_db, **kw)

    def start(self, seed: int) -> None:
        self._seed = int(seed)
        self._freq = None

    def tune(self, freq_mhz: float) -> None:
        if self._freq != freq_mhz:
            self._freq = freq_mhz
            self._reads = 0

    def read(self, n: int) -> np.ndarray:
        if self._freq is None:
            raise AcquisitionError("stream read before tune")
        level = self.power_fn(self._freq)
        if self.jitter_db > 0:
            k = int(round(self._freq / self.step_mhz))
            rng = np.random.default_rng([self._seed, k, self._reads])
            level = level + self.jitter_db * rng.standard_normal()
        self._reads += 1
        return _tone(level, n, self.tone_bin)


class ScriptedStream:
    """Deterministic test source with a scripted number of unstable estimates.

    ``failures[f]`` is how many estimates at ``f`` come out unstable before
    a stable one; an unstable estimate alternates block power between
    ``power + 1`` and ``power - 1`` dB. ``power`` maps frequency to level,
    default -40 dBm everywhere.
    """

    def __init__(self, failures: Mapping[float, int] | None = None,
                 power: Callable[[float], float] | None = None, avg_points: int = 100):
        self.failures = {round(f, 6): n for f, n in (failures or {}).items()}
        self.power = power or (lambda f: -40.0)
        self.avg_points = avg_points
        self.blocks_served = 0
        self._attempts: dict[float, int] = {}
        self._freq = None
        self._block = 0

    def start(self, seed: int) -> None:
        self._attempts.clear()
        self._freq = None

    def tune(self, freq_mhz: float) -> None:
        key = round(freq_mhz, 6)
        self._freq = key
        self._block = 0
        self._attempts[key] = self._attempts.get(key, -1) + 1

    def read(self, n: int) -> np.ndarray:
        attempt = self._attempts[self._freq]
        level = self.power(self._freq)
        if attempt < self.failures.get(self._freq, 0):
            level += 1.0 if self._block % 2 == 0 else -1.0
        self._block += 1
        self.blocks_served += 1
        return _tone(level, n, 7)

