"""Monte-Carlo generation of twin-beam, coherent and dark photodetection records.

Photon numbers per mode are Bose-Einstein distributed. Matched modes are
copied into both arms before detection; unmatched modes feed one arm only.
Detection is binomial thinning followed by additive Gaussian electronic
noise, all in photon-equivalent units.

Random streams are keyed by ``(seed, kind, block)`` where a block is a fixed
run of ``BLOCK_SIZE`` consecutive pulse ids. Every block owns an independent
Philox stream and draws in a fixed order, so a run is bit-identical no matter
how blocks are distributed over workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Iterator, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError

BLOCK_SIZE = 8192
WORKERS_ENV = "TWINBEAM_MAX_WORKERS"


class Kind(str, Enum):
    TWIN_BEAM = "twin_beam"
    COHERENT = "coherent"
    DARK = "dark"


# stream-key tag per kind; part of the reproducibility contract, never reorder
_KIND_TAG = {Kind.TWIN_BEAM: 1, Kind.COHERENT: 2, Kind.DARK: 3}


def _check_finite(name, value):
    if not math.isfinite(value):
        raise ParameterError(name, f"must be finite, got {value!r}")


@dataclass(frozen=True)
class SourceParams:
    """Multi-mode twin-beam source.

    ``unmatched_modes_2`` defaults to ``unmatched_modes_1`` when omitted.
    """

    n_mean_per_mode: float
    matched_modes: int
    unmatched_modes_1: int = 0
    unmatched_modes_2: Optional[int] = None
    gain_jitter_rel_std: float = 0.0

    def __post_init__(self):
        if self.unmatched_modes_2 is None:
            object.__setattr__(self, "unmatched_modes_2", self.unmatched_modes_1)
        _check_finite("n_mean_per_mode", self.n_mean_per_mode)
        if self.n_mean_per_mode < 0:
            raise ParameterError("n_mean_per_mode", "must be >= 0")
        for name in ("matched_modes", "unmatched_modes_1", "unmatched_modes_2"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 0:
                raise ParameterError(name, f"must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        _check_finite("gain_jitter_rel_std", self.gain_jitter_rel_std)
        if not 0 <= self.gain_jitter_rel_std < 0.5:
            raise ParameterError("gain_jitter_rel_std", "must lie in [0, 0.5)")

    def check_sampleable(self):
        if self.matched_modes + self.unmatched_modes_1 < 1:
            raise ParameterError("unmatched_modes_1", "arm 1 needs at least one mode (M + K1 >= 1)")
        if self.matched_modes + self.unmatched_modes_2 < 1:
            raise ParameterError("unmatched_modes_2", "arm 2 needs at least one mode (M + K2 >= 1)")

    @property
    def modes(self) -> Tuple[int, int]:
        """Total modes seen by each arm."""
        return (self.matched_modes + self.unmatched_modes_1,
                self.matched_modes + self.unmatched_modes_2)

    def mean_photons(self) -> Tuple[float, float]:
        m1, m2 = self.modes
        return m1 * self.n_mean_per_mode, m2 * self.n_mean_per_mode


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float
    noise_mean: float = 0.0
    noise_var: float = 0.0

    def __post_init__(self):
        for name in ("efficiency", "noise_mean", "noise_var"):
            _check_finite(name, getattr(self, name))
        if not 0.0 <= self.efficiency <= 1.0:
            raise ParameterError("efficiency", f"must lie in [0, 1], got {self.efficiency!r}")
        if self.noise_var < 0:
            raise ParameterError("noise_var", "must be >= 0")


class PulseRecord(NamedTuple):
    pulse_id: int
    s1: float
    s2: float


@dataclass(eq=False)
class Dataset:
    """One measurement run: paired channel readings plus how they were made.

    Records are held column-wise in ``s1``/``s2``; ``records`` iterates them
    as :class:`PulseRecord` tuples.
    """

    kind: Kind
    detectors: Tuple[DetectorParams, DetectorParams]
    seed: int
    s1: np.ndarray
    s2: np.ndarray
    source: Optional[SourceParams] = None
    coherent_means: Optional[Tuple[float, float]] = None
    clamp_events: int = 0
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.s1 = np.asarray(self.s1, dtype=float)
        self.s2 = np.asarray(self.s2, dtype=float)
        if self.s1.shape != self.s2.shape or self.s1.ndim != 1:
            raise ParameterError("records", "channel arrays must be 1-D and of equal length")

    def __len__(self):
        return self.s1.size

    @property
    def n_pulses(self) -> int:
        return self.s1.size

    @property
    def pulse_id(self) -> np.ndarray:
        return np.arange(self.s1.size)

    @property
    def records(self) -> Iterator[PulseRecord]:
        for i, (a, b) in enumerate(zip(self.s1.tolist(), self.s2.tolist())):
            yield PulseRecord(i, a, b)

    def channel(self, which: int) -> np.ndarray:
        if which == 1:
            return self.s1
        if which == 2:
            return self.s2
        raise ParameterError("channel", f"must be 1 or 2, got {which!r}")

    def subset(self, mask_or_index) -> "Dataset":
        """Pulses picked by a boolean mask or an index array, metadata kept."""
        return Dataset(self.kind, self.detectors, self.seed,
                       self.s1[mask_or_index], self.s2[mask_or_index],
                       source=self.source, coherent_means=self.coherent_means,
                       clamp_events=self.clamp_events, block_size=self.block_size)

    def metadata(self) -> dict:
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "n_pulses": self.n_pulses,
            "source": None if self.source is None else asdict(self.source),
            "coherent_means": None if self.coherent_means is None else list(self.coherent_means),
            "detectors": [asdict(d) for d in self.detectors],
            "clamp_events": self.clamp_events,
            "block_size": self.block_size,
        }

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.metadata() == other.metadata()
                and np.array_equal(self.s1, other.s1)
                and np.array_equal(self.s2, other.s2))


# -- sampling primitives ----------------------------------------------------

def sample_thermal_mode(n_mean, rng, size=None):
    """Bose-Einstein photon number with mean ``n_mean``.

    P(n) = n_mean**n / (1 + n_mean)**(n + 1). Vectorises over ``n_mean`` and
    ``size`` like the numpy samplers.
    """
    n_mean = np.asarray(n_mean, dtype=float)
    if np.any(n_mean < 0):
        raise ParameterError("n_mean", "must be >= 0")
    # numpy's geometric counts trials up to the first success (support 1, 2, ...)
    out = rng.geometric(1.0 / (1.0 + n_mean), size=size) - 1
    return out if np.ndim(out) else int(out)


def _thermal_sum(n_modes, n_mean, rng, size):
    # sum of n_modes iid Bose-Einstein variates == negative binomial(n_modes, 1/(1+n))
    if n_modes == 0:
        return np.zeros(size, dtype=np.int64)
    return rng.negative_binomial(n_modes, 1.0 / (1.0 + n_mean), size=size)


def sample_gain(jitter, rng, size):
    """Per-pulse common gain ``max(0, 1 + jitter * z)`` and the number of clamps."""
    z = rng.standard_normal(size)
    g = 1.0 + jitter * z
    clamped = int(np.count_nonzero(g < 0))
    return np.maximum(g, 0.0), clamped


def sample_pulse(source: SourceParams, rng, size=None, return_clamps=False):
    """True (pre-detection) photon numbers of both arms.

    Per pulse, a common gain rescales the mean of every mode. The M matched
    modes contribute the same thermal total to both arms; unmatched modes are
    independent per arm. Mode sums are drawn directly as negative binomials,
    which is distributionally identical to summing per-mode draws.
    """
    source.check_sampleable()
    n = 1 if size is None else size
    g, clamps = sample_gain(source.gain_jitter_rel_std, rng, n)
    n_mode = g * source.n_mean_per_mode
    matched = _thermal_sum(source.matched_modes, n_mode, rng, n)
    n1 = matched + _thermal_sum(source.unmatched_modes_1, n_mode, rng, n)
    n2 = matched + _thermal_sum(source.unmatched_modes_2, n_mode, rng, n)
    if size is None:
        n1, n2 = int(n1[0]), int(n2[0])
    if return_clamps:
        return n1, n2, clamps
    return n1, n2


def detect(n_true, det: DetectorParams, rng):
    """Binomial thinning with ``det.efficiency`` plus Gaussian electronic noise."""
    n_true = np.asarray(n_true)
    if np.any(n_true < 0):
        raise ParameterError("n_true", "photon numbers must be >= 0")
    kept = rng.binomial(n_true, det.efficiency)
    noise = rng.normal(det.noise_mean, math.sqrt(det.noise_var), size=n_true.shape)
    out = kept + noise
    return out if out.ndim else float(out)


def pump_power_to_n_mode(power_mw: float, gain_coeff: float) -> float:
    """Photons per mode at a given pump power, ``sinh(gain_coeff * sqrt(P))**2``."""
    if power_mw < 0:
        raise ParameterError("power_mW", "must be >= 0")
    if gain_coeff <= 0:
        raise ParameterError("gain_coeff", "must be > 0")
    return math.sinh(gain_coeff * math.sqrt(power_mw)) ** 2


def matched_coherent_means(source: SourceParams) -> Tuple[float, float]:
    """Pre-detection Poisson means giving coherent light as bright as the twin beams."""
    return source.mean_photons()


# -- runs -------------------------------------------------------------------

def block_rng(seed: int, kind: Kind, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_KIND_TAG[Kind(kind)], block))
    return np.random.Generator(np.random.Philox(ss))


def _simulate_block(kind, source, coherent_means, detectors, seed, block, lo, hi):
    rng = block_rng(seed, kind, block)
    n = hi - lo
    clamps = 0
    if kind is Kind.TWIN_BEAM:
        n1, n2, clamps = sample_pulse(source, rng, size=n, return_clamps=True)
    elif kind is Kind.COHERENT:
        n1 = rng.poisson(coherent_means[0], n)
        n2 = rng.poisson(coherent_means[1], n)
    else:
        n1 = n2 = np.zeros(n, dtype=np.int64)
    return detect(n1, detectors[0], rng), detect(n2, detectors[1], rng), clamps


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(WORKERS_ENV, f"must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def simulate_run(kind, detectors: Sequence[DetectorParams], n_pulses: int, seed: int,
                 source: Optional[SourceParams] = None,
                 coherent_means: Optional[Sequence[float]] = None,
                 workers: Optional[int] = None) -> Dataset:
    """Generate ``n_pulses`` records of the requested kind.

    ``source`` is required for twin-beam runs. Coherent runs take per-arm
    pre-detection Poisson means, falling back to the means of ``source``.
    Dark runs sample detector noise only. The result depends only on the
    arguments other than ``workers``.
    """
    kind = Kind(kind)
    if isinstance(n_pulses, bool) or int(n_pulses) != n_pulses or n_pulses < 1:
        raise ParameterError("n_pulses", f"must be a positive integer, got {n_pulses!r}")
    n_pulses = int(n_pulses)
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise ParameterError("seed", "must be an integer in [0, 2**64)")
    seed = int(seed)
    if len(detectors) != 2 or not all(isinstance(d, DetectorParams) for d in detectors):
        raise ParameterError("detectors", "expected a pair of DetectorParams")
    detectors = tuple(detectors)

    if kind is Kind.TWIN_BEAM:
        if source is None:
            raise ParameterError("source", "required for twin_beam runs")
        source.check_sampleable()
        coherent_means = None
    elif kind is Kind.COHERENT:
        if coherent_means is None:
            if source is None:
                raise ParameterError("coherent_means", "required for coherent runs without a source")
            coherent_means = matched_coherent_means(source)
        coherent_means = tuple(float(m) for m in coherent_means)
        if len(coherent_means) != 2:
            raise ParameterError("coherent_means", "expected one mean per arm")
        for m in coherent_means:
            _check_finite("coherent_means", m)
            if m < 0:
                raise ParameterError("coherent_means", "must be >= 0")
        source = None
    else:
        source, coherent_means = None, None

    bounds = [(b, lo, min(lo + BLOCK_SIZE, n_pulses))
              for b, lo in enumerate(range(0, n_pulses, BLOCK_SIZE))]
    workers = default_workers() if workers is None else max(1, int(workers))
    args = (kind, source, coherent_means, detectors, seed)
    if workers == 1 or len(bounds) == 1:
        parts = [_simulate_block(*args, *b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _simulate_block(*args, *b), bounds))

    s1 = np.concatenate([p[0] for p in parts]).astype(float)
    s2 = np.concatenate([p[1] for p in parts]).astype(float)
    clamps = sum(p[2] for p in parts)
    return Dataset(kind, detectors, seed, s1, s2, source=source,
                   coherent_means=coherent_means, clamp_events=clamps)
