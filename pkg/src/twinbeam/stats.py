"""Moment estimators, noise reduction factor and Fano factors.

Every estimator returns an :class:`Estimate` whose standard error comes from
a pulse-level bootstrap: each dataset is resampled with replacement, keeping
the two channels of a pulse together, and independent datasets are resampled
independently.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError, ValidityError
from .model import Dataset, Kind

DEFAULT_BOOTSTRAP = 1000
NEAR_VIOLATION = 0.5


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ParameterError("std_error", "must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Moments:
    count: int
    mean: float
    variance: float
    fourth_central: float

    @property
    def std(self):
        return math.sqrt(self.variance)


class RunningMoments:
    """Single-pass accumulator for mean and central moments up to order four.

    Batches are reduced with numpy and merged with the pairwise update
    formulas of Chan et al. / Pebay, which keep the accumulated central sums
    accurate without storing the data.
    """

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.m3 = 0.0
        self.m4 = 0.0

    def update(self, values):
        x = np.asarray(values, dtype=float).ravel()
        if x.size == 0:
            return self
        nb = x.size
        mb = x.mean()
        d = x - mb
        d2 = d * d
        self._merge(nb, mb, d2.sum(), (d2 * d).sum(), (d2 * d2).sum())
        return self

    def _merge(self, nb, mb, m2b, m3b, m4b):
        na = self.n
        if na == 0:
            self.n, self.mean, self.m2, self.m3, self.m4 = nb, mb, m2b, m3b, m4b
            return
        n = na + nb
        delta = mb - self.mean
        d_n = delta / n
        m2 = self.m2 + m2b + delta * d_n * na * nb
        m3 = (self.m3 + m3b + delta * d_n * d_n * na * nb * (na - nb)
              + 3.0 * d_n * (na * m2b - nb * self.m2))
        m4 = (self.m4 + m4b
              + delta * d_n ** 3 * na * nb * (na * na - na * nb + nb * nb)
              + 6.0 * d_n * d_n * (na * na * m2b + nb * nb * self.m2)
              + 4.0 * d_n * (na * m3b - nb * self.m3))
        self.n, self.mean = n, self.mean + nb * d_n
        self.m2, self.m3, self.m4 = m2, m3, m4

    def result(self) -> Moments:
        if self.n < 2:
            raise ParameterError("values", "need at least 2 values for a variance")
        return Moments(self.n, self.mean, max(self.m2, 0.0) / (self.n - 1), self.m4 / self.n)


def stream_moments(values, chunk_size=65536) -> Moments:
    """Mean, unbiased variance and fourth central moment in one pass.

    ``values`` may be any iterable; it is consumed in chunks.
    """
    acc = RunningMoments()
    if isinstance(values, np.ndarray):
        flat = values.ravel()
        for start in range(0, flat.size, chunk_size):
            acc.update(flat[start:start + chunk_size])
        return acc.result()
    buf = []
    for v in values:
        buf.append(v)
        if len(buf) == chunk_size:
            acc.update(buf)
            buf = []
    acc.update(buf)
    return acc.result()


# -- bootstrap --------------------------------------------------------------
#
# A resample is represented by multiplicity weights over the original pulses
# (how often each pulse was drawn) rather than by gathered copies. Weighted
# sums over the contiguous columns are far cheaper than random-access
# gathers and give identical statistics.

def wmean(x, w=None) -> float:
    if w is None:
        return float(np.mean(x))
    return float(w @ x) / float(w.sum())


def wvar(x, w=None) -> float:
    """Unbiased variance; ``w`` are integer multiplicities (frequency weights)."""
    if w is None:
        return float(np.var(x, ddof=1))
    n = float(w.sum())
    d = x - float(w @ x) / n
    return float(w @ (d * d)) / (n - 1.0)


def _weights(ds):
    return getattr(ds, "weights", None)


class _Resampled:
    """Dataset view of one bootstrap resample, carried as pulse multiplicities."""

    def __init__(self, base, weights):
        self._base = base
        self.weights = weights

    s1 = property(lambda self: self._base.s1)
    s2 = property(lambda self: self._base.s2)
    kind = property(lambda self: self._base.kind)
    detectors = property(lambda self: self._base.detectors)

    def channel(self, which):
        return self._base.channel(which)

    def __len__(self):
        return len(self._base)


def _resample_seed(seed, b):
    return np.random.SeedSequence(entropy=seed, spawn_key=(b,))


def bootstrap_replicates(statistic: Callable, datasets: Sequence, B=DEFAULT_BOOTSTRAP,
                         seed=0, workers=1) -> np.ndarray:
    """Statistic evaluated on ``B`` seeded pulse-level resamples.

    Each dataset is resampled independently with replacement; the channels
    of a pulse stay paired. The statistic receives views whose ``weights``
    attribute holds the multiplicity of every pulse and must reduce through
    :func:`wmean`/:func:`wvar` (or honour ``weights`` itself). Replicate
    ``b`` uses a stream derived from ``(seed, b)``, so results do not depend
    on ``workers``. Returns shape ``(B,)`` or ``(B, k)``.
    """
    if isinstance(B, bool) or int(B) != B or B < 100:
        raise ParameterError("B", f"need at least 100 bootstrap resamples, got {B!r}")
    datasets = [d for d in datasets if d is not None]

    def one(b):
        rng = np.random.Generator(np.random.PCG64(_resample_seed(seed, b)))
        views = []
        for ds in datasets:
            n = len(ds)
            idx = rng.integers(0, n, n)
            views.append(_Resampled(ds, np.bincount(idx, minlength=n).astype(float)))
        return statistic(*views)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(one, range(int(B))))
    else:
        reps = [one(b) for b in range(int(B))]
    return np.asarray(reps, dtype=float)


def bootstrap_error(statistic: Callable, datasets: Sequence, B=DEFAULT_BOOTSTRAP,
                    seed=0, workers=1):
    """Bootstrap standard error of ``statistic(*datasets)``.

    NaN replicates (a resample where the statistic is undefined) are dropped.
    """
    reps = bootstrap_replicates(statistic, datasets, B=B, seed=seed, workers=workers)
    se = np.nanstd(reps, axis=0, ddof=1)
    return float(se) if np.ndim(se) == 0 else se


# -- estimators -------------------------------------------------------------

def _var(x):
    return float(np.var(x, ddof=1))


def balancing_k(ds) -> float:
    """Gain-balancing coefficient ``<s1> / <s2>``."""
    w = _weights(ds)
    m2 = wmean(ds.s2, w)
    if not m2 > 0:
        raise ValidityError(f"mean of channel 2 must be positive to balance gains, got {m2}")
    return wmean(ds.s1, w) / m2


def shot_noise_variance(mean1: float, mean2: float, k: float) -> float:
    """Variance of ``N1 - k N2`` for independent Poissonian channels."""
    if mean1 < 0 or mean2 < 0:
        raise ParameterError("mean", "channel means must be >= 0")
    return mean1 + k * k * mean2


def _difference_var(ds, k):
    return wvar(ds.s1 - k * ds.s2, _weights(ds))


def empirical_shot_noise(coh: Dataset, k: float, B=DEFAULT_BOOTSTRAP, seed=0) -> Estimate:
    """``Var(N1 - k N2)`` measured on a coherent calibration run."""
    if coh.kind is not Kind.COHERENT:
        raise ValidityError(f"shot-noise calibration needs a coherent run, got {coh.kind.value}")
    stat = lambda c: _difference_var(c, k)
    return Estimate(stat(coh), bootstrap_error(stat, [coh], B, seed), len(coh))


def nrf_raw(twin: Dataset, k: float, shot_noise: float, B=DEFAULT_BOOTSTRAP, seed=0) -> Estimate:
    """``Var(s1 - k s2) / shot_noise`` with no electronic-noise correction."""
    if not shot_noise > 0:
        raise ValidityError(f"shot-noise variance must be positive, got {shot_noise}")
    stat = lambda t: _difference_var(t, k) / shot_noise
    return Estimate(stat(twin), bootstrap_error(stat, [twin], B, seed), len(twin))


def check_noise_validity(coh: Dataset, dark1: Dataset, dark2: Dataset):
    """Electronic noise must stay below the shot noise of each channel.

    Raises :class:`ValidityError` on violation and warns above half the
    shot-noise level.
    """
    for ch, dark in ((1, dark1), (2, dark2)):
        dvar = _var(dark.channel(ch))
        shot = float(np.mean(coh.channel(ch)) - np.mean(dark.channel(ch)))
        if not dvar < shot:
            raise ValidityError(
                f"channel {ch}: electronic-noise variance {dvar:.6g} is not below the "
                f"shot-noise variance {shot:.6g}; the noise-subtracted NRF is invalid")
        if dvar > NEAR_VIOLATION * shot:
            warnings.warn(f"channel {ch}: electronic noise is {dvar / shot:.0%} of shot noise",
                          RuntimeWarning, stacklevel=3)


def _nrf_corrected_value(twin, coh, dark1, dark2, k):
    noise = wvar(dark1.s1, _weights(dark1)) + k * k * wvar(dark2.s2, _weights(dark2))
    den = _difference_var(coh, k) - noise
    if not den > 0:
        return math.nan
    return (_difference_var(twin, k) - noise) / den


def nrf_corrected(twin: Dataset, coh: Dataset, dark1: Dataset, dark2: Dataset,
                  k: Optional[float] = None, B=DEFAULT_BOOTSTRAP, seed=0) -> Estimate:
    """Noise reduction factor with electronic noise removed from both terms.

    ``dark1``/``dark2`` are dark runs of detectors 1 and 2; only channel 1 of
    ``dark1`` and channel 2 of ``dark2`` are used. ``k`` defaults to the
    balancing coefficient of ``twin``.
    """
    for name, ds, kind in (("coh", coh, Kind.COHERENT), ("dark1", dark1, Kind.DARK),
                           ("dark2", dark2, Kind.DARK)):
        if ds.kind is not kind:
            raise ValidityError(f"{name} must be a {kind.value} run, got {ds.kind.value}")
    if k is None:
        k = balancing_k(twin)
    check_noise_validity(coh, dark1, dark2)
    value = _nrf_corrected_value(twin, coh, dark1, dark2, k)
    if math.isnan(value):
        raise ValidityError("noise-corrected shot-noise variance is not positive")
    stat = lambda t, c, d1, d2: _nrf_corrected_value(t, c, d1, d2, k)
    se = bootstrap_error(stat, [twin, coh, dark1, dark2], B, seed)
    return Estimate(value, se, len(twin))


def fano_from_moments(var, mean, noise_var=0.0, noise_mean=0.0) -> float:
    """``(var - noise_var) / (mean - noise_mean)``; NaN when the denominator is not positive."""
    den = mean - noise_mean
    return (var - noise_var) / den if den > 0 else math.nan


class _Column:
    # single-channel stand-in so plain arrays go through the pulse bootstrap
    def __init__(self, values):
        self.s1 = values

    def __len__(self):
        return self.s1.size


def _fano_value(col, noise_col=None):
    x, w = col.s1, _weights(col)
    if noise_col is None:
        return fano_from_moments(wvar(x, w), wmean(x, w))
    d, wd = noise_col.s1, _weights(noise_col)
    return fano_from_moments(wvar(x, w), wmean(x, w), wvar(d, wd), wmean(d, wd))


def fano(data, dark=None, channel: int = 1, B=DEFAULT_BOOTSTRAP, seed=0) -> Estimate:
    """Fano factor ``Var/mean`` of one channel, optionally noise-subtracted.

    ``data`` is a dataset (``channel`` selects the column) or a plain array
    of readings. ``dark`` is a dark run of the same detector, or an array of
    its readings; its variance and mean are removed from numerator and
    denominator.
    """
    x = data.channel(channel) if hasattr(data, "channel") else np.asarray(data, dtype=float)
    cols = [_Column(x)]
    if dark is not None:
        d = dark.channel(channel) if hasattr(dark, "channel") else np.asarray(dark, dtype=float)
        cols.append(_Column(d))
    value = _fano_value(*cols)
    if math.isnan(value):
        raise ValidityError("Fano denominator (mean minus noise mean) is not positive")
    return Estimate(value, bootstrap_error(_fano_value, cols, B, seed), x.size)
