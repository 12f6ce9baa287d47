"""Heralded post-selection on the control channel.

A pulse is kept when its control reading lies within ``SD / q`` of a chosen
level (window width ``2 SD / q``), ``SD`` being the control-channel standard
deviation of the dataset being conditioned. The Fano factor of the target
channel over the kept pulses is corrected for the target detector's own
electronic noise only; the control detector's noise is part of the heralding.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptySelectionError, ParameterError, TwinbeamError, ValidityError
from .model import Dataset
from .stats import (DEFAULT_BOOTSTRAP, Estimate, bootstrap_replicates, fano_from_moments,
                    wmean, wvar)

MIN_SELECTED = 100
CENTERS = ("control_mean", "absolute", "offset_in_sd")


@dataclass(frozen=True)
class ConditioningSpec:
    """Condition strength ``q`` and where to put the window.

    ``center`` is one of ``"control_mean"``, ``"absolute"`` (``level`` is the
    window center in photon-equivalents) or ``"offset_in_sd"`` (center at the
    control mean plus ``level`` standard deviations).
    """

    q: float
    center: str = "control_mean"
    level: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.q, (int, float)) and math.isfinite(self.q) and self.q > 0):
            raise ParameterError("q", f"condition strength must be > 0, got {self.q!r}")
        if self.center not in CENTERS:
            raise ParameterError("center", f"must be one of {CENTERS}, got {self.center!r}")
        if not math.isfinite(self.level):
            raise ParameterError("level", "must be finite")

    @classmethod
    def at_mean(cls, q):
        return cls(q)

    @classmethod
    def absolute(cls, q, level):
        return cls(q, "absolute", level)

    @classmethod
    def offset(cls, q, delta_sd):
        return cls(q, "offset_in_sd", delta_sd)

    def to_dict(self):
        return {"q": self.q, "center": self.center, "level": self.level}


class Selection(NamedTuple):
    subset: Dataset
    window: Tuple[float, float]
    mask: np.ndarray


@dataclass(frozen=True)
class ConditionalResult:
    fano_target: Estimate
    mean_target: Estimate
    success_rate: float
    n_selected: int
    window: Tuple[float, float]

    def to_dict(self):
        return {"fano_target": self.fano_target.to_dict(),
                "mean_target": self.mean_target.to_dict(),
                "success_rate": self.success_rate,
                "n_selected": self.n_selected,
                "window": list(self.window)}


class SweepPoint(NamedTuple):
    param: float
    result: Optional[ConditionalResult]
    error: Optional[str] = None

    @property
    def ok(self):
        return self.result is not None


def _window(control, spec: ConditioningSpec, w=None):
    sd = math.sqrt(wvar(control, w))
    if spec.center == "absolute":
        c = spec.level
    else:
        c = wmean(control, w)
        if spec.center == "offset_in_sd":
            c += spec.level * sd
    half = sd / spec.q
    return c - half, c + half


def apply_window(ds: Dataset, window, control: int = 2) -> Selection:
    """Keep pulses whose control reading lies in ``window`` (bounds inclusive)."""
    lo, hi = window
    x = ds.channel(control)
    mask = (x >= lo) & (x <= hi)
    return Selection(ds.subset(mask), (lo, hi), mask)


def select(ds: Dataset, spec: ConditioningSpec, control: int = 2) -> Selection:
    if len(ds) == 0:
        raise EmptySelectionError("dataset is empty")
    window = _window(ds.channel(control), spec)
    if not window[0] < window[1]:
        raise EmptySelectionError("control channel has zero spread; window is degenerate")
    sel = apply_window(ds, window, control)
    if len(sel.subset) == 0:
        raise EmptySelectionError(
            f"no pulse falls in window [{window[0]:.6g}, {window[1]:.6g}]; "
            f"q={spec.q} is too large or the center is too far in the tail")
    return sel


def _conditional_stats(ds, dark, spec, control, target):
    # (fano, mean, success rate) for the full data or one weighted resample
    w = getattr(ds, "weights", None)
    ctrl = ds.channel(control)
    lo, hi = _window(ctrl, spec, w)
    mask = (ctrl >= lo) & (ctrl <= hi)
    x = ds.channel(target)[mask]
    ws = None if w is None else w[mask]
    n_sel = x.size if ws is None else float(ws.sum())
    total = ctrl.size
    if n_sel < 2:
        return math.nan, math.nan, n_sel / total
    var, mean = wvar(x, ws), wmean(x, ws)
    if dark is None:
        f = fano_from_moments(var, mean)
    else:
        d, wd = dark.channel(target), getattr(dark, "weights", None)
        f = fano_from_moments(var, mean, wvar(d, wd), wmean(d, wd))
    return f, mean, n_sel / total


def conditional_fano(ds: Dataset, spec: ConditioningSpec, dark_target: Optional[Dataset] = None,
                     control: int = 2, B=DEFAULT_BOOTSTRAP, seed=0) -> ConditionalResult:
    """Fano factor of the target channel over the heralded pulses.

    The target is the channel that is not ``control``. ``dark_target`` is a
    dark run of the target detector; pass ``None`` for noiseless detectors.
    Standard errors resample the whole dataset and redo the selection, so
    the spread of the window and of the success rate both propagate.
    """
    if control not in (1, 2):
        raise ParameterError("control", f"must be 1 or 2, got {control!r}")
    target = 3 - control
    sel = select(ds, spec, control)
    n_sel = len(sel.subset)
    if n_sel < MIN_SELECTED:
        raise EmptySelectionError(
            f"only {n_sel} pulses selected; at least {MIN_SELECTED} are needed for a Fano factor")
    f, mean, rate = _conditional_stats(ds, dark_target, spec, control, target)
    if math.isnan(f):
        raise ValidityError("conditional Fano denominator (mean minus noise mean) is not positive")

    stat = lambda d, dk=None: _conditional_stats(d, dk, spec, control, target)[:2]
    reps = bootstrap_replicates(stat, [ds, dark_target], B=B, seed=seed)
    se_f, se_m = np.nanstd(reps, axis=0, ddof=1)
    return ConditionalResult(Estimate(f, float(se_f), n_sel), Estimate(mean, float(se_m), n_sel),
                             rate, n_sel, sel.window)


def theoretical_conditional_fano(f1: float, f2: float, nrf: float) -> float:
    """Predicted heralded Fano factor ``F1 - (F1 + F2 - 2 NRF)**2 / (4 F2)``."""
    if not f2 > 0:
        raise ParameterError("f2", f"must be > 0, got {f2!r}")
    return f1 - (f1 + f2 - 2.0 * nrf) ** 2 / (4.0 * f2)


def _sweep(ds, specs, params, dark_target, control, B, seed, workers):
    def one(i):
        try:
            r = conditional_fano(ds, specs[i], dark_target, control=control, B=B, seed=seed)
            return SweepPoint(params[i], r)
        except TwinbeamError as exc:
            return SweepPoint(params[i], None, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(len(specs))))
    return [one(i) for i in range(len(specs))]


def sweep_q(ds: Dataset, q_values: Sequence[float], dark_target: Optional[Dataset] = None,
            control: int = 2, B=DEFAULT_BOOTSTRAP, seed=0, workers=1) -> List[SweepPoint]:
    """Conditional Fano at the control mean for each strength in ``q_values``.

    Points that cannot be evaluated come back with ``result=None`` and the
    reason in ``error``; the sweep itself never aborts on them.
    """
    if len(q_values) == 0:
        raise ParameterError("q_values", "must not be empty")
    specs = [ConditioningSpec(q) for q in q_values]
    return _sweep(ds, specs, list(q_values), dark_target, control, B, seed, workers)


def sweep_center(ds: Dataset, deltas_in_sd: Sequence[float], q: float,
                 dark_target: Optional[Dataset] = None, control: int = 2,
                 B=DEFAULT_BOOTSTRAP, seed=0, workers=1) -> List[SweepPoint]:
    """Conditional Fano with the window shifted by ``delta`` control SDs."""
    specs = [ConditioningSpec.offset(q, d) for d in deltas_in_sd]
    return _sweep(ds, specs, list(deltas_in_sd), dark_target, control, B, seed, workers)
