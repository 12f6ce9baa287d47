"""Linear NRF-vs-photons-per-mode fit and derived detector quantities."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .constants import HC
from .errors import ParameterError
from .stats import Estimate


@dataclass(frozen=True)
class FitResult:
    """Fit of ``NRF = 1 - alpha + beta * n_m``."""

    alpha: Estimate
    beta: Estimate
    covariance_alpha_beta: float
    chi2_per_dof: float

    def line(self, n_m):
        return 1.0 - self.alpha.value + self.beta.value * np.asarray(n_m, dtype=float)

    def to_dict(self):
        return {"alpha": self.alpha.to_dict(), "beta": self.beta.to_dict(),
                "covariance_alpha_beta": self.covariance_alpha_beta,
                "chi2_per_dof": self.chi2_per_dof}


@dataclass(frozen=True)
class EfficiencyEstimate:
    eta1: Estimate
    assumptions: dict = field(default_factory=dict)

    def to_dict(self):
        return {"eta1": self.eta1.to_dict(), "assumptions": dict(self.assumptions)}


def _as_point(p):
    n_m, y = p[0], p[1]
    if isinstance(y, Estimate):
        return float(n_m), y.value, y.std_error, y.n_samples
    return float(n_m), float(y), float(p[2]), 0


def fit_nrf_linear(points) -> FitResult:
    """Inverse-variance weighted straight-line fit of NRF against ``n_m``.

    ``points`` holds ``(n_m, Estimate)`` pairs or ``(n_m, value, std_error)``
    triples. Parameter errors come from the weighted normal equations with
    the given standard errors taken as absolute. With exactly two points the
    line interpolates and ``chi2_per_dof`` is reported as 0.
    """
    pts = [_as_point(p) for p in points]
    if len(pts) < 2:
        raise ParameterError("points", "need at least 2 points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    se = np.array([p[2] for p in pts])
    if not np.all(se > 0) or not np.all(np.isfinite(se)):
        raise ParameterError("std_error", "all weights must be positive and finite")
    if np.ptp(x) == 0:
        raise ParameterError("n_m", "all points share one n_m; slope is undetermined")

    w = 1.0 / se ** 2
    sw, swx, swy = w.sum(), (w * x).sum(), (w * y).sum()
    # centred normal equations avoid cancellation in the determinant
    xbar = swx / sw
    dx = x - xbar
    sxx = (w * dx * dx).sum()
    slope = (w * dx * y).sum() / sxx
    intercept = swy / sw - slope * xbar
    var_slope = 1.0 / sxx
    var_int = 1.0 / sw + xbar * xbar / sxx
    cov_int_slope = -xbar / sxx

    resid = y - (intercept + slope * x)
    dof = len(pts) - 2
    chi2 = float((w * resid ** 2).sum())
    chi2_dof = chi2 / dof if dof > 0 else 0.0

    n_total = int(sum(p[3] for p in pts))
    alpha = Estimate(float(1.0 - intercept), math.sqrt(var_int), n_total)
    beta = Estimate(float(slope), math.sqrt(var_slope), n_total)
    if not 0 < alpha.value <= 1:
        warnings.warn(f"fitted alpha={alpha.value:.4g} is outside (0, 1]", RuntimeWarning, stacklevel=2)
    # alpha = 1 - intercept flips the sign of the covariance
    return FitResult(alpha, beta, float(-cov_int_slope), float(chi2_dof))


def alpha_beta_theory(m: int, k_modes: int, eta1: float, k_ratio: float) -> Tuple[float, float]:
    """Intercept and slope parameters from mode counts and efficiencies.

    ``alpha = 2M/(M+K) * eta1/(1+k)`` and ``beta = 2K/(M+K) * eta1/(1+k)``
    with ``k = eta1/eta2``.
    """
    if m < 0 or k_modes < 0 or m + k_modes < 1:
        raise ParameterError("m", "need m, k_modes >= 0 and m + k_modes >= 1")
    if not 0 < eta1 <= 1:
        raise ParameterError("eta1", f"must lie in (0, 1], got {eta1!r}")
    if not k_ratio > 0:
        raise ParameterError("k_ratio", f"must be > 0, got {k_ratio!r}")
    common = 2.0 * eta1 / ((m + k_modes) * (1.0 + k_ratio))
    return m * common, k_modes * common


def estimate_eta1(alpha: Estimate, k_ratio: float) -> EfficiencyEstimate:
    """Detector-1 efficiency from the fitted intercept, assuming M >> K.

    ``eta1 = alpha (1 + k) / 2``; the error is propagated to first order.
    """
    if not alpha.value > 0:
        raise ParameterError("alpha", f"must be > 0, got {alpha.value!r}")
    if not k_ratio > 0:
        raise ParameterError("k_ratio", f"must be > 0, got {k_ratio!r}")
    scale = (1.0 + k_ratio) / 2.0
    eta = Estimate(alpha.value * scale, alpha.std_error * scale, alpha.n_samples)
    return EfficiencyEstimate(eta, {"m_much_greater_than_k": True, "k_ratio_used": float(k_ratio)})


def squeezing_db(nrf: float) -> float:
    if not nrf > 0:
        raise ParameterError("nrf", f"must be > 0, got {nrf!r}")
    return -10.0 * math.log10(nrf)


def photons_to_energy(n_photons: float, wavelength_nm: float) -> float:
    """Pulse energy in joules of ``n_photons`` at ``wavelength_nm``."""
    if not n_photons > 0:
        raise ParameterError("n_photons", f"must be > 0, got {n_photons!r}")
    if not wavelength_nm > 0:
        raise ParameterError("wavelength_nm", f"must be > 0, got {wavelength_nm!r}")
    return n_photons * HC / (wavelength_nm * 1e-9)
