"""Parameter sets matching the reported operating regimes.

``line_regime`` reproduces the linear NRF law with intercept parameter
0.857 and slope 0.0916 and the efficiency read-out of 86.2 %. Its true
detector-1 efficiency is higher than 0.862 because the read-out neglects the
unmatched modes, exactly as the M >> K shortcut does on real data.

``bright_regime`` is the brightest heralding point: 1.4 photons per mode,
about 6.3e5 detected photons per pulse in channel 1, eta1 = 0.862, and a
common gain jitter that lifts the unconditional Fano factor to about 4.5.
"""
from __future__ import annotations

from .model import DetectorParams, SourceParams

ALPHA0 = 0.857
BETA0 = 0.0916
ETA1_READOUT = 0.862
# efficiency ratio for which alpha0 * (1 + k) / 2 == 0.862
K_RATIO = 2.0 * ETA1_READOUT / ALPHA0 - 1.0

LINE_TOTAL_MODES = 472_000
LINE_N_M = (0.33, 0.55, 0.77, 0.99, 1.2, 1.4)
LINE_NOISE_VAR = 5_000.0

BRIGHT_N_M = 1.4
BRIGHT_MEAN_N1 = 6.3e5
BRIGHT_ETA = (0.862, 0.852)
BRIGHT_UNMATCHED_FRACTION = 0.0831
BRIGHT_JITTER = 0.00192


def line_modes(total=LINE_TOTAL_MODES, alpha=ALPHA0, beta=BETA0):
    """(M, K) with K / (M + K) = beta / (alpha + beta)."""
    k_modes = round(total * beta / (alpha + beta))
    return total - k_modes, k_modes


def line_efficiencies(alpha=ALPHA0, beta=BETA0, k_ratio=K_RATIO):
    eta1 = (alpha + beta) * (1.0 + k_ratio) / 2.0
    return eta1, eta1 / k_ratio


def line_regime(n_m, noise_var=LINE_NOISE_VAR, total=LINE_TOTAL_MODES):
    """Source and detectors for one point of the NRF-vs-n_m line."""
    m, k = line_modes(total)
    eta1, eta2 = line_efficiencies()
    source = SourceParams(n_m, m, k, k, 0.0)
    dets = (DetectorParams(eta1, 0.0, noise_var), DetectorParams(eta2, 0.0, noise_var))
    return source, dets


def bright_regime(noise_fraction=0.1, jitter=BRIGHT_JITTER):
    """Source and detectors for the brightest heralding point.

    ``noise_fraction`` sets each detector's electronic-noise variance as a
    fraction of the channel-1 shot noise (mean photon number).
    """
    eta1, eta2 = BRIGHT_ETA
    total = round(BRIGHT_MEAN_N1 / (eta1 * BRIGHT_N_M))
    k = round(total * BRIGHT_UNMATCHED_FRACTION)
    source = SourceParams(BRIGHT_N_M, total - k, k, k, jitter)
    noise_var = noise_fraction * BRIGHT_MEAN_N1
    dets = (DetectorParams(eta1, 0.0, noise_var), DetectorParams(eta2, 0.0, noise_var))
    return source, dets
