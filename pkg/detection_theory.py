#!/usr/bin/env python3
"""
Detection Theory Module
Swerling-I threshold test on the matched-filter statistic:
1. Threshold / false-alarm relation
2. Closed-form probability of detection (and its SNR derivative)
3. Monte Carlo oracle for the closed form
4. Physical radar-equation helper producing the collapsed sensor coefficient kappa
"""

from dataclasses import dataclass

import numpy as np

from pomdp_core import draw_noise, gaussian_from_uniform


BOLTZMANN = 1.380649e-23  # J/K


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a radar formula."""


def _check_pfa(pfa):
    if not (0.0 < pfa < 1.0):
        raise DomainError(f"probability of false alarm must lie in (0, 1), got {pfa!r}")


@dataclass(frozen=True)
class DetectionTest:
    """
    Threshold test on Lambda = |s_m|^2 / (2 sigma_n^2).

    H0 (noise only):   Lambda ~ Exp(1)
    H1 (signal+noise): Lambda ~ (1 + snr) Exp(1)
    """
    snr_ratio: float
    pfa: float

    def __post_init__(self):
        _check_pfa(self.pfa)
        if self.snr_ratio < 0:
            raise DomainError(f"snr_ratio must be >= 0, got {self.snr_ratio!r}")

    @property
    def threshold_gamma(self):
        return threshold_from_pfa(self.pfa)

    @property
    def pd(self):
        return swerling1_pd(self.snr_ratio, self.pfa)


@dataclass(frozen=True)
class PhysicalRadarParams:
    """
    Parameters of the full radar equation.

    Receiver bandwidth is absorbed as b = 1/delta, so it does not appear here.
    gain_exponent is applied to the two-way gain product G_t G_r, so the
    default 2 gives the cos^2 scan loss of the environment SNR.
    """
    transmit_power: float
    antenna_gain: float
    wavelength: float
    cross_section: float
    system_temperature: float
    losses: float = 1.0
    boltzmann: float = BOLTZMANN
    gain_exponent: float = 2.0

    def __post_init__(self):
        for name in ('transmit_power', 'antenna_gain', 'wavelength', 'cross_section',
                     'system_temperature', 'losses', 'boltzmann', 'gain_exponent'):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")


def threshold_from_pfa(pfa):
    """Detection threshold gamma such that P(Lambda > gamma | H0) = pfa."""
    _check_pfa(pfa)
    return -np.log(pfa)


def swerling1_pd(snr_ratio, pfa):
    """
    Closed-form Swerling-I probability of detection, P_d = pfa ** (1 / (1 + snr)).

    Vectorized over snr_ratio. This is the single implementation used by the
    radar environment as well.
    """
    _check_pfa(pfa)
    snr = np.asarray(snr_ratio, dtype=float)
    if np.any(snr < 0):
        raise DomainError("snr_ratio must be >= 0")
    pd = np.exp(np.log(pfa) / (1.0 + snr))
    return float(pd) if pd.ndim == 0 else pd


def swerling1_pd_dsnr(snr_ratio, pfa):
    """dP_d/d(snr) = P_d * (-ln pfa) / (1 + snr)^2."""
    snr = np.asarray(snr_ratio, dtype=float)
    pd = np.asarray(swerling1_pd(snr, pfa))
    deriv = pd * (-np.log(pfa)) / (1.0 + snr) ** 2
    return float(deriv) if deriv.ndim == 0 else deriv


def statistic_density(x, snr_ratio, hypothesis='H1'):
    """
    Density of the detection statistic under H1 (signal present) or H0.

    Args:
        x: Statistic value(s), >= 0
        snr_ratio: sigma_s^2 / sigma_n^2 (ignored under H0)
        hypothesis: 'H1' or 'H0'

    Returns:
        Density value(s)
    """
    x = np.asarray(x, dtype=float)
    scale = 1.0 + snr_ratio if hypothesis == 'H1' else 1.0
    if hypothesis not in ('H0', 'H1'):
        raise ValueError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
    dens = np.where(x >= 0, np.exp(-x / scale) / scale, 0.0)
    return float(dens) if dens.ndim == 0 else dens


def mc_pd_estimate(snr_ratio, pfa, trials, stream, hypothesis='H1', chunk=250_000):
    """
    Monte Carlo estimate of the detection (or H0 exceedance) probability.

    Samples the complex matched-filter output as a complex-Gaussian signal term
    (variance sigma_s^2 per component) plus complex-Gaussian noise (variance
    sigma_n^2 = 1 per component), forms Lambda and compares it to
    gamma = -ln pfa.

    Args:
        snr_ratio: sigma_s^2 / sigma_n^2
        pfa: Probability of false alarm setting the threshold
        trials: Number of Monte Carlo trials (>= 10^4)
        stream: numpy Generator; each trial is one 4-uniform noise tuple
        hypothesis: 'H1' (signal on) or 'H0' (signal off)
        chunk: Trials drawn per batch

    Returns:
        (estimate, binomial standard error)
    """
    if trials < 10_000:
        raise ValueError(f"trials must be >= 10^4, got {trials}")
    if hypothesis not in ('H0', 'H1'):
        raise ValueError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
    gamma = threshold_from_pfa(pfa)
    sigma_s = np.sqrt(snr_ratio) if hypothesis == 'H1' else 0.0

    hits = 0
    remaining = trials
    while remaining > 0:
        n = min(chunk, remaining)
        z = gaussian_from_uniform(draw_noise(stream, 4, size=n))
        signal = sigma_s * (z[:, 0] + 1j * z[:, 1])
        noise = z[:, 2] + 1j * z[:, 3]
        statistic = np.abs(signal + noise) ** 2 / 2.0
        hits += int(np.count_nonzero(statistic > gamma))
        remaining -= n

    estimate = hits / trials
    stderr = np.sqrt(max(estimate * (1.0 - estimate), 0.0) / trials)
    return estimate, stderr


def kappa_from_physical(p):
    """
    Collapsed sensor coefficient of the environment SNR:
    kappa = P_t G_0^2 lambda^2 sigma / ((4 pi)^3 k L T_sys).
    """
    return (p.transmit_power * p.antenna_gain ** 2 * p.wavelength ** 2 * p.cross_section
            / ((4.0 * np.pi) ** 3 * p.boltzmann * p.losses * p.system_temperature))


def snr_from_physical(p, r, theta, beta, delta, beamwidth):
    """
    Full radar-equation SNR for a target at range r and azimuth beta, beam at
    theta held for delta seconds.
    """
    if np.any(np.asarray(r) <= 0):
        raise DomainError("target range must be > 0")
    scan_loss = np.abs(np.cos(theta)) ** p.gain_exponent
    beam_loss = np.exp(-(beta - theta) ** 2 / (2.0 * beamwidth ** 2))
    return kappa_from_physical(p) * delta * scan_loss / np.asarray(r, dtype=float) ** 4 * beam_loss
