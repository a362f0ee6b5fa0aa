#!/usr/bin/env python3
"""
Particle Filter Module
Bootstrap filter whose particles carry a score accumulator next to their state.
Transition (predict), weighting (update) and selection (resample) steps, and the
filter statistics m_t(f), m_t(s), m_t(f s) consumed by the gradient estimator.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from pomdp_core import NumericalError, draw_noise


RESAMPLING_MODES = ('multinomial', 'systematic')


class FilterCollapseError(NumericalError):
    """Every particle got zero likelihood at an observation."""

    def __init__(self, message, observation_index=None):
        super().__init__(message, instant=observation_index, quantity='particle weights')
        self.observation_index = observation_index


@dataclass(frozen=True)
class Particle:
    state: np.ndarray
    score_accumulator: np.ndarray


@dataclass(frozen=True)
class ParticleCloud:
    """
    N particles stored column-wise: states (N, state_dim), weights (N,),
    score accumulators (N, dim alpha).
    """
    states: np.ndarray
    weights: np.ndarray
    scores: np.ndarray
    last_ess: Optional[float] = None
    degenerate_increments: int = 0

    @property
    def n(self):
        return len(self.weights)

    @property
    def particles(self):
        return [Particle(self.states[i], self.scores[i]) for i in range(self.n)]


@dataclass(frozen=True)
class FilterStatistics:
    mean_f: np.ndarray    # m_t(f), (m,)
    mean_s: np.ndarray    # m_t(s), (d,)
    mean_fs: np.ndarray   # m_t(f s), (m, d)
    ess: float
    cov_f: np.ndarray     # covariance of f over particles, (m, m)


def position_test_function(states):
    """f = identity on the position components (first two state entries)."""
    return states[:, :2]


def effective_sample_size(weights):
    return 1.0 / np.sum(np.square(weights))


def initialize_cloud(transition, n_particles, score_dim, stream):
    """Draw N particles from the initial measure with zero score accumulators."""
    if n_particles < 1:
        raise ValueError(f"n_particles must be >= 1, got {n_particles}")
    states = np.asarray(transition.init(draw_noise(stream, transition.noise_dim, size=n_particles)), dtype=float)
    return ParticleCloud(
        states=states.reshape(n_particles, -1),
        weights=np.full(n_particles, 1.0 / n_particles),
        scores=np.zeros((n_particles, score_dim)),
    )


def predict(cloud, transition, fine_step, stream):
    """
    Transition step: every particle moves under the state dynamics.

    Row i of the noise block drawn from the stream is particle i's draw.
    Weights and score accumulators are untouched.
    """
    noise = draw_noise(stream, transition.noise_dim, size=cloud.n)
    states = np.asarray(transition.step(cloud.states, noise, fine_step), dtype=float)
    bad = ~np.all(np.isfinite(states), axis=1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite successor state for particle {idx}", instant=idx,
                             quantity='particle state')
    return replace(cloud, states=states)


def update(cloud, observation, action, obsmodel, policy_jacobian, observation_index=None):
    """
    Weighting step at an observation instant.

    Weights are multiplied by g(y | x_i, a) and renormalised. Each score
    accumulator grows by (dg/dalpha) / g at its particle, where
    dg/dalpha = dg/da . policy_jacobian. A particle with g = 0 but a nonzero
    gradient gets a zero increment and is counted as degenerate.
    """
    log_g = np.asarray(obsmodel.log_density(observation, cloud.states, action), dtype=float)
    with np.errstate(divide='ignore'):
        log_w = np.log(cloud.weights) + log_g
    if not np.any(np.isfinite(log_w)):
        raise FilterCollapseError(f"filter collapse at observation {observation_index}: all likelihoods are zero",
                                  observation_index=observation_index)
    weights = np.exp(log_w - logsumexp(log_w))
    weights /= weights.sum()

    g = np.exp(log_g)
    dg = np.asarray(obsmodel.density_grad_action(observation, cloud.states, action), dtype=float)
    dg = dg.reshape(cloud.n, -1) @ np.asarray(policy_jacobian, dtype=float)
    positive = g > 0
    increments = np.zeros_like(dg)
    increments[positive] = dg[positive] / g[positive, None]
    degenerate = int(np.count_nonzero(~positive & np.any(dg != 0, axis=1)))

    return replace(cloud, weights=weights, scores=cloud.scores + increments,
                   degenerate_increments=cloud.degenerate_increments + degenerate)


def _select(cloud, indices, ess):
    return replace(cloud, states=cloud.states[indices], scores=cloud.scores[indices],
                   weights=np.full(cloud.n, 1.0 / cloud.n), last_ess=ess)


def resample_multinomial(cloud, stream):
    """
    Selection step: N i.i.d. indices with P(k = j) = w_j.

    Survivors carry both state and score accumulator; output weights are 1/N.

    Returns:
        (resampled cloud, selection indices)
    """
    cumulative = np.cumsum(cloud.weights)
    cumulative[-1] = 1.0
    u = draw_noise(stream, 1, size=cloud.n)[:, 0]
    indices = np.minimum(np.searchsorted(cumulative, u, side='right'), cloud.n - 1)
    return _select(cloud, indices, effective_sample_size(cloud.weights)), indices


def resample_systematic(cloud, stream):
    """Systematic selection: one uniform offset, N evenly spaced positions."""
    cumulative = np.cumsum(cloud.weights)
    cumulative[-1] = 1.0
    positions = (draw_noise(stream, 1)[0] + np.arange(cloud.n)) / cloud.n
    indices = np.minimum(np.searchsorted(cumulative, positions, side='right'), cloud.n - 1)
    return _select(cloud, indices, effective_sample_size(cloud.weights)), indices


def resample(cloud, stream, mode='multinomial', ess_threshold=None):
    """
    Resample according to the configured scheme.

    With ess_threshold (a fraction of N) the cloud is only resampled when
    ESS < ess_threshold * N; otherwise the weights are kept.

    Returns:
        (cloud, selection indices or None when skipped)
    """
    if mode not in RESAMPLING_MODES:
        raise ValueError(f"unknown resampling mode {mode!r}; expected one of {RESAMPLING_MODES}")
    ess = effective_sample_size(cloud.weights)
    if ess_threshold is not None and ess >= ess_threshold * cloud.n:
        return replace(cloud, last_ess=ess), None
    if mode == 'systematic':
        return resample_systematic(cloud, stream)
    return resample_multinomial(cloud, stream)


def statistics(cloud, f=position_test_function):
    """
    Weighted means of f, s and f s over the cloud (uniform weights right after
    resampling), the covariance of f, and the ESS of the last pre-resampling
    weights when known.
    """
    w = cloud.weights
    fx = np.asarray(f(cloud.states), dtype=float).reshape(cloud.n, -1)
    mean_f = w @ fx
    mean_s = w @ cloud.scores
    mean_fs = np.einsum('i,im,id->md', w, fx, cloud.scores)
    centred = fx - mean_f
    cov_f = np.einsum('i,im,in->mn', w, centred, centred)
    ess = cloud.last_ess if cloud.last_ess is not None else effective_sample_size(w)
    return FilterStatistics(mean_f=mean_f, mean_s=mean_s, mean_fs=mean_fs, ess=float(ess), cov_f=cov_f)
