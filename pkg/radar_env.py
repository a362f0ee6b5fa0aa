#!/usr/bin/env python3
"""
Radar Environment Module
Electronically scanned radar tracking P targets in the plane:
1. Beam-direction / dwell actions and the SNR with scan and beam-shape losses
2. Swerling-I detections, range / azimuth / range-rate measurements, miss atoms
3. The mixed observation density and its analytic action gradient
4. Nearly-constant-velocity target dynamics
5. The softmax-attention scheduling policy, tracking reward and observation timing
"""

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial
from typing import Callable, Tuple, Union

import numpy as np
from scipy.special import expit, softmax

from detection_theory import DomainError, swerling1_pd, swerling1_pd_dsnr
from particle_filter import position_test_function
from pomdp_core import DEFAULT_FINE_STEP, FilterConfig, NumericalError, draw_noise, gaussian_from_uniform
from scenario_config import DEFAULT_KAPPA, ConfigError


HALF_PI = 0.5 * math.pi
LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_OVERHEAD = 0.02  # seconds between the end of a dwell and the next observation

STATE_COLUMNS = ('rx', 'ry', 'vx', 'vy')


class DegenerateFilterError(NumericalError):
    """Policy features (estimated range or uncertainty) are not strictly positive."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadarConstants:
    """
    Sensor constants. kappa collapses the radar equation (m^4/s); the radar
    platform sits at (rx_obs, ry_obs) at time 0 and moves at constant velocity.
    """
    kappa: float = DEFAULT_KAPPA
    beamwidth: float = math.radians(2.0)
    pfa: float = 1e-4
    sigma_r: float = 10.0
    sigma_beta: float = math.radians(0.3)
    sigma_rdot: float = 1.0
    rx_obs: float = 0.0
    ry_obs: float = 0.0
    vx_obs: float = 0.0
    vy_obs: float = 0.0

    def __post_init__(self):
        for name in ('kappa', 'beamwidth', 'sigma_r', 'sigma_beta', 'sigma_rdot'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"radar.{name} must be positive and finite, got {value!r}")
        if not (0.0 < self.pfa < 1.0):
            raise ConfigError(f"radar.pfa must lie in (0, 1), got {self.pfa!r}")

    @property
    def noise_std(self):
        return np.array([self.sigma_r, self.sigma_beta, self.sigma_rdot])

    def at_time(self, t):
        """Constants with the radar moved to its position at time t."""
        return replace(self, rx_obs=self.rx_obs + self.vx_obs * t, ry_obs=self.ry_obs + self.vy_obs * t)


@dataclass(frozen=True)
class RadarAction:
    theta: float   # beam azimuth, radians
    delta: float   # dwell, seconds

    def __post_init__(self):
        if not (math.isfinite(self.theta) and -HALF_PI <= self.theta <= HALF_PI):
            raise DomainError(f"beam azimuth must lie in [-pi/2, pi/2], got {self.theta!r}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise DomainError(f"dwell must be > 0, got {self.delta!r}")

    def as_array(self):
        return np.array([self.theta, self.delta])


@dataclass(frozen=True)
class TargetState:
    rx: float
    ry: float
    vx: float
    vy: float

    def as_array(self):
        return np.array([self.rx, self.ry, self.vx, self.vy], dtype=float)

    @classmethod
    def from_array(cls, values):
        rx, ry, vx, vy = (float(v) for v in values)
        return cls(rx, ry, vx, vy)


@dataclass(frozen=True)
class Detection:
    r: float
    beta: float
    rdot: float
    detected: bool = field(default=True, init=False)

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"detected range must be > 0, got {self.r!r}")

    def as_array(self):
        return np.array([self.r, self.beta, self.rdot])


@dataclass(frozen=True)
class Miss:
    detected: bool = field(default=False, init=False)

    def as_array(self):
        return np.zeros(0)


MISS = Miss()

TargetObservation = Union[Detection, Miss]


# ---------------------------------------------------------------------------
# Geometry and SNR
# ---------------------------------------------------------------------------

def _states(x):
    if isinstance(x, TargetState):
        return x.as_array()
    return np.asarray(x, dtype=float)


def _unbox(values):
    return float(values) if np.ndim(values) == 0 else values


def wrap_angle(angle):
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def _relative(states, c):
    s = _states(states)
    dx = s[..., 0] - c.rx_obs
    dy = s[..., 1] - c.ry_obs
    r = np.hypot(dx, dy)
    if np.any(r <= 0):
        raise DomainError("target range must be > 0 (target co-located with the radar)")
    return s, dx, dy, r


def measurement_function(states, c):
    """
    Noiseless measurement h(x) = (range, azimuth, range rate) relative to the radar.

    Azimuth uses the quadrant-aware two-argument arctangent, measured from the
    x axis (boresight). Works on a single state or a (N, 4) batch.
    """
    s, dx, dy, r = _relative(states, c)
    dvx = s[..., 2] - c.vx_obs
    dvy = s[..., 3] - c.vy_obs
    return np.stack([r, np.arctan2(dy, dx), (dx * dvx + dy * dvy) / r], axis=-1)


def _snr_parts(states, a, c):
    _, dx, dy, r = _relative(states, c)
    beta = np.arctan2(dy, dx)
    off_beam = wrap_angle(beta - a.theta)
    beam = np.exp(-off_beam ** 2 / (2.0 * c.beamwidth ** 2))
    cos_t = math.cos(a.theta)
    rho = c.kappa * a.delta * cos_t ** 2 / r ** 4 * beam
    return rho, off_beam, beam, r


def snr(x, a, c):
    """rho = kappa * delta * cos^2(theta) / r^4 * exp(-(beta - theta)^2 / (2 B^2))."""
    rho, _, _, _ = _snr_parts(x, a, c)
    return _unbox(rho)


def snr_grad_action(x, a, c):
    """(d rho / d theta, d rho / d delta), shape (..., 2)."""
    rho, off_beam, beam, r = _snr_parts(x, a, c)
    sin_t, cos_t = math.sin(a.theta), math.cos(a.theta)
    scale = c.kappa * a.delta / r ** 4 * beam
    d_theta = scale * (-2.0 * sin_t * cos_t + cos_t ** 2 * off_beam / c.beamwidth ** 2)
    d_delta = rho / a.delta
    return np.stack([d_theta, d_delta], axis=-1)


def detection_probability(rho, pfa):
    """Swerling-I P_d = pfa ** (1 / (1 + rho))."""
    return swerling1_pd(rho, pfa)


def sample_detections(states, a, c, stream):
    """One independent Bernoulli(P_d) detection flag per target."""
    pd = np.atleast_1d(detection_probability(snr(np.atleast_2d(_stack(states)), a, c), c.pfa))
    u = draw_noise(stream, 1, size=len(pd))[:, 0]
    return u < pd


def _stack(states):
    if isinstance(states, (list, tuple)) and states and isinstance(states[0], TargetState):
        return np.stack([s.as_array() for s in states])
    return _states(states)


def measure(x, c, stream):
    """Detection payload h(x) + W, W ~ N(0, diag(sigma_r^2, sigma_beta^2, sigma_rdot^2))."""
    return _measure_from_noise(x, c, draw_noise(stream, 3))


def _measure_from_noise(x, c, u):
    y = measurement_function(x, c) + c.noise_std * gaussian_from_uniform(np.asarray(u))
    return Detection(float(y[0]), float(y[1]), float(y[2]))


# ---------------------------------------------------------------------------
# Mixed observation density
# ---------------------------------------------------------------------------

def _log_pd(rho, pfa):
    return math.log(pfa) / (1.0 + rho)


def _log_miss(rho, pfa):
    # 1 - P_d without cancellation when P_d is close to 1
    return np.log(-np.expm1(_log_pd(rho, pfa)))


def _gaussian_log_density(y, states, c):
    h = measurement_function(states, c)
    resid = y.as_array() - h
    resid[..., 1] = wrap_angle(resid[..., 1])
    std = c.noise_std
    return -0.5 * np.sum((resid / std) ** 2, axis=-1) - np.sum(np.log(std)) - 1.5 * LOG_2PI


def observation_log_density(y, x, a, c):
    """log g(y | x, a); vectorized over a (N, 4) batch of states."""
    rho = snr(x, a, c)
    if isinstance(y, Miss):
        return _unbox(_log_miss(rho, c.pfa))
    return _unbox(_gaussian_log_density(y, x, c) + _log_pd(rho, c.pfa))


def observation_density(y, x, a, c):
    """
    Mixed density g(y | x, a) w.r.t. Lebesgue measure on detections plus the
    miss atom: N(y; h(x), Sigma_y) * P_d on a Detection, 1 - P_d on Miss.
    """
    return _unbox(np.exp(observation_log_density(y, x, a, c)))


def observation_density_grad_action(y, x, a, c):
    """
    (dg/dtheta, dg/ddelta). Only P_d carries action dependence, so the
    detection branch is N(y; h, Sigma) * dP_d/da and the miss branch -dP_d/da.
    """
    rho = snr(x, a, c)
    dpd = np.asarray(swerling1_pd_dsnr(rho, c.pfa))[..., None] * snr_grad_action(x, a, c)
    if isinstance(y, Miss):
        return -dpd
    gauss = np.exp(_gaussian_log_density(y, x, c))
    return np.asarray(gauss)[..., None] * dpd


def joint_observation_density(ys, states, a, c):
    """Product of the per-target densities (detections are independent across targets)."""
    return float(np.prod([observation_density(y, s, a, c) for y, s in zip(ys, _stack(states))]))


@dataclass(frozen=True)
class RadarObservationModel:
    """
    Observation model for one target at a time, at a given time instant.

    Noise tuple: u[0] decides detection, u[1:4] drive the measurement noise.
    """
    constants: RadarConstants
    time: float = 0.0
    noise_dim: int = 4

    @property
    def geometry(self):
        return self.constants.at_time(self.time)

    def at_time(self, t):
        return replace(self, time=float(t))

    def sample(self, state, action, noise):
        c = self.geometry
        pd = detection_probability(snr(state, action, c), c.pfa)
        if noise[0] < pd:
            return _measure_from_noise(state, c, noise[1:4])
        return MISS

    def density(self, observation, state, action):
        return observation_density(observation, state, action, self.geometry)

    def log_density(self, observation, state, action):
        return observation_log_density(observation, state, action, self.geometry)

    def density_grad_action(self, observation, state, action):
        return observation_density_grad_action(observation, state, action, self.geometry)


# ---------------------------------------------------------------------------
# Target dynamics
# ---------------------------------------------------------------------------

def ncv_transition_matrix(dt):
    return np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def ncv_process_covariance(dt):
    """Q(dt) per unit noise intensity; state order (rx, ry, vx, vy)."""
    q3, q2 = dt ** 3 / 3.0, dt ** 2 / 2.0
    return np.array([
        [q3, 0.0, q2, 0.0],
        [0.0, q3, 0.0, q2],
        [q2, 0.0, dt, 0.0],
        [0.0, q2, 0.0, dt],
    ])


@lru_cache(maxsize=32)
def _ncv_noise_factor(dt):
    return np.linalg.cholesky(ncv_process_covariance(dt))


@dataclass(frozen=True)
class NCVTransition:
    """
    Nearly-constant-velocity dynamics for one target:
    x' = F(dt) x + sigma * chol(Q(dt)) z, and a Gaussian initial law around mean.
    """
    mean: Tuple[float, float, float, float]
    sigma: float
    init_pos_std: float = 0.0
    init_vel_std: float = 0.0
    state_dim: int = 4
    noise_dim: int = 4

    def init(self, noise):
        std = np.array([self.init_pos_std, self.init_pos_std, self.init_vel_std, self.init_vel_std])
        return np.asarray(self.mean, dtype=float) + std * gaussian_from_uniform(noise)

    def step(self, state, noise, dt):
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        moved = np.asarray(state, dtype=float) @ ncv_transition_matrix(dt).T
        if self.sigma == 0:
            return moved
        return moved + self.sigma * gaussian_from_uniform(noise) @ _ncv_noise_factor(float(dt)).T


def propagate_ncv(x, dt, sigma, stream):
    """Advance one target state (or a (N, 4) batch) by dt under NCV dynamics."""
    s = _states(x)
    size = None if s.ndim == 1 else len(s)
    out = NCVTransition(mean=(0.0, 0.0, 0.0, 0.0), sigma=sigma).step(s, draw_noise(stream, 4, size=size), dt)
    return TargetState.from_array(out) if isinstance(x, TargetState) else out


# ---------------------------------------------------------------------------
# Scheduling policy
# ---------------------------------------------------------------------------

def squash(x, limit=HALF_PI):
    """Smooth odd clip into (-limit, limit): x * (1 + (x/limit)^8)^(-1/8)."""
    x = np.asarray(x, dtype=float)
    return _unbox(x * (1.0 + (x / limit) ** 8) ** (-0.125))


def squash_grad(x, limit=HALF_PI):
    x = np.asarray(x, dtype=float)
    return _unbox((1.0 + (x / limit) ** 8) ** (-1.125))


def policy_features(stats, c, uncertainty_floor=1.0):
    """
    Per-target (estimated azimuth, estimated range, positional uncertainty).

    Uncertainty is the trace of the particle position covariance plus the floor.
    """
    means = np.array([s.mean_f[:2] for s in stats], dtype=float)
    dx = means[:, 0] - c.rx_obs
    dy = means[:, 1] - c.ry_obs
    ranges = np.hypot(dx, dy)
    uncertainty = np.array([np.trace(np.atleast_2d(s.cov_f)) for s in stats]) + uncertainty_floor
    if not (np.all(np.isfinite(ranges)) and np.all(ranges > 0)):
        raise DegenerateFilterError("estimated target range is not positive", quantity='range estimate')
    if not (np.all(np.isfinite(uncertainty)) and np.all(uncertainty > 0)):
        raise DegenerateFilterError("positional uncertainty is not positive", quantity='uncertainty estimate')
    return np.arctan2(dy, dx), ranges, uncertainty


def policy_eval(alpha, stats, constants, delta_min, delta_max, uncertainty_floor=1.0):
    """
    Softmax-attention policy over the targets.

    Args:
        alpha: (a1, a2, a3, a4)
        stats: One FilterStatistics per target
        constants: RadarConstants at the decision time
        delta_min, delta_max: Dwell bounds
        uncertainty_floor: Added to each uncertainty feature

    Returns:
        (RadarAction, jacobian of (theta, delta) w.r.t. alpha, shape (2, 4))
    """
    a1, a2, a3, a4 = (float(v) for v in alpha)
    beta, ranges, uncertainty = policy_features(stats, constants, uncertainty_floor)
    log_u = np.log(uncertainty)
    log_r = np.log(ranges)

    w = softmax(a1 * log_u + a2 * log_r)
    raw = float(w @ beta)
    mean_log_u = float(w @ log_u)
    mean_log_r = float(w @ log_r)

    d_raw = np.array([w @ ((log_u - mean_log_u) * beta), w @ ((log_r - mean_log_r) * beta)])
    d_logr = np.array([w @ ((log_u - mean_log_u) * log_r), w @ ((log_r - mean_log_r) * log_r)])

    span = delta_max - delta_min
    gate = float(expit(a3 + a4 * mean_log_r))
    d_gate = span * gate * (1.0 - gate)

    theta = squash(raw)
    delta = delta_min + span * gate

    jacobian = np.zeros((2, 4))
    jacobian[0, :2] = squash_grad(raw) * d_raw
    jacobian[1, :2] = d_gate * a4 * d_logr
    jacobian[1, 2] = d_gate
    jacobian[1, 3] = d_gate * mean_log_r
    return RadarAction(theta=theta, delta=float(np.clip(delta, delta_min, delta_max))), jacobian


@dataclass(frozen=True)
class AttentionPolicy:
    """Policy evaluator with fixed alpha, bound to the radar geometry."""
    alpha: Tuple[float, ...]
    constants: RadarConstants
    delta_min: float = 0.01
    delta_max: float = 0.5
    uncertainty_floor: float = 1.0
    dim: int = 4

    def __post_init__(self):
        if len(self.alpha) != self.dim:
            raise ConfigError(f"policy expects {self.dim} parameters, got {len(self.alpha)}")
        if not all(math.isfinite(v) for v in self.alpha):
            raise ConfigError("policy parameters must be finite")

    def __call__(self, stats, t):
        return policy_eval(self.alpha, stats, self.constants.at_time(t), self.delta_min, self.delta_max,
                           self.uncertainty_floor)


# ---------------------------------------------------------------------------
# Reward and observation timing
# ---------------------------------------------------------------------------

def reward(x_true, mean_f, length_scale=1.0):
    """
    R = -(1/P) sum_p ||(pos_p - m_p) / L||^2 over position components.

    Returns:
        (R, dR/dm of shape (P, 2)); dR/dm_p = 2 (pos_p - m_p) / (P L^2)
    """
    states = x_true.as_array() if isinstance(x_true, TargetState) else _stack(x_true)
    pos = states.reshape(-1, 4)[:, :2]
    m =np.asarray(mean_f, dtype=float).reshape(-1, 2)
    if len(pos) != len(m):
        raise ValueError(f"reward needs one estimate per target ({len(pos)} targets, {len(m)} estimates)")
    err = (pos - m) / length_scale
    n_targets = len(pos)
    return -float(np.sum(err ** 2)) / n_targets, 2.0 * err / (n_targets * length_scale)


def schedule_next_observation(t_n, a, fine_step=DEFAULT_FINE_STEP, overhead=DEFAULT_OVERHEAD):
    """Next observation instant: t_n + delta + overhead, rounded up onto the fine grid."""
    steps = max(1, math.ceil((a.delta + overhead) / fine_step - 1e-9))
    return (round(t_n / fine_step) + steps) * fine_step


# ---------------------------------------------------------------------------
# Scenario wiring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadarModels:
    """Everything the episode simulator needs for one scenario."""
    transitions: Tuple[NCVTransition, ...]
    observation: RadarObservationModel
    constants: RadarConstants
    filter_config: FilterConfig
    horizon: float
    fine_step: float
    reward: Callable
    schedule: Callable
    delta_min: float
    delta_max: float
    uncertainty_floor: float

    def make_policy(self, alpha):
        return AttentionPolicy(alpha=tuple(float(v) for v in alpha), constants=self.constants,
                               delta_min=self.delta_min, delta_max=self.delta_max,
                               uncertainty_floor=self.uncertainty_floor)


def radar_constants_from_scenario(scenario):
    return RadarConstants(**vars(scenario.radar))


def build_radar_models(scenario):
    """Wire a validated ScenarioConfig into dynamics, sensor, filter and timing."""
    constants = radar_constants_from_scenario(scenario)
    dyn = scenario.dynamics
    transitions = tuple(
        NCVTransition(mean=(t.rx, t.ry, t.vx, t.vy), sigma=dyn.sigma,
                      init_pos_std=dyn.init_pos_std, init_vel_std=dyn.init_vel_std)
        for t in scenario.targets
    )
    return RadarModels(
        transitions=transitions,
        observation=RadarObservationModel(constants),
        constants=constants,
        filter_config=FilterConfig(n_particles=scenario.filter.n_particles,
                                   resampling=scenario.filter.resampling,
                                   ess_threshold=scenario.filter.ess_threshold,
                                   test_function=position_test_function),
        horizon=scenario.timing.horizon,
        fine_step=scenario.timing.fine_step,
        reward=partial(reward, length_scale=scenario.reward.length_scale),
        schedule=partial(schedule_next_observation, fine_step=scenario.timing.fine_step,
                         overhead=scenario.timing.overhead),
        delta_min=scenario.policy.delta_min,
        delta_max=scenario.policy.delta_max,
        uncertainty_floor=scenario.policy.uncertainty_floor,
    )
