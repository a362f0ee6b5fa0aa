#!/usr/bin/env python3
"""
POMDP Core Module
Generic pieces of the partially-observed decision process:
1. Random streams keyed by (purpose, episode, particle) under one master seed
2. Noise draws as fixed-length tuples of open-interval uniforms
3. Transition / observation / policy interfaces
4. The episode simulator running the fine (state) and coarse (observation) time scales
"""

from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Protocol, Sequence

import numpy as np
from scipy.special import ndtri


# Stream purposes. The integer codes are part of the reproducibility contract:
# changing them changes every simulated episode.
STREAM_PURPOSES = {
    'truth': 0,      # true state dynamics and initial draw
    'sensor': 1,     # detection flags and measurement noise
    'filter': 2,     # particle initialisation and prediction
    'resample': 3,   # selection indices
    'oracle': 4,     # Monte Carlo oracles
}

DEFAULT_FINE_STEP = 0.05  # seconds

_UNIFORM_BITS = 53
_UNIFORM_SCALE = float(2 ** _UNIFORM_BITS)


class NumericalError(ArithmeticError):
    """
    A simulated quantity became non-finite (or otherwise numerically unusable).

    Attributes:
        instant: Fine-step index or time at which the problem appeared
        quantity: Name of the offending quantity
    """

    def __init__(self, message, instant=None, quantity=None):
        super().__init__(message)
        self.instant = instant
        self.quantity = quantity


def make_stream(seed, purpose, episode=0, particle=0):
    """
    Derive an independent random stream from the master seed.

    Streams are keyed by (purpose, episode index, particle index) through
    numpy's SeedSequence spawn keys, so two keys never share a stream and the
    same key always reproduces the same stream.
    """
    if purpose not in STREAM_PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}; expected one of {sorted(STREAM_PURPOSES)}")
    seq = np.random.SeedSequence(entropy=int(seed),
                                 spawn_key=(STREAM_PURPOSES[purpose], int(episode), int(particle)))
    return np.random.Generator(np.random.PCG64(seq))


def draw_noise(stream, n_u=1, size=None):
    """
    Draw i.i.d. uniforms on the open interval (0, 1).

    Each uniform is (k + 0.5) / 2^53 for an integer k drawn uniformly, so the
    Gaussian transform ndtri never sees 0 or 1.

    Args:
        stream: numpy Generator
        n_u: Length of one noise tuple
        size: Number of tuples (None for a single tuple)

    Returns:
        Array of shape (n_u,) or (size, n_u)
    """
    shape = (n_u,) if size is None else (size, n_u)
    k = stream.integers(0, 2 ** _UNIFORM_BITS, size=shape, dtype=np.int64)
    return (k.astype(float) + 0.5) / _UNIFORM_SCALE


def gaussian_from_uniform(u):
    """Standard normal variates by inverse CDF."""
    return ndtri(u)


def fine_step_count(horizon, fine_step):
    """Number of fine steps in the horizon; fine_step must divide it."""
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if fine_step <= 0:
        raise ValueError(f"fine_step must be > 0, got {fine_step}")
    steps = int(round(horizon / fine_step))
    if abs(steps * fine_step - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"fine_step {fine_step} does not divide horizon {horizon}")
    return steps


class TransitionModel(Protocol):
    """
    Generative state model: init realises the initial measure, step the kernel.

    Both operate on arrays with a leading batch axis, so one call moves a whole
    particle population. step takes no history argument.
    """
    state_dim: int
    noise_dim: int

    def init(self, noise: np.ndarray) -> np.ndarray: ...

    def step(self, state: np.ndarray, noise: np.ndarray, dt: float) -> np.ndarray: ...


class ObservationModel(Protocol):
    """Observation sampler and its mixed density g(y | x, a)."""
    noise_dim: int

    def sample(self, state: np.ndarray, action: Any, noise: np.ndarray) -> Any: ...

    def density(self, observation: Any, state: np.ndarray, action: Any) -> np.ndarray: ...

    def log_density(self, observation: Any, state: np.ndarray, action: Any) -> np.ndarray: ...

    def density_grad_action(self, observation: Any, state: np.ndarray, action: Any) -> np.ndarray: ...

    def at_time(self, t: float) -> 'ObservationModel': ...


class PolicyEvaluator(Protocol):
    """Maps per-target filter statistics to (action, d action / d alpha)."""
    dim: int

    def __call__(self, stats: Sequence[Any], t: float) -> Any: ...


class EpisodeHook(Protocol):
    """Receives every fine instant of an episode (used by the gradient estimator)."""

    def on_fine_step(self, k, t, states, stats, reference_score, reward, reward_grad) -> None: ...


@dataclass(frozen=True)
class FilterConfig:
    """Particle filter settings shared by every per-target cloud."""
    n_particles: int = 1000
    resampling: str = 'multinomial'
    ess_threshold: Optional[float] = None  # fraction of N; None resamples at every observation
    test_function: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass
class EpisodeRecord:
    """Everything one episode produced, on both time scales."""
    fine_times: np.ndarray
    states: np.ndarray                      # (K+1, P, state_dim)
    obs_times: List[float] = field(default_factory=list)
    actions: List[Any] = field(default_factory=list)
    observations: List[tuple] = field(default_factory=list)
    rewards: np.ndarray = None              # (K+1,)
    filter_estimates: np.ndarray = None     # (K+1, P, f_dim)
    reference_score: np.ndarray = None      # s_T on the true trajectory
    ess: List[tuple] = field(default_factory=list)
    degenerate_increments: int = 0

    @property
    def fine_step(self):
        return float(self.fine_times[1] - self.fine_times[0]) if len(self.fine_times) > 1 else 0.0

    def episode_return(self):
        """Left Riemann sum of the reward over the fine grid."""
        if len(self.fine_times) < 2:
            return 0.0
        return float(np.sum(self.rewards[:-1]) * self.fine_step)


def _check_finite(values, k, quantity):
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite {quantity} at fine step {k}", instant=k, quantity=quantity)


def observation_payload(observation):
    """Numeric view of an observation for finiteness checks (empty for atoms)."""
    if observation is None:
        return np.zeros(0)
    if hasattr(observation, 'as_array'):
        return observation.as_array()
    return np.atleast_1d(np.asarray(observation, dtype=float))


def score_increment(obs_model, observation, state, action, jacobian):
    """
    (dg/dalpha) / g at a single state, with dg/dalpha = dg/da . da/dalpha.

    Returns:
        (increment vector, degenerate flag); where g = 0 with a nonzero
        gradient the increment is 0 and the flag is set.
    """
    g = float(np.asarray(obs_model.density(observation, state, action)))
    dg = np.asarray(obs_model.density_grad_action(observation, state, action), dtype=float) @ jacobian
    if g > 0:
        return dg / g, False
    return np.zeros_like(dg), bool(np.any(dg != 0))


def simulate_episode(transitions, observation, policy, filter_config, horizon, fine_step, seed,
                     episode=0, schedule=None, reward=None, hook=None):
    """
    Run one episode on the fine grid with observations at policy-chosen instants.

    Every fine step the true state and every particle cloud advance. At an
    observation instant the current action is used to sample one observation
    per target, the reference score and the clouds are updated, and the policy
    picks the next action from the fresh filter statistics.

    Args:
        transitions: One TransitionModel per target
        observation: ObservationModel shared by all targets (factorised density)
        policy: PolicyEvaluator
        filter_config: FilterConfig
        horizon: Episode duration in seconds
        fine_step: State time step in seconds
        seed: Master seed
        episode: Episode index (selects the random streams)
        schedule: Callable (t_n, action) -> t_{n+1}, on the fine grid
        reward: Callable (true states, list of mean_f) -> (r, per-target dR/dm)
        hook: Optional EpisodeHook

    Returns:
        EpisodeRecord
    """
    import particle_filter as pf  # particle_filter depends on this module

    n_steps = fine_step_count(horizon, fine_step)
    if schedule is None:
        raise ValueError("an observation schedule is required")
    n_targets = len(transitions)
    test_function = filter_config.test_function or pf.position_test_function

    truth_stream = make_stream(seed, 'truth', episode)
    sensor_stream = make_stream(seed, 'sensor', episode)
    filter_streams = [make_stream(seed, 'filter', episode, p) for p in range(n_targets)]
    resample_streams = [make_stream(seed, 'resample', episode, p) for p in range(n_targets)]

    states = np.stack([np.asarray(tm.init(draw_noise(truth_stream, tm.noise_dim)), dtype=float)
                       for tm in transitions])
    _check_finite(states, 0, 'initial state')

    clouds = [pf.initialize_cloud(tm, filter_config.n_particles, policy.dim, filter_streams[p])
              for p, tm in enumerate(transitions)]
    stats = [pf.statistics(c, test_function) for c in clouds]

    fine_times = np.arange(n_steps + 1) * fine_step
    record = EpisodeRecord(
        fine_times=fine_times,
        states=np.zeros((n_steps + 1,) + states.shape),
        rewards=np.zeros(n_steps + 1),
        filter_estimates=np.zeros((n_steps + 1, n_targets, len(stats[0].mean_f))),
    )
    reference_score = np.zeros(policy.dim)

    def record_instant(k):
        record.states[k] = states
        record.filter_estimates[k] = [s.mean_f for s in stats]
        if reward is not None:
            r, dr = reward(states, [s.mean_f for s in stats])
            record.rewards[k] = r
        else:
            r, dr = 0.0, None
        if hook is not None:
            hook.on_fine_step(k, fine_times[k], states, stats, reference_score, r, dr)

    record_instant(0)
    if n_steps == 0:
        record.reference_score = reference_score
        return record

    action, jacobian = policy(stats, 0.0)
    next_obs_step = int(round(schedule(0.0, action) / fine_step))
    n = 0

    for k in range(1, n_steps + 1):
        t = fine_times[k]
        states = np.stack([tm.step(states[p], draw_noise(truth_stream, tm.noise_dim), fine_step)
                           for p, tm in enumerate(transitions)])
        _check_finite(states, k, 'true state')
        clouds = [pf.predict(c, transitions[p], fine_step, filter_streams[p]) for p, c in enumerate(clouds)]

        if k == next_obs_step:
            obs_model = observation.at_time(t)
            ys = tuple(obs_model.sample(states[p], action, draw_noise(sensor_stream, obs_model.noise_dim))
                       for p in range(n_targets))
            for y in ys:
                _check_finite(observation_payload(y), k, 'observation')

            for p in range(n_targets):
                inc, degenerate = score_increment(obs_model, ys[p], states[p], action, jacobian)
                reference_score = reference_score + inc
                record.degenerate_increments += int(degenerate)

            ess_row = []
            for p in range(n_targets):
                cloud = pf.update(clouds[p], ys[p], action, obs_model, jacobian, observation_index=n)
                cloud, _ = pf.resample(cloud, resample_streams[p], filter_config.resampling,
                                       filter_config.ess_threshold)
                clouds[p] = cloud
                ess_row.append(cloud.last_ess)
            stats = [pf.statistics(c, test_function) for c in clouds]

            record.obs_times.append(float(t))
            record.actions.append(action)
            record.observations.append(ys)
            record.ess.append(tuple(ess_row))
            n += 1

            action, jacobian = policy(stats, t)
            next_obs_step = int(round(schedule(t, action) / fine_step))
        else:
            stats = [pf.statistics(c, test_function) for c in clouds]

        record_instant(k)

    record.reference_score = reference_score
    record.degenerate_increments += sum(c.degenerate_increments for c in clouds)
    return record
