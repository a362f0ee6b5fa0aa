#!/usr/bin/env python3
"""
IPA Learner Module
Policy-gradient estimation along simulated episodes and stochastic gradient ascent:
1. Per-episode gradient estimate from the filter statistics and score accumulators
2. Step-size schedule and projected ascent step
3. Batched training loop with a learning curve
4. Oracles: common-random-number finite differences, exact enumeration on a tiny HMM
5. Monte Carlo policy evaluation
"""

import itertools
import math
import sys
import time
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax

from pomdp_core import NumericalError, fine_step_count, simulate_episode
from radar_env import Detection, build_radar_models, measurement_function, wrap_angle


MAX_ORACLE_TRAJECTORIES = 10 ** 6
MAX_ORACLE_STATES = 5
MAX_ORACLE_OBSERVATIONS = 4
MAX_ORACLE_HORIZON = 4
ORACLE_TOLERANCE = 1e-10
MIN_FD_SEEDS = 30

LEARNING_CURVE_COLUMNS = ('k', 'eta_k', 'episodes', 'mean_return', 'return_stderr', 'grad_norm')


class GradientError(NumericalError):
    """Non-finite gradient contribution; carries the three-term breakdown at failure."""

    def __init__(self, message, instant=None, term_breakdown=None):
        super().__init__(message, instant=instant, quantity='gradient')
        self.term_breakdown = term_breakdown


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyParams:
    alpha: Tuple[float, ...]
    iterate_index: int = 0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.alpha):
            raise NumericalError(f"policy parameters must be finite, got {self.alpha}",
                                 instant=self.iterate_index, quantity='alpha')

    @classmethod
    def of(cls, alpha, iterate_index=0):
        if isinstance(alpha, PolicyParams):
            return alpha
        return cls(tuple(float(v) for v in np.ravel(alpha)), iterate_index)

    @property
    def dim(self):
        return len(self.alpha)

    def as_array(self):
        return np.array(self.alpha, dtype=float)


@dataclass(frozen=True)
class GradientEstimate:
    """
    One episode's gradient estimate. term_breakdown rows are the
    M(f s).dR, -M(f) M(s).dR and r.s contributions; grad is their sum.
    """
    grad: np.ndarray
    value: float
    term_breakdown: np.ndarray
    final_score: np.ndarray
    n_observations: int = 0
    degenerate_increments: int = 0

    @classmethod
    def from_terms(cls, terms, value, final_score, n_observations=0, degenerate_increments=0):
        terms = np.asarray(terms, dtype=float)
        return cls(grad=terms.sum(axis=0), value=float(value), term_breakdown=terms,
                   final_score=np.asarray(final_score, dtype=float), n_observations=n_observations,
                   degenerate_increments=degenerate_increments)


@dataclass(frozen=True)
class StepSchedule:
    """eta_k = eta0 / (1 + k / k0): positive, non-increasing, tends to zero, not summable."""
    eta0: float = 5e-6
    k0: float = 50.0

    def __post_init__(self):
        if self.eta0 < 0 or self.k0 <= 0:
            raise ValueError(f"step schedule needs eta0 >= 0 and k0 > 0, got ({self.eta0}, {self.k0})")

    def __call__(self, k):
        return self.eta0 / (1.0 + k / self.k0)


# ---------------------------------------------------------------------------
# Per-episode estimator
# ---------------------------------------------------------------------------

class IPAAccumulator:
    """
    Episode hook accumulating the per-step gradient

        (m(f s) - m(f) m(s)) . dR/dm + r . s_ref

    summed over targets, as a left Riemann sum over the fine grid.
    """

    def __init__(self, dim, fine_step, n_steps):
        self.terms = np.zeros((3, dim))
        self.fine_step = fine_step
        self.n_steps = n_steps

    def on_fine_step(self, k, t, states, stats, reference_score, reward, reward_grad):
        if k >= self.n_steps:
            return
        dim = self.terms.shape[1]
        step = np.zeros((3, dim))
        for p, s in enumerate(stats):
            d_r = np.asarray(reward_grad[p], dtype=float)
            step[0] += d_r @ s.mean_fs
            step[1] -= float(d_r @ s.mean_f) * s.mean_s
        step[2] = reward * np.asarray(reference_score, dtype=float)
        step *= self.fine_step
        if not np.all(np.isfinite(step)):
            raise GradientError(f"non-finite gradient at fine step {k}; terms {step.tolist()}",
                                instant=k, term_breakdown=step)
        self.terms += step

    def estimate(self, record):
        return GradientEstimate.from_terms(self.terms, record.episode_return(), record.reference_score,
                                           n_observations=len(record.obs_times),
                                           degenerate_increments=record.degenerate_increments)


def _models(scenario, models):
    return models if models is not None else build_radar_models(scenario)


def simulate(alpha, scenario, seed, episode=0, models=None, hook=None):
    """One episode under the policy with parameters alpha; returns the EpisodeRecord."""
    models = _models(scenario, models)
    policy = models.make_policy(PolicyParams.of(alpha).alpha)
    return simulate_episode(models.transitions, models.observation, policy, models.filter_config,
                            models.horizon, models.fine_step, seed, episode=episode,
                            schedule=models.schedule, reward=models.reward, hook=hook)


def run_ipa_episode(alpha, scenario, seed, episode=0, models=None):
    """
    Simulate one episode and return its gradient estimate.

    The reward at every fine step uses the true simulated state; the filter
    statistics and the score accumulators carry the policy sensitivity.

    Args:
        alpha: PolicyParams or parameter vector
        scenario: ScenarioConfig (ignored when models is given)
        seed: Master seed
        episode: Episode index
        models: Prebuilt RadarModels (or a compatible bundle)

    Returns:
        GradientEstimate
    """
    models = _models(scenario, models)
    params = PolicyParams.of(alpha)
    accumulator = IPAAccumulator(params.dim, models.fine_step, fine_step_count(models.horizon, models.fine_step))
    record = simulate(params, None, seed, episode, models=models, hook=accumulator)
    return accumulator.estimate(record)


def episode_return(alpha, scenario, seed, episode=0, models=None):
    """J estimate of one episode: left Riemann sum of the reward."""
    return simulate(alpha, scenario, seed, episode, models=models).episode_return()


# ---------------------------------------------------------------------------
# Ascent
# ---------------------------------------------------------------------------

def sga_update(alpha, grad, schedule, bounds=None, verbose=False):
    """
    One ascent step alpha_{k+1} = alpha_k + eta_k grad, clipped to the box.

    Args:
        alpha: PolicyParams at iterate k
        grad: GradientEstimate or gradient vector
        schedule: StepSchedule (or any k -> eta_k callable)
        bounds: Optional (lower, upper) vectors of the parameter box
        verbose: Report when the box is active

    Returns:
        PolicyParams at iterate k + 1
    """
    params = PolicyParams.of(alpha)
    g = np.asarray(grad.grad if isinstance(grad, GradientEstimate) else grad, dtype=float)
    if g.shape != (params.dim,):
        raise ValueError(f"gradient has shape {g.shape}, expected ({params.dim},)")
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient at iterate {params.iterate_index}",
                             instant=params.iterate_index, quantity='gradient')

    eta = schedule(params.iterate_index)
    stepped = params.as_array() + eta * g
    if not np.all(np.isfinite(stepped)):
        raise NumericalError(f"ascent step produced non-finite parameters at iterate {params.iterate_index}",
                             instant=params.iterate_index, quantity='alpha')
    if bounds is not None:
        lower, upper = (np.asarray(b, dtype=float) for b in bounds)
        clipped = np.clip(stepped, lower, upper)
        if verbose and not np.array_equal(clipped, stepped):
            print(f"\n⚠️  Iterate {params.iterate_index + 1}: parameter box active on "
                  f"{np.flatnonzero(clipped != stepped).tolist()}")
        stepped = clipped
    return PolicyParams(tuple(float(v) for v in stepped), params.iterate_index + 1)


def _episode_task(args):
    alpha, models, seed, episode = args
    return run_ipa_episode(alpha, None, seed, episode, models=models)


def _run_batch(pool, alpha, models, seed, episodes):
    tasks = [(alpha, models, seed, e) for e in episodes]
    if pool is None:
        return [_episode_task(t) for t in tasks]
    return list(pool.imap(_episode_task, tasks))


def _progress(done, total, start, extra=''):
    elapsed = time.time() - start
    rate = done / elapsed if elapsed > 0 else 0
    percent = done / total
    eta = (total - done) / rate if rate > 0 else 0
    bar = '█' * int(30 * percent) + '-' * (30 - int(30 * percent))
    sys.stdout.write(f"\r|{bar}| {percent:.1%} | {done}/{total} | ETA: {eta:.0f}s{extra}")
    sys.stdout.flush()


def _stderr(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float('nan')
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def train(scenario, iterations=None, episodes_per_iteration=None, seed=None, schedule=None,
          models=None, alpha0=None, n_workers=None, baseline_batch=None, verbose=False):
    """
    Stochastic gradient ascent on the policy parameters.

    Each iteration averages the gradient estimates of a batch of episodes and
    applies one projected ascent step. Iteration 0 runs max(batch, baseline_batch)
    episodes so the starting policy's return is measured tightly; later
    iterations run batch episodes. Episode indices run consecutively over the
    whole run, so every episode has its own streams.

    Returns:
        (final PolicyParams, learning curve DataFrame with columns
         k, eta_k, episodes, mean_return, return_stderr, grad_norm,
         alpha_0 ... alpha_{d-1})
    """
    training = scenario.training
    iterations = training.iterations if iterations is None else iterations
    batch = training.batch if episodes_per_iteration is None else episodes_per_iteration
    seed = scenario.seed if seed is None else seed
    schedule = schedule or StepSchedule(training.eta0, training.k0)
    n_workers = training.n_workers if n_workers is None else n_workers
    baseline_batch = training.baseline_batch if baseline_batch is None else baseline_batch
    if iterations < 1 or batch < 1:
        raise ValueError(f"iterations and episodes per iteration must be >= 1, got {iterations}, {batch}")
    first = max(batch, baseline_batch)

    models = _models(scenario, models)
    params = PolicyParams.of(training.alpha0 if alpha0 is None else alpha0)
    bounds = (training.alpha_min, training.alpha_max)

    if verbose:
        print("=" * 80)
        print(f"TRAINING: {iterations} iterations x {batch} episodes ({first} at k = 0), {n_workers} worker(s)")
        print(f"   alpha0 = {params.alpha}")
        print("=" * 80)

    rows = []
    start = time.time()
    pool = Pool(processes=n_workers) if n_workers > 1 else None
    try:
        for k in range(iterations):
            episodes = range(first) if k == 0 else range(first + (k - 1) * batch, first + k * batch)
            try:
                estimates = _run_batch(pool, params, models, seed, episodes)
            except NumericalError as e:
                raise NumericalError(f"iteration {k}: {e}", instant=e.instant, quantity=e.quantity) from e

            grad = np.mean([est.grad for est in estimates], axis=0)
            returns = [est.value for est in estimates]
            eta = schedule(params.iterate_index)
            row = {
                'k': k,
                'eta_k': eta,
                'episodes': len(episodes),
                'mean_return': float(np.mean(returns)),
                'return_stderr': _stderr(returns),
                'grad_norm': float(np.linalg.norm(grad)),
            }
            row.update({f"alpha_{i}": v for i, v in enumerate(params.alpha)})
            rows.append(row)

            params = sga_update(params, grad, schedule, bounds=bounds, verbose=verbose)
            if verbose:
                _progress(k + 1, iterations, start, f" | return {row['mean_return']:.3f}")
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    if verbose:
        print(f"\n✅ Training complete in {time.time() - start:.1f}s. alpha = "
              f"({', '.join(f'{v:.4f}' for v in params.alpha)})")
    columns = list(LEARNING_CURVE_COLUMNS) + [f"alpha_{i}" for i in range(params.dim)]
    return params, pd.DataFrame(rows, columns=columns)


def improvement_over_baseline(curve, window=10):
    """
    Gain of the mean return over the last `window` iterations (iteration 0
    excluded) against iteration 0, and the gain in pooled standard errors.

    Returns:
        (gain, z); both nan for a single-iteration curve, z nan when a
        standard error is unavailable
    """
    if len(curve) < 2:
        return float('nan'), float('nan')
    base = curve.iloc[0]
    tail = curve.iloc[1:].tail(window)
    gain = float(tail['mean_return'].mean() - base['mean_return'])
    pooled = math.sqrt(base['return_stderr'] ** 2 + float(np.sum(tail['return_stderr'] ** 2)) / len(tail) ** 2)
    z = gain / pooled if pooled > 0 else float('nan')
    return gain, z


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def _fd_task(args):
    alpha, models, seed, steps = args
    alpha = np.asarray(alpha, dtype=float)
    diffs = np.zeros(len(alpha))
    for i, h in enumerate(steps):
        e = np.zeros(len(alpha))
        e[i] = h
        diffs[i] = (episode_return(alpha + e, None, seed, models=models)
                    - episode_return(alpha - e, None, seed, models=models)) / (2.0 * h)
    return diffs


def fd_gradient(alpha, scenario, epsilon, seeds, return_fn=None, models=None, relative=False, n_workers=1):
    """
    Central finite differences of J with common random numbers.

    Both sides of every difference use the same seed, so identical episodes
    cancel exactly. With relative=True the step on coordinate i is
    epsilon * max(1, |alpha_i|).

    Args:
        alpha: PolicyParams or vector
        scenario: ScenarioConfig (ignored when models or return_fn is given)
        epsilon: Step size (> 0)
        seeds: At least 30 seeds
        return_fn: Optional (alpha vector, seed) -> return; replaces the simulator

    Returns:
        (seed-averaged gradient, standard error per coordinate)
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    seeds = list(seeds)
    if len(seeds) < MIN_FD_SEEDS:
        raise ValueError(f"finite differences need at least {MIN_FD_SEEDS} seeds, got {len(seeds)}")

    a = PolicyParams.of(alpha).as_array()
    steps = epsilon * np.maximum(1.0, np.abs(a)) if relative else np.full(len(a), float(epsilon))

    if return_fn is not None:
        diffs = []
        for seed in seeds:
            row = np.zeros(len(a))
            for i, h in enumerate(steps):
                e = np.zeros(len(a))
                e[i] = h
                row[i] = (return_fn(a + e, seed) - return_fn(a - e, seed)) / (2.0 * h)
            diffs.append(row)
    else:
        models = _models(scenario, models)
        tasks = [(a, models, seed, steps) for seed in seeds]
        if n_workers > 1:
            with Pool(processes=n_workers) as pool:
                diffs = list(pool.imap(_fd_task, tasks))
        else:
            diffs = [_fd_task(t) for t in tasks]

    diffs = np.asarray(diffs)
    return diffs.mean(axis=0), diffs.std(axis=0, ddof=1) / np.sqrt(len(diffs))


def ipa_gradient(alpha, scenario, seed, episodes, models=None, n_workers=1):
    """
    Batch-averaged IPA gradient over episodes 0 .. episodes-1.

    Returns:
        (mean gradient, standard error, list of GradientEstimate)
    """
    models = _models(scenario, models)
    params = PolicyParams.of(alpha)
    if n_workers > 1:
        with Pool(processes=n_workers) as pool:
            estimates = _run_batch(pool, params, models, seed, range(episodes))
    else:
        estimates = _run_batch(None, params, models, seed, range(episodes))
    grads = np.array([e.grad for e in estimates])
    stderr = grads.std(axis=0, ddof=1) / np.sqrt(len(grads)) if len(grads) > 1 else np.full(params.dim, np.nan)
    return grads.mean(axis=0), stderr, estimates


def cosine_similarity(u, v):
    """Cosine of the angle between u and v; None when either vector is zero."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return None
    return float(u @ v / (nu * nv))


# ---------------------------------------------------------------------------
# Policy evaluation
# ---------------------------------------------------------------------------

def dwell_by_target(record, constants):
    """
    Mean dwell per target over the observations whose beam pointed closest to
    that target's true azimuth; nan for a target the beam never favoured.
    """
    n_targets = record.states.shape[1]
    totals = np.zeros(n_targets)
    counts = np.zeros(n_targets)
    for t, a in zip(record.obs_times, record.actions):
        k = int(round(t / record.fine_step))
        azimuth = measurement_function(record.states[k], constants.at_time(t))[:, 1]
        p = int(np.argmin(np.abs(wrap_angle(azimuth - a.theta))))
        totals[p] += a.delta
        counts[p] += 1
    return np.divide(totals, counts, out=np.full(n_targets, np.nan), where=counts > 0)


def episode_summary(record, constants=None):
    """
    Return, per-target RMS position error and detection rate of one episode;
    with the radar constants also the per-target mean dwell.
    """
    err = record.states[:, :, :2] - record.filter_estimates[:, :, :2]
    rms = np.sqrt(np.mean(np.sum(err ** 2, axis=2), axis=0))
    n_targets = record.states.shape[1]
    if record.observations:
        detected = np.array([[isinstance(y, Detection) for y in ys] for ys in record.observations], dtype=float)
        rate = detected.mean(axis=0)
    else:
        rate = np.full(n_targets, np.nan)
    summary = {'return': record.episode_return(), 'rms_error': rms, 'detection_rate': rate}
    if constants is not None:
        summary['mean_dwell'] = dwell_by_target(record, constants)
    return summary


def _evaluate_task(args):
    alpha, models, seed, episode = args
    return episode_summary(simulate(alpha, None, seed, episode, models=models), getattr(models, 'constants', None))


def evaluate_policy(alpha, scenario, episodes, seed=None, models=None, n_workers=1):
    """
    Monte Carlo estimate of J at fixed alpha.

    Returns:
        dict with mean_return, return_stderr (None for a single episode),
        rms_error and detection_rate (per-target means), mean_dwell (per
        target, when the models carry radar constants), episodes
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    models = _models(scenario, models)
    seed = scenario.seed if seed is None else seed
    params = PolicyParams.of(alpha)
    tasks = [(params, models, seed, e) for e in range(episodes)]
    if n_workers > 1:
        with Pool(processes=n_workers) as pool:
            summaries = list(pool.imap(_evaluate_task, tasks))
    else:
        summaries = [_evaluate_task(t) for t in tasks]

    returns = [s['return'] for s in summaries]
    stderr = _stderr(returns)
    result = {
        'episodes': episodes,
        'mean_return': float(np.mean(returns)),
        'return_stderr': None if math.isnan(stderr) else stderr,
        'rms_error': np.mean([s['rms_error'] for s in summaries], axis=0).tolist(),
        'detection_rate': np.nanmean([s['detection_rate'] for s in summaries], axis=0).tolist(),
    }
    if 'mean_dwell' in summaries[0]:
        result['mean_dwell'] = pd.DataFrame([s['mean_dwell'] for s in summaries]).mean().tolist()
    return result


# ---------------------------------------------------------------------------
# Exact oracle on a tiny hidden Markov model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TinyHMMSpec:
    """
    Finite HMM whose emission law depends on parameters alpha:

        g_alpha(y | x) = softmax_y(logits[x, :] + sum_j alpha_j features[j, x, :])

    X_1 ~ prior, X_{t+1} ~ transition[X_t, :], one observation per step, and
    reward R(x, m) = reward_table[x] - reward_weight * (f(x) - m)^2 with
    m = E[f(X_t) | Y_1..Y_t]. The criterion is J = sum_{t=1..H} E[R_t].
    """
    prior: np.ndarray          # (S,)
    transition: np.ndarray     # (S, S)
    logits: np.ndarray         # (S, Y)
    features: np.ndarray       # (d, S, Y)
    alpha: np.ndarray          # (d,)
    f_values: np.ndarray       # (S,)
    reward_table: np.ndarray   # (S,)
    reward_weight: float = 1.0
    horizon: int = 1

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        n_states = len(prior)
        if trans.shape != (n_states, n_states):
            raise ValueError(f"transition must be ({n_states}, {n_states}), got {trans.shape}")
        if np.any(prior < 0) or not np.isclose(prior.sum(), 1.0) or \
                np.any(trans < 0) or not np.allclose(trans.sum(axis=1), 1.0):
            raise ValueError("prior and transition rows must be probability vectors")
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 3 or feats.shape[1:] != np.shape(self.logits) or feats.shape[0] != len(self.alpha):
            raise ValueError("features must have shape (len(alpha), S, Y) matching logits")
        if not 1 <= self.horizon <= MAX_ORACLE_HORIZON:
            raise ValueError(f"horizon must lie in 1..{MAX_ORACLE_HORIZON}, got {self.horizon}")
        if n_states > MAX_ORACLE_STATES or feats.shape[2] > MAX_ORACLE_OBSERVATIONS:
            raise ValueError(f"tiny HMM allows at most {MAX_ORACLE_STATES} states and {MAX_ORACLE_OBSERVATIONS} "
                             f"observations, got {n_states} and {feats.shape[2]}")

    @property
    def n_states(self):
        return len(self.prior)

    @property
    def n_obs(self):
        return np.shape(self.logits)[1]

    @property
    def dim(self):
        return len(self.alpha)

    def emission(self):
        """(g (S, Y), dg/dalpha (S, Y, d))."""
        feats = np.asarray(self.features, dtype=float)
        z = np.asarray(self.logits, dtype=float) + np.einsum('j,jxy->xy', np.asarray(self.alpha, dtype=float), feats)
        g = softmax(z, axis=1)
        centred = feats - np.einsum('xy,jxy->jx', g, feats)[:, :, None]
        return g, np.einsum('xy,jxy->xyj', g, centred)

    def reward(self, x, m):
        """(R(x, m), dR/dm) broadcast over x and m."""
        diff = np.asarray(self.f_values)[x] - m
        return np.asarray(self.reward_table)[x] - self.reward_weight * diff ** 2, 2.0 * self.reward_weight * diff

    def n_trajectories(self):
        base = self.n_states * self.n_obs
        return sum(base ** t for t in range(1, self.horizon + 1))


def exact_value_and_gradient(spec):
    """
    J and dJ/dalpha by exhaustive summation over observation sequences, with
    the forward filter and its parameter derivative carried along every branch.
    """
    g, dg = spec.emission()
    prior = np.asarray(spec.prior, dtype=float)
    trans = np.asarray(spec.transition, dtype=float)
    f = np.asarray(spec.f_values, dtype=float)
    states = np.arange(spec.n_states)

    # branches over y_1..y_t: phi (B, S) = P(X_t, y_1..t), dphi (B, S, d)
    phi = prior[None, :] * g.T
    dphi = prior[None, :, None] * dg.transpose(1, 0, 2)
    value = 0.0
    grad = np.zeros(spec.dim)
    for t in range(1, spec.horizon + 1):
        if t > 1:
            pred = phi @ trans
            dpred = np.einsum('bsj,sx->bxj', dphi, trans)
            phi = (pred[:, None, :] * g.T[None, :, :]).reshape(-1, spec.n_states)
            dphi = (dpred[:, None, :, :] * g.T[None, :, :, None]
                    + pred[:, None, :, None] * dg.transpose(1, 0, 2)[None, :, :, :]).reshape(-1, spec.n_states, spec.dim)
        z = phi.sum(axis=1)
        dz = dphi.sum(axis=1)
        m = phi @ f / z
        dm = (np.einsum('bsj,s->bj', dphi, f) - m[:, None] * dz) / z[:, None]
        r, dr = spec.reward(states[None, :], m[:, None])
        value += float(np.sum(phi * r))
        grad += np.einsum('bsj,bs->j', dphi, r) + np.einsum('bs,bs,bj->j', phi, dr, dm)
    return value, grad


def ipa_decomposition(spec):
    """
    The three expectation terms of the gradient decomposition, summed over
    t = 1..H, by enumeration of every (state path, observation path) pair:
    E[dR . M(f S)], -E[dR . M(f) M(S)] and E[R S].
    """
    g, dg = spec.emission()
    log_ratio = dg / g[:, :, None]
    prior = np.asarray(spec.prior, dtype=float)
    trans = np.asarray(spec.transition, dtype=float)
    f = np.asarray(spec.f_values, dtype=float)

    terms = np.zeros((3, spec.dim))
    for t in range(1, spec.horizon + 1):
        xs = np.array(list(itertools.product(range(spec.n_states), repeat=t)))   # (Nx, t)
        ys = np.array(list(itertools.product(range(spec.n_obs), repeat=t)))      # (Ny, t)
        p_x = prior[xs[:, 0]] * np.prod(trans[xs[:, :-1], xs[:, 1:]], axis=1)
        p_y_given_x = np.prod(g[xs[:, None, :], ys[None, :, :]], axis=2)         # (Nx, Ny)
        joint = p_x[:, None] * p_y_given_x
        score = log_ratio[xs[:, None, :], ys[None, :, :]].sum(axis=2)           # (Nx, Ny, d)

        p_y = joint.sum(axis=0)
        post = joint / p_y[None, :]
        f_last = f[xs[:, -1]]
        m_f = np.einsum('xy,x->y', post, f_last)
        m_s = np.einsum('xy,xyj->yj', post, score)
        m_fs = np.einsum('xy,x,xyj->yj', post, f_last, score)

        r, dr = spec.reward(xs[:, -1][:, None], m_f[None, :])
        terms[0] += np.einsum('xy,xy,yj->j', joint, dr, m_fs)
        terms[1] -= np.einsum('xy,xy,y,yj->j', joint, dr, m_f, m_s)
        terms[2] += np.einsum('xy,xy,xyj->j', joint, r, score)
    return terms


def enumerate_oracle(spec, max_trajectories=MAX_ORACLE_TRAJECTORIES):
    """
    Exact gradient and its three-term decomposition on a tiny HMM.

    Raises:
        ValueError: more than max_trajectories (state path, observation path) pairs
        NumericalError: the decomposition does not sum to the exact gradient

    Returns:
        (exact gradient (d,), decomposition terms (3, d))
    """
    if spec.n_trajectories() > max_trajectories:
        raise ValueError(f"HMM too large for enumeration: {spec.n_trajectories():,} trajectories "
                         f"(limit {max_trajectories:,})")
    _, exact = exact_value_and_gradient(spec)
    terms = ipa_decomposition(spec)
    gap = float(np.max(np.abs(terms.sum(axis=0) - exact))) if spec.dim else 0.0
    if gap > ORACLE_TOLERANCE * max(1.0, float(np.max(np.abs(exact), initial=0.0))):
        raise NumericalError(f"decomposition differs from exact gradient by {gap:.3e}", quantity='decomposition')
    return exact, terms
