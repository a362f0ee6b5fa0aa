#!/usr/bin/env python3
"""
sim_cli.py

Command-line front end for the radar scheduling toolkit: training runs,
single-episode dumps, Monte Carlo evaluation and the gradient check.

Usage:
  python sim_cli.py train --config scenario.json --out runs/train
  python sim_cli.py simulate --config scenario.json --alpha runs/train/alpha_final.json --out runs/sim
  python sim_cli.py evaluate --config scenario.json --alpha runs/train/alpha_final.json --episodes 100 --out runs/eval
  python sim_cli.py gradcheck --config scenario.json --seeds 30 --epsilon 0.01 --out runs/check

Any config field can be overridden with --set (repeatable), e.g.
  --set training.iterations=1 --set filter.n_particles=200 --set targets.0.vx=-20

Exit codes: 0 success, 1 config / validation error (or failed gradient check),
2 numerical failure. Output files of a failed command are removed.

Outputs:
  train      learning_curve.csv, alpha_final.json, manifest.json
  simulate   trajectory.csv, actions.csv, manifest.json
  evaluate   eval.json, manifest.json
  gradcheck  gradcheck.json, manifest.json

trajectory.csv columns: t, then per target p: x{p}_rx, x{p}_ry, x{p}_vx, x{p}_vy,
est{p}_rx, est{p}_ry, and finally reward.
actions.csv columns: t, theta, delta, then per target p: detect_{p}, r_{p},
beta_{p}, rdot_{p} (blank measurement on a miss).
"""

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import psutil

import ipa_learner
from pomdp_core import NumericalError
from radar_env import STATE_COLUMNS, Detection
from scenario_config import ConfigError, load_scenario, scenario_to_dict

VERSION = '0.1.0'


def get_ram():
    return psutil.Process(os.getpid()).memory_info().rss / 1024 / 1024


def _jsonable(value):
    """Plain-JSON view; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


class RunOutputs:
    """Tracks the files a command writes so a failed run can remove them."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files = []

    def path(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        target = self.out_dir / name
        self.files.append(target)
        return target

    def write_json(self, name, payload):
        self.path(name).write_text(json.dumps(_jsonable(payload), indent=2, allow_nan=False) + "\n")

    def write_csv(self, name, df):
        df.to_csv(self.path(name), index=False)

    def remove(self):
        for f in self.files:
            if f.exists():
                f.unlink()
        self.files = []

    def names(self):
        return [f.name for f in self.files]


def load_alpha(path, dim):
    """Read a parameter file ({"alpha": [...]} or a bare list) and check its dimension."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"alpha file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    alpha = data.get('alpha') if isinstance(data, dict) else data
    if not isinstance(alpha, list) or not all(isinstance(v, (int, float)) for v in alpha):
        raise ConfigError(f"{path}: expected a list of numbers under 'alpha'")
    if len(alpha) != dim:
        raise ConfigError(f"{path}: alpha has {len(alpha)} components but the policy class expects {dim}")
    return tuple(float(v) for v in alpha)


def _scenario(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_scenario(args.config, overrides)


def _alpha(args, scenario):
    if getattr(args, 'alpha', None):
        return load_alpha(args.alpha, len(scenario.training.alpha0))
    return scenario.training.alpha0


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args, scenario, outputs):
    params, curve = ipa_learner.train(scenario, verbose=True)
    outputs.write_csv('learning_curve.csv', curve)
    outputs.write_json('alpha_final.json', {'alpha': list(params.alpha), 'iterate_index': params.iterate_index})
    gain, z = ipa_learner.improvement_over_baseline(curve)
    print(f"   Iteration-0 return: {curve['mean_return'].iloc[0]:.4f} over {curve['episodes'].iloc[0]} episodes | "
          f"last-10 gain: {gain:.4f} ({z:.1f} pooled stderr)")
    return 0


def trajectory_frame(record):
    n_targets = record.states.shape[1]
    data = {'t': record.fine_times}
    for p in range(n_targets):
        for j, name in enumerate(STATE_COLUMNS):
            data[f"x{p}_{name}"] = record.states[:, p, j]
        data[f"est{p}_rx"] = record.filter_estimates[:, p, 0]
        data[f"est{p}_ry"] = record.filter_estimates[:, p, 1]
    data['reward'] = record.rewards
    return pd.DataFrame(data)


def actions_frame(record):
    n_targets = record.states.shape[1]
    rows = []
    for t, a, ys in zip(record.obs_times, record.actions, record.observations):
        row = {'t': t, 'theta': a.theta, 'delta': a.delta}
        for p in range(n_targets):
            y = ys[p]
            hit = isinstance(y, Detection)
            row[f"detect_{p}"] = int(hit)
            row[f"r_{p}"] = y.r if hit else np.nan
            row[f"beta_{p}"] = y.beta if hit else np.nan
            row[f"rdot_{p}"] = y.rdot if hit else np.nan
        rows.append(row)
    columns = ['t', 'theta', 'delta'] + [f"{c}_{p}" for p in range(n_targets)
                                         for c in ('detect', 'r', 'beta', 'rdot')]
    return pd.DataFrame(rows, columns=columns)


def cmd_simulate(args, scenario, outputs):
    alpha = _alpha(args, scenario)
    record = ipa_learner.simulate(alpha, scenario, scenario.seed)
    outputs.write_csv('trajectory.csv', trajectory_frame(record))
    outputs.write_csv('actions.csv', actions_frame(record))
    print(f"   {len(record.fine_times)} fine steps, {len(record.obs_times)} observations, "
          f"return {record.episode_return():.4f}")
    return 0


def cmd_evaluate(args, scenario, outputs):
    if args.episodes < 1:
        raise ConfigError(f"--episodes must be >= 1, got {args.episodes}")
    alpha = _alpha(args, scenario)
    result = ipa_learner.evaluate_policy(alpha, scenario, args.episodes,
                                         n_workers=scenario.training.n_workers)
    result.update({'alpha': list(alpha), 'seed': scenario.seed})
    outputs.write_json('eval.json', result)
    stderr = result['return_stderr']
    print(f"   Mean return {result['mean_return']:.4f}"
          + (f" ± {stderr:.4f}" if stderr is not None else " (single episode)"))
    if 'mean_dwell' in result:
        print("   Mean dwell per target: " + ", ".join(f"{d:.4f} s" for d in result['mean_dwell']))
    return 0


def cmd_gradcheck(args, scenario, outputs):
    check = scenario.gradcheck
    epsilon = check.epsilon if args.epsilon is None else args.epsilon
    if not epsilon > 0:
        raise ConfigError(f"--epsilon must be > 0, got {epsilon}")
    n_seeds = check.fd_seeds if args.seeds is None else args.seeds
    episodes = check.ipa_episodes if args.episodes is None else args.episodes
    alpha = _alpha(args, scenario)
    workers = scenario.training.n_workers

    print(f"   IPA: {episodes} episodes | FD: {n_seeds} seed pairs, epsilon {epsilon}"
          f"{' (relative)' if check.relative else ''}")
    ipa_mean, ipa_err, _ = ipa_learner.ipa_gradient(alpha, scenario, scenario.seed, episodes, n_workers=workers)
    seeds = [scenario.seed + i for i in range(n_seeds)]
    fd_mean, fd_err = ipa_learner.fd_gradient(alpha, scenario, epsilon, seeds, relative=check.relative,
                                              n_workers=workers)

    cosine = ipa_learner.cosine_similarity(ipa_mean, fd_mean)
    both_zero = not np.any(ipa_mean) and not np.any(fd_mean)
    if both_zero:
        status, passed = 'both-zero: pass', True
    elif cosine is None:
        status, passed = 'one-zero: fail', False
    else:
        passed = cosine >= check.cosine_threshold
        status = 'pass' if passed else 'fail'

    outputs.write_json('gradcheck.json', {
        'alpha': list(alpha),
        'epsilon': epsilon,
        'relative_epsilon': check.relative,
        'ipa_episodes': episodes,
        'fd_seeds': n_seeds,
        'ipa_mean': ipa_mean,
        'ipa_stderr': ipa_err,
        'fd_mean': fd_mean,
        'fd_stderr': fd_err,
        'cosine': cosine,
        'cosine_threshold': check.cosine_threshold,
        'status': status,
    })
    for i in range(len(alpha)):
        print(f"   alpha_{i}: IPA {ipa_mean[i]: .4e} ± {ipa_err[i]:.1e} | FD {fd_mean[i]: .4e} ± {fd_err[i]:.1e}")
    if passed:
        print(f"✅ Gradient check {status}" + (f" (cosine {cosine:.3f})" if cosine is not None else ''))
        return 0
    print(f"❌ Gradient check {status}" + (f" (cosine {cosine:.3f} < {check.cosine_threshold})"
                                          if cosine is not None else ''))
    return 1


COMMANDS = {
    'train': cmd_train,
    'simulate': cmd_simulate,
    'evaluate': cmd_evaluate,
    'gradcheck': cmd_gradcheck,
}


def run_command(args):
    """Run one subcommand; map failures to exit codes and clean up partial outputs."""
    outputs = RunOutputs(args.out)
    started = time.time()
    print("=" * 80)
    print(f"🏁 {args.command.upper()} START. RAM: {get_ram():.1f} MB")
    print("=" * 80)
    try:
        scenario = _scenario(args)
        rc = COMMANDS[args.command](args, scenario, outputs)
        outputs.write_json('manifest.json', {
            'command': args.command,
            'version': VERSION,
            'seed': scenario.seed,
            'config': scenario_to_dict(scenario),
            'outputs': outputs.names() + ['manifest.json'],
            'timings': {'started': started, 'finished': time.time(),
                        'wall_seconds': time.time() - started},
            'peak_ram_mb': get_ram(),
        })
    except NumericalError as e:
        outputs.remove()
        print(f"❌ Numerical failure: {e}")
        return 2
    except (ConfigError, ValueError) as e:
        outputs.remove()
        print(f"❌ {e}")
        return 1
    except BaseException:
        outputs.remove()
        raise
    print(f"{'✅' if rc == 0 else '⚠️ '} {args.command} finished in {time.time() - started:.1f}s "
          f"-> {outputs.out_dir}")
    return rc


def build_parser():
    p = argparse.ArgumentParser(description="Radar beam scheduling: IPA policy-gradient training and checks")
    sub = p.add_subparsers(dest='command', required=True)

    def common(sp):
        sp.add_argument('--config', '-c', help='Scenario JSON file (default: built-in scenario)')
        sp.add_argument('--out', '-o', default='out', help='Output directory')
        sp.add_argument('--seed', type=int, help='Master seed (overrides the config)')
        sp.add_argument('--set', action='append', metavar='KEY=VALUE', help='Config override (repeatable)')
        return sp

    common(sub.add_parser('train', help='Run stochastic gradient ascent'))
    sim = common(sub.add_parser('simulate', help='Dump one episode'))
    sim.add_argument('--alpha', help='Policy parameter file (default: training.alpha0)')
    ev = common(sub.add_parser('evaluate', help='Monte Carlo estimate of the return'))
    ev.add_argument('--alpha', help='Policy parameter file (default: training.alpha0)')
    ev.add_argument('--episodes', '-n', type=int, default=100, help='Number of episodes')
    gc = common(sub.add_parser('gradcheck', help='Compare IPA and finite-difference gradients'))
    gc.add_argument('--alpha', help='Policy parameter file (default: training.alpha0)')
    gc.add_argument('--epsilon', type=float, help='Finite-difference step (default: gradcheck.epsilon)')
    gc.add_argument('--seeds', type=int, help='Number of common-random-number seeds (default: gradcheck.fd_seeds)')
    gc.add_argument('--episodes', '-n', type=int, help='IPA episodes (default: gradcheck.ipa_episodes)')
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run_command(args)


if __name__ == '__main__':
    sys.exit(main())
