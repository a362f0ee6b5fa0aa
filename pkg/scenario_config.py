#!/usr/bin/env python3
"""
Scenario Configuration Module
Loads a scenario file (JSON) over the built-in defaults, applies key=value
overrides and validates everything into an immutable ScenarioConfig.

File layout (every field optional, unknown fields are errors):

    {
      "seed": 12345,
      "radar":    {"kappa", "beamwidth", "pfa", "sigma_r", "sigma_beta", "sigma_rdot",
                   "rx_obs", "ry_obs", "vx_obs", "vy_obs"},
      "physical": null | {"transmit_power", "antenna_gain", "wavelength", "cross_section",
                          "system_temperature", "losses", "boltzmann", "gain_exponent"},
      "targets":  [{"rx", "ry", "vx", "vy"}, ...],
      "timing":   {"horizon", "fine_step", "overhead"},
      "dynamics": {"sigma", "init_pos_std", "init_vel_std"},
      "filter":   {"n_particles", "resampling", "ess_threshold"},
      "policy":   {"delta_min", "delta_max", "uncertainty_floor"},
      "reward":   {"length_scale"},
      "training": {"eta0", "k0", "batch", "baseline_batch", "iterations", "alpha0", "alpha_min", "alpha_max", "n_workers"},
      "gradcheck": {"ipa_episodes", "fd_seeds", "epsilon", "relative", "cosine_threshold"}
    }

Angles are radians, distances meters, times seconds.
"""

import copy
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

from detection_theory import PhysicalRadarParams, kappa_from_physical


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration."""


# Kappa puts a boresight target at 50 km with a 0.1 s dwell at SNR 9
# (P_d ~ 0.4 at pfa = 1e-4).
DEFAULT_KAPPA = 9.0 * 50_000.0 ** 4 / 0.1

DEFAULT_SCENARIO = {
    'seed': 12345,
    'radar': {
        'kappa': DEFAULT_KAPPA,
        'beamwidth': math.radians(2.0),
        'pfa': 1e-4,
        'sigma_r': 10.0,
        'sigma_beta': math.radians(0.3),
        'sigma_rdot': 1.0,
        'rx_obs': 0.0,
        'ry_obs': 0.0,
        'vx_obs': 0.0,
        'vy_obs': 0.0,
    },
    'physical': None,
    'targets': [
        {'rx': 20_000.0, 'ry': 3_000.0, 'vx': -15.0, 'vy': 5.0},     # near, slow
        {'rx': 45_000.0, 'ry': -8_000.0, 'vx': -220.0, 'vy': 60.0},  # far, fast
    ],
    'timing': {
        'horizon': 20.0,
        'fine_step': 0.05,
        'overhead': 0.02,
    },
    'dynamics': {
        'sigma': 2.0,
        'init_pos_std': 50.0,
        'init_vel_std': 5.0,
    },
    'filter': {
        'n_particles': 1000,
        'resampling': 'multinomial',
        'ess_threshold': None,
    },
    'policy': {
        'delta_min': 0.01,
        'delta_max': 0.5,
        'uncertainty_floor': 1.0,
    },
    'reward': {
        'length_scale': 1.0,
    },
    'training': {
        'eta0': 5e-6,
        'k0': 50.0,
        'batch': 10,
        'baseline_batch': 100,
        'iterations': 200,
        'alpha0': [2.0, 0.0, -2.0, 0.0],
        'alpha_min': [-10.0, -10.0, -10.0, -10.0],
        'alpha_max': [10.0, 10.0, 10.0, 10.0],
        'n_workers': 1,
    },
    'gradcheck': {
        'ipa_episodes': 200,
        'fd_seeds': 30,
        'epsilon': 1e-2,
        'relative': True,
        'cosine_threshold': 0.7,
    },
}


@dataclass(frozen=True)
class RadarBlock:
    kappa: float
    beamwidth: float
    pfa: float
    sigma_r: float
    sigma_beta: float
    sigma_rdot: float
    rx_obs: float
    ry_obs: float
    vx_obs: float
    vy_obs: float


@dataclass(frozen=True)
class TargetBlock:
    rx: float
    ry: float
    vx: float
    vy: float


@dataclass(frozen=True)
class TimingBlock:
    horizon: float
    fine_step: float
    overhead: float


@dataclass(frozen=True)
class DynamicsBlock:
    sigma: float
    init_pos_std: float
    init_vel_std: float


@dataclass(frozen=True)
class FilterBlock:
    n_particles: int
    resampling: str
    ess_threshold: Optional[float]


@dataclass(frozen=True)
class PolicyBlock:
    delta_min: float
    delta_max: float
    uncertainty_floor: float


@dataclass(frozen=True)
class RewardBlock:
    length_scale: float


@dataclass(frozen=True)
class TrainingBlock:
    eta0: float
    k0: float
    batch: int
    baseline_batch: int
    iterations: int
    alpha0: Tuple[float, ...]
    alpha_min: Tuple[float, ...]
    alpha_max: Tuple[float, ...]
    n_workers: int


@dataclass(frozen=True)
class GradcheckBlock:
    ipa_episodes: int
    fd_seeds: int
    epsilon: float
    relative: bool
    cosine_threshold: float


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    radar: RadarBlock
    physical: Optional[PhysicalRadarParams]
    targets: Tuple[TargetBlock, ...]
    timing: TimingBlock
    dynamics: DynamicsBlock
    filter: FilterBlock
    policy: PolicyBlock
    reward: RewardBlock
    training: TrainingBlock
    gradcheck: GradcheckBlock

    @property
    def n_targets(self):
        return len(self.targets)


_BLOCKS = {
    'radar': RadarBlock,
    'timing': TimingBlock,
    'dynamics': DynamicsBlock,
    'filter': FilterBlock,
    'policy': PolicyBlock,
    'reward': RewardBlock,
    'training': TrainingBlock,
    'gradcheck': GradcheckBlock,
}

_TUPLE_FIELDS = {'alpha0', 'alpha_min', 'alpha_max'}


def _check_keys(data, allowed, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'scenario'}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        prefix = f"{where}." if where else ''
        raise ConfigError(f"unknown config field(s): {', '.join(prefix + k for k in unknown)}")


def _merge(defaults, data, where=''):
    """Deep-merge a parsed file over the defaults, rejecting unknown fields."""
    _check_keys(data, defaults, where)
    merged = copy.deepcopy(defaults)
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if isinstance(defaults.get(key), dict) and value is not None:
            merged[key] = _merge(defaults[key], value, path)
        elif key == 'physical' and value is not None:
            names = [f.name for f in fields(PhysicalRadarParams)]
            _check_keys(value, names, path)
            merged[key] = dict(value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


_PHYSICAL_FIELDS = {f.name for f in fields(PhysicalRadarParams)}


def apply_overrides(data, overrides):
    """
    Apply 'dotted.path=value' overrides in place. List entries are addressed by
    index ('targets.1.vx=-200'). Values are parsed as JSON, falling back to a
    bare string.
    """
    for item in overrides or ():
        if '=' not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split('=', 1)
        parts = key.strip().split('.')
        if parts[0] == 'physical' and len(parts) > 1 and data.get('physical') is None:
            data['physical'] = {}

        node = data
        for depth, part in enumerate(parts):
            last = depth == len(parts) - 1
            if isinstance(node, list):
                try:
                    index = int(part)
                    node[index]
                except (ValueError, IndexError):
                    raise ConfigError(f"override {key!r}: bad list index {part!r}") from None
            elif isinstance(node, dict):
                allowed = _PHYSICAL_FIELDS if parts[0] == 'physical' and depth == 1 else node
                if part not in allowed:
                    raise ConfigError(f"unknown config field: {key}")
                index = part
            else:
                raise ConfigError(f"override {key!r} descends into a scalar")
            if last:
                node[index] = _parse_value(raw)
            else:
                node = node[index]
    return data


def _positive(value, name):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be a positive finite number, got {value!r}")


def _finite(value, name):
    if not (isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)):
        raise ConfigError(f"{name} must be a finite number, got {value!r}")


def _build_block(cls, data, where):
    _check_keys(data, [f.name for f in fields(cls)], where)
    missing = [f.name for f in fields(cls) if f.name not in data]
    if missing:
        raise ConfigError(f"{where}: missing field(s) {', '.join(missing)}")
    values = {}
    for f in fields(cls):
        value = data[f.name]
        if f.name in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}.{f.name} must be a list of numbers")
            for v in value:
                _finite(v, f"{where}.{f.name}")
            value = tuple(float(v) for v in value)
        values[f.name] = value
    return cls(**values)


def _validate(cfg):
    r = cfg.radar
    for name in ('kappa', 'beamwidth', 'sigma_r', 'sigma_beta', 'sigma_rdot'):
        _positive(getattr(r, name), f"radar.{name}")
    for name in ('rx_obs', 'ry_obs', 'vx_obs', 'vy_obs'):
        _finite(getattr(r, name), f"radar.{name}")
    if not (isinstance(r.pfa, (int, float)) and 0.0 < r.pfa < 1.0):
        raise ConfigError(f"radar.pfa must lie in (0, 1), got {r.pfa!r}")

    if not cfg.targets:
        raise ConfigError("targets: at least one target is required")
    for i, tgt in enumerate(cfg.targets):
        for name in ('rx', 'ry', 'vx', 'vy'):
            _finite(getattr(tgt, name), f"targets.{i}.{name}")
        if tgt.rx - r.rx_obs <= 0:
            raise ConfigError(f"targets.{i}: target must start in front of the radar (rx > rx_obs)")

    t = cfg.timing
    _positive(t.fine_step, 'timing.fine_step')
    _finite(t.horizon, 'timing.horizon')
    if t.horizon < 0:
        raise ConfigError(f"timing.horizon must be >= 0, got {t.horizon}")
    steps = round(t.horizon / t.fine_step)
    if abs(steps * t.fine_step - t.horizon) > 1e-9 * max(1.0, t.horizon):
        raise ConfigError(f"timing.fine_step {t.fine_step} does not divide timing.horizon {t.horizon}")
    _finite(t.overhead, 'timing.overhead')
    if t.overhead < 0:
        raise ConfigError("timing.overhead must be >= 0")

    d = cfg.dynamics
    for name in ('sigma', 'init_pos_std', 'init_vel_std'):
        _finite(getattr(d, name), f"dynamics.{name}")
        if getattr(d, name) < 0:
            raise ConfigError(f"dynamics.{name} must be >= 0")

    f = cfg.filter
    if not isinstance(f.n_particles, int) or isinstance(f.n_particles, bool) or f.n_particles < 1:
        raise ConfigError(f"filter.n_particles must be an integer >= 1, got {f.n_particles!r}")
    if f.resampling not in ('multinomial', 'systematic'):
        raise ConfigError(f"filter.resampling must be 'multinomial' or 'systematic', got {f.resampling!r}")
    if f.ess_threshold is not None and not (isinstance(f.ess_threshold, (int, float))
                                            and 0.0 < f.ess_threshold <= 1.0):
        raise ConfigError(f"filter.ess_threshold must be null or lie in (0, 1], got {f.ess_threshold!r}")

    p = cfg.policy
    _positive(p.delta_min, 'policy.delta_min')
    _positive(p.delta_max, 'policy.delta_max')
    if p.delta_min >= p.delta_max:
        raise ConfigError("policy.delta_min must be < policy.delta_max")
    _positive(p.uncertainty_floor, 'policy.uncertainty_floor')

    _positive(cfg.reward.length_scale, 'reward.length_scale')

    tr = cfg.training
    _finite(tr.eta0, 'training.eta0')
    if tr.eta0 < 0:
        raise ConfigError("training.eta0 must be >= 0")
    _positive(tr.k0, 'training.k0')
    for name in ('batch', 'baseline_batch', 'iterations', 'n_workers'):
        value = getattr(tr, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"training.{name} must be an integer >= 1, got {value!r}")
    if not (len(tr.alpha0) == len(tr.alpha_min) == len(tr.alpha_max)):
        raise ConfigError("training.alpha0, alpha_min and alpha_max must have the same length")
    for lo, a0, hi in zip(tr.alpha_min, tr.alpha0, tr.alpha_max):
        if not lo <= a0 <= hi:
            raise ConfigError("training.alpha0 must lie inside [alpha_min, alpha_max]")

    g = cfg.gradcheck
    for name in ('ipa_episodes', 'fd_seeds'):
        value = getattr(g, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"gradcheck.{name} must be an integer >= 1, got {value!r}")
    _positive(g.epsilon, 'gradcheck.epsilon')
    if not isinstance(g.relative, bool):
        raise ConfigError("gradcheck.relative must be true or false")
    _finite(g.cosine_threshold, 'gradcheck.cosine_threshold')

    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg.seed!r}")


def _from_merged(merged, kappa_given=True):
    physical = None
    if merged['physical'] is not None:
        try:
            physical = PhysicalRadarParams(**merged['physical'])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"physical: {e}") from None
        if not kappa_given:
            merged['radar']['kappa'] = kappa_from_physical(physical)

    if not isinstance(merged['targets'], list):
        raise ConfigError("targets must be a list")
    targets = tuple(_build_block(TargetBlock, t, f"targets.{i}") for i, t in enumerate(merged['targets']))
    blocks = {name: _build_block(cls, merged[name], name) for name, cls in _BLOCKS.items()}
    cfg = ScenarioConfig(seed=merged['seed'], physical=physical, targets=targets, **blocks)
    _validate(cfg)
    return cfg


def _kappa_given(data, overrides=()):
    in_file = 'kappa' in (data.get('radar') or {})
    in_overrides = any(o.split('=', 1)[0].strip() == 'radar.kappa' for o in overrides or ())
    return in_file or in_overrides


def scenario_from_dict(data, overrides=()):
    """
    Build and validate a ScenarioConfig from a (partial) scenario dict.

    With a physical block, radar.kappa is derived from the radar equation
    unless the dict (or an override) sets it explicitly.
    """
    merged = apply_overrides(_merge(DEFAULT_SCENARIO, data), overrides)
    return _from_merged(merged, kappa_given=_kappa_given(data, overrides))


def scenario_to_dict(cfg):
    """Plain-JSON view of a ScenarioConfig (tuples become lists)."""
    data = asdict(cfg)
    data['targets'] = [dict(t) for t in data['targets']]
    for name in _TUPLE_FIELDS:
        data['training'][name] = list(data['training'][name])
    return data


def default_scenario():
    return scenario_from_dict({})


def load_scenario(path, overrides=()):
    """
    Load a scenario file, apply overrides and validate.

    Args:
        path: Path to the JSON scenario file (None for the built-in defaults)
        overrides: Iterable of 'dotted.key=value' strings

    Returns:
        ScenarioConfig
    """
    if path is None:
        return scenario_from_dict({}, overrides)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(data, overrides)
