"""
Experiment configuration: loading, preset overrides, validation and hashing
"""
import copy
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

from models import (
    ConfigError, FilterKind, InitialStateMode, MembershipMode, ModelError, ObjectiveMode, PolicyKind, ThetaMode,
    Tolerances, __version__,
)
from network_model import NetworkModel, load_model, model_from_dict


@dataclass
class PartitionConfig:
    M: int = 10
    rng_seed: int = 0
    subspace: str = "position"


@dataclass
class PolicyConfig:
    kind: str = PolicyKind.ADVERSARIAL_OUTWARD.value
    noise: float = 0.1
    scale: float = 1.0
    position_gain: float = 1.0
    velocity_gain: float = 1.0


@dataclass
class ThetaConfig:
    mode: str = ThetaMode.NOMINAL.value
    fixed: Optional[List[List[float]]] = None


@dataclass
class CoverageConfig:
    M_list: List[int] = field(default_factory=lambda: [1, 10])
    gamma_list: List[float] = field(default_factory=lambda: [0.15, 0.3])
    partitions_per_cell: int = 5
    n_samples: int = 10_000


@dataclass
class CompareConfig:
    n_pairs: int = 200
    input_scale: float = 1.0


SECTIONS = {
    'partition': PartitionConfig,
    'policy': PolicyConfig,
    'theta': ThetaConfig,
    'coverage': CoverageConfig,
    'compare': CompareConfig,
}


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs"""
    model: Dict[str, Any]
    name: str = "experiment"
    gamma: Optional[float] = None
    dt: Optional[float] = None
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    objective_mode: str = ObjectiveMode.MAXIMIZE_TRACE.value
    filter: str = FilterKind.EXPLICIT.value
    membership: str = MembershipMode.GLOBAL_SUM.value
    distributed: bool = False
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    theta: ThetaConfig = field(default_factory=ThetaConfig)
    x0_mode: str = InitialStateMode.SAMPLE_IN_UNION.value
    x0: Optional[List[float]] = None
    horizon: int = 500
    episodes: int = 20
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "results"
    tolerances: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in SECTIONS:
                value = {s.name: getattr(value, s.name) for s in fields(value)}
            data[f.name] = copy.deepcopy(value)
        return data

    def tolerance_set(self) -> Tolerances:
        return Tolerances.from_dict(self.tolerances)

    def hash(self) -> str:
        return config_hash(self)

    def provenance(self) -> Dict:
        """Block embedded into every output file"""
        return {
            'config_hash': self.hash(),
            'code_version': __version__,
            'master_seed': self.master_seed,
            'partition_seed': self.partition.rng_seed,
        }


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _merge(base: Dict, override: Dict) -> Dict:
    """Recursive dict update; override wins"""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _section(name: str, data: Any):
    cls = SECTIONS[name]
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {sorted(unknown)}")
    return cls(**data)


def _enum_field(name: str, value: str, enum_cls):
    try:
        enum_cls(value)
    except ValueError:
        choices = [e.value for e in enum_cls]
        raise ConfigError(f"{name}: {value!r} is not one of {choices}") from None


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _is_number(value: Any, integer: bool = False) -> bool:
    if isinstance(value, bool):
        return False
    return isinstance(value, int) if integer else isinstance(value, (int, float))


def _typed(name: str, value: Any, kind: str, optional: bool = False):
    if optional and value is None:
        return
    if kind == 'int':
        ok, expected = _is_number(value, integer=True), "an integer"
    elif kind == 'number':
        ok, expected = _is_number(value), "a number"
    elif kind == 'str':
        ok, expected = isinstance(value, str), "a string"
    elif kind == 'bool':
        ok, expected = isinstance(value, bool), "true or false"
    elif kind == 'int-list':
        ok, expected = isinstance(value, list) and all(_is_number(v, integer=True) for v in value), "a list of integers"
    elif kind == 'number-list':
        ok, expected = isinstance(value, list) and all(_is_number(v) for v in value), "a list of numbers"
    else:
        raise ValueError(kind)
    if not ok:
        raise ConfigError(f"{name}: expected {expected}, got {value!r}")


def check_types(config: ExperimentConfig):
    """Type of every scalar and list field, before any range check compares it"""
    for name, value, kind, optional in (
        ('name', config.name, 'str', False),
        ('gamma', config.gamma, 'number', True),
        ('dt', config.dt, 'number', True),
        ('partition.M', config.partition.M, 'int', False),
        ('partition.rng_seed', config.partition.rng_seed, 'int', False),
        ('partition.subspace', config.partition.subspace, 'str', False),
        ('objective_mode', config.objective_mode, 'str', False),
        ('filter', config.filter, 'str', False),
        ('membership', config.membership, 'str', False),
        ('distributed', config.distributed, 'bool', False),
        ('policy.kind', config.policy.kind, 'str', False),
        ('policy.noise', config.policy.noise, 'number', False),
        ('policy.scale', config.policy.scale, 'number', False),
        ('policy.position_gain', config.policy.position_gain, 'number', False),
        ('policy.velocity_gain', config.policy.velocity_gain, 'number', False),
        ('theta.mode', config.theta.mode, 'str', False),
        ('x0_mode', config.x0_mode, 'str', False),
        ('x0', config.x0, 'number-list', True),
        ('horizon', config.horizon, 'int', False),
        ('episodes', config.episodes, 'int', False),
        ('coverage.M_list', config.coverage.M_list, 'int-list', False),
        ('coverage.gamma_list', config.coverage.gamma_list, 'number-list', False),
        ('coverage.partitions_per_cell', config.coverage.partitions_per_cell, 'int', False),
        ('coverage.n_samples', config.coverage.n_samples, 'int', False),
        ('compare.n_pairs', config.compare.n_pairs, 'int', False),
        ('compare.input_scale', config.compare.input_scale, 'number', False),
        ('master_seed', config.master_seed, 'int', False),
        ('workers', config.workers, 'int', False),
        ('output_dir', config.output_dir, 'str', False),
    ):
        _typed(name, value, kind, optional)
    if config.theta.fixed is not None:
        _require(isinstance(config.theta.fixed, list), "theta.fixed: expected a list with one parameter list per agent")
        for i, theta in enumerate(config.theta.fixed):
            _typed(f"theta.fixed[{i}]", theta, 'number-list')
    _require(isinstance(config.tolerances, dict), f"tolerances: expected an object, got {config.tolerances!r}")
    for key, value in config.tolerances.items():
        _typed(f"tolerances.{key}", value, 'number')


def validate_config(config: ExperimentConfig):
    """Field-level checks; raises ConfigError on the first problem"""
    _require(isinstance(config.model, dict) and bool(config.model), "model: expected a builder, path or inline model")
    check_types(config)
    if 'path' in config.model:
        _typed('model.path', config.model['path'], 'str')
        _require(os.path.isfile(config.model['path']), f"model.path: file {config.model['path']!r} does not exist")
    if config.gamma is not None:
        _require(0.0 <= config.gamma < 1.0, f"gamma: must lie in [0, 1), got {config.gamma}")
    if config.dt is not None:
        _require(config.dt > 0, f"dt: must be positive, got {config.dt}")
    _require(config.partition.M >= 1, f"partition.M: must be at least 1, got {config.partition.M}")
    _require(config.partition.subspace in ('position', 'full'),
             f"partition.subspace: {config.partition.subspace!r} is not one of ['position', 'full']")
    _require(config.horizon >= 1, f"horizon: must be at least 1, got {config.horizon}")
    _require(config.episodes >= 1, f"episodes: must be at least 1, got {config.episodes}")
    _require(config.workers >= 1, f"workers: must be at least 1, got {config.workers}")
    _require(config.coverage.n_samples >= 1, f"coverage.n_samples: must be at least 1, got {config.coverage.n_samples}")
    _require(config.coverage.partitions_per_cell >= 1,
             f"coverage.partitions_per_cell: must be at least 1, got {config.coverage.partitions_per_cell}")
    _require(bool(config.coverage.M_list) and all(M >= 1 for M in config.coverage.M_list),
             "coverage.M_list: need a nonempty list of values >= 1")
    _require(bool(config.coverage.gamma_list) and all(0.0 <= g < 1.0 for g in config.coverage.gamma_list),
             "coverage.gamma_list: need a nonempty list of values in [0, 1)")
    _require(config.compare.n_pairs >= 1, f"compare.n_pairs: must be at least 1, got {config.compare.n_pairs}")
    _require(config.policy.scale > 0, f"policy.scale: must be positive, got {config.policy.scale}")
    _require(config.policy.noise >= 0, f"policy.noise: must be non-negative, got {config.policy.noise}")
    _enum_field('objective_mode', config.objective_mode, ObjectiveMode)
    _enum_field('filter', config.filter, FilterKind)
    _enum_field('membership', config.membership, MembershipMode)
    _enum_field('policy.kind', config.policy.kind, PolicyKind)
    _enum_field('theta.mode', config.theta.mode, ThetaMode)
    _enum_field('x0_mode', config.x0_mode, InitialStateMode)
    if config.x0_mode == InitialStateMode.GIVEN_POINT.value:
        _require(config.x0 is not None, "x0: required when x0_mode is 'given-point'")
    if config.theta.mode == ThetaMode.FIXED.value:
        _require(config.theta.fixed is not None, "theta.fixed: required when theta.mode is 'fixed'")
    config.tolerance_set()


def config_from_dict(data: Dict) -> ExperimentConfig:
    """Resolve a preset (if named), apply overrides and validate"""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    data = dict(data)
    preset = data.pop('preset', None)
    if preset is not None:
        from sample_data import PRESETS
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        data = _merge(PRESETS[preset], data)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}")
    if 'model' not in data:
        raise ConfigError("model: required field is missing")
    kwargs = {key: (_section(key, value) if key in SECTIONS else value) for key, value in data.items()}
    try:
        config = ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    validate_config(config)
    return config


def load_config(path: str, overrides: Optional[Dict] = None) -> ExperimentConfig:
    try:
        with open(path) as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    if overrides:
        data = _merge(data, overrides)
    return config_from_dict(data)


def build_model(config: ExperimentConfig) -> NetworkModel:
    """NetworkModel described by the config, with gamma and dt overrides applied"""
    description = copy.deepcopy(config.model)
    try:
        if 'path' in description:
            model = load_model(description['path'])
            if config.gamma is None and config.dt is None:
                return model
            description = model.to_dict()
        if 'builder' in description:
            params = description.setdefault('params', {})
            if config.gamma is not None:
                params['gamma'] = config.gamma
            if config.dt is not None:
                params['dt'] = config.dt
        else:
            if config.gamma is not None:
                description['gamma'] = config.gamma
                # explicit boxes would shadow the new uncertainty level
                for agent in description.get('agents', []):
                    agent.pop('theta_lo', None)
                    agent.pop('theta_hi', None)
            if config.dt is not None:
                description['dt'] = config.dt
        return model_from_dict(description)
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from exc
