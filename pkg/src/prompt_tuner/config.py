"""Run configuration: typed specs, strict JSON (de)serialization, and
dotted-key overrides for the command line.

Unknown keys are rejected rather than ignored, so a typo in a config file or
a `--set` override fails loudly at parse time.
"""

import dataclasses
import types
import typing
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .prompter import Geometry
from .zo import DISTRIBUTIONS, Schedule


@dataclass(frozen=True)
class OracleSpec:
    """Which classifier to adapt: the builtin frozen toy model (trained once on
    clean source glyphs) or a remote prediction endpoint."""

    kind: str = "builtin"
    seed: int = 0
    source_n_per_class: int = 32
    source_noise: float = 0.05
    endpoint: str | None = None
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in ("builtin", "remote"):
            raise ConfigurationError(f"oracle.kind must be builtin|remote, got {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigurationError("remote oracle needs an endpoint")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "biased"
    rho: float = 0.9
    ratio: str = "1:1"
    n_per_class: int = 64
    n_test_per_class: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("biased", "loc"):
            raise ConfigurationError(f"dataset.kind must be biased|loc, got {self.kind!r}")


@dataclass(frozen=True)
class ScheduleSpec:
    """Gain constants; a_offset None defers to the 10%-of-iterations convention."""

    a0: float = 0.05
    c0: float = 0.01
    alpha: float = 0.602
    gamma: float = 0.101
    a_offset: float | None = None

    def build(self, iterations):
        offset = self.a_offset if self.a_offset is not None else 0.1 * iterations
        return Schedule(a0=self.a0, c0=self.c0, alpha=self.alpha,
                        gamma=self.gamma, A=offset)


@dataclass(frozen=True)
class RunConfig:
    geometry: Geometry = field(default_factory=Geometry)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    shots_train: int = 16
    shots_val: int = 4
    iterations: int = 100
    batch_size: int | None = None
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    num_perturbations: int = 5
    beta: float = 0.9
    dist: str = "segmented_uniform"
    loss_weights: tuple = (1.0, 1.0, 1.0)
    use_surgery: bool = True
    eval_every: int = 50
    seed: int = 0
    output_dir: str | None = None

    def __post_init__(self):
        for name in ("shots_train", "shots_val", "num_perturbations", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if not (0 <= self.beta < 1):
            raise ConfigurationError("beta must lie in [0, 1)")
        if self.dist not in DISTRIBUTIONS:
            raise ConfigurationError(f"dist must be one of {DISTRIBUTIONS}")
        if len(self.loss_weights) != 3:
            raise ConfigurationError("loss_weights must have 3 entries")
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if self.dataset.n_per_class < self.shots_train + self.shots_val:
            raise ConfigurationError(
                "dataset.n_per_class too small for the requested shots"
            )

    @property
    def refinement_enabled(self):
        return self.loss_weights[1] != 0.0 or self.loss_weights[2] != 0.0


_NESTED = {
    "geometry": Geometry,
    "oracle": OracleSpec,
    "dataset": DatasetSpec,
    "schedule": ScheduleSpec,
}


def _from_mapping(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or cls.__name__} must be an object")
    allowed = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigurationError(f"unknown config key {path + key!r}")
        sub = _NESTED.get(key) if cls is RunConfig else None
        if sub is not None:
            kwargs[key] = _from_mapping(sub, value, path=f"{key}.")
        else:
            kwargs[key] = _coerce(value, allowed[key], path + key)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def _base_type(fld):
    """Name of the field's primary type, unwrapping `X | None` annotations."""
    t = fld.type
    if isinstance(t, str):
        return t.split("|")[0].strip()
    if isinstance(t, types.UnionType):
        args = [a for a in typing.get_args(t) if a is not type(None)]
        t = args[0] if args else type(None)
    return getattr(t, "__name__", "")


def _coerce(value, fld, path):
    """Light type normalization so JSON's single number type maps onto the
    annotated field; mismatches raise instead of silently truncating."""
    base = _base_type(fld)
    if value is None:
        return None
    if base == "int":
        if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
            raise ConfigurationError(f"{path} must be an integer, got {value!r}")
        return int(value)
    if base == "float":
        if isinstance(value, bool):
            raise ConfigurationError(f"{path} must be a number, got {value!r}")
        return float(value)
    if base == "bool" and not isinstance(value, bool):
        raise ConfigurationError(f"{path} must be true/false, got {value!r}")
    if base == "tuple" and isinstance(value, list):
        return tuple(value)
    return value


def config_from_dict(data):
    return _from_mapping(RunConfig, data)


def config_to_dict(config):
    out = dataclasses.asdict(config)
    out["loss_weights"] = list(config.loss_weights)
    return out


def _parse_override_value(raw, fld, path):
    base = _base_type(fld)
    if raw.lower() in ("null", "none"):
        return None
    if base == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{path} must be true/false, got {raw!r}")
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "tuple":
            return tuple(float(v) for v in raw.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {path}: {raw!r}") from exc
    return raw


def apply_overrides(data, overrides):
    """Apply `key.path=value` strings onto a config dict, type-checked against
    the dataclass schema. Returns the mutated dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        cls, node = RunConfig, data
        for i, part in enumerate(parts):
            fields = {f.name: f for f in dataclasses.fields(cls)}
            if part not in fields:
                raise ConfigurationError(f"unknown config key {dotted!r}")
            last = i == len(parts) - 1
            if not last:
                if part not in _NESTED:
                    raise ConfigurationError(f"{dotted!r} indexes into a scalar")
                cls = _NESTED[part]
                node = node.setdefault(part, {})
            else:
                node[part] = _parse_override_value(raw, fields[part], dotted)
    return data
