"""Flat, typed run configuration read from TOML with command-line overrides.

Precedence, lowest first: built-in defaults, the config file, the
``VPRTEMPO_WORKERS`` environment variable (worker count only), then
``--set key=value`` flags.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, InvalidInputError
from .imaging import PreprocessConfig
from .snn import Hyperparams

WORKERS_ENV = "VPRTEMPO_WORKERS"


@dataclass(frozen=True)
class RunConfig:
    # network and learning
    theta_max: float = 0.5
    eta_stdp_init: float = 0.005
    eta_itp_init: float = 0.15
    f_min: float = 0.2
    f_max: float = 0.9
    p_exc: float = 0.1
    p_inh: float = 0.5
    constant_input: float = 0.1
    x_force: float = 0.5
    epsilon: float = 1e-6
    epochs: int = 4
    homeostasis: str = "text"
    weight_init: str = "uniform_l1"
    dtype: str = "float32"
    # preprocessing
    lam: float = 0.5
    target_width: int = 28
    target_height: int = 28
    patch_width: int = 7
    patch_height: int = 7
    gamma_formula: str = "log_ratio"
    # ensemble
    places_per_module: int = 1000
    feature_size: int = 0  # 0 means twice the input size
    seed: int = 0
    shuffle: bool = False
    workers: int = 1
    # dataset; empty lists and zero mean "use the manifest"
    train_variants: tuple = ()
    query_variants: tuple = ()
    stride: int = 0
    limit: int = 0
    query_exclude: tuple = ()
    tolerance: int = 0
    # evaluation
    recall_ns: tuple = (1, 5, 10, 15, 20, 25)
    sad_full_pipeline: bool = False

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            expected = _type_of(f.name)
            if expected is tuple and isinstance(value, list):
                object.__setattr__(self, f.name, _freeze(value))
            elif expected is float and isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, f.name, float(value))
            elif not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ConfigError(f"config key {f.name!r} must be {expected.__name__}, got {value!r}")
        for name in ("places_per_module", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("feature_size", "stride", "limit", "tolerance"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if any(not isinstance(n, int) or n < 1 for n in self.recall_ns):
            raise ConfigError("recall_ns must be positive integers")
        try:
            self.hyperparams()
            self.preprocess()
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(**{f.name: getattr(self, f.name) for f in fields(Hyperparams)})

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(**{f.name: getattr(self, f.name) for f in fields(PreprocessConfig)})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_toml(self) -> str:
        return "".join(f"{k} = {_toml_value(v)}\n" for k, v in self.to_dict().items())


def _freeze(value):
    return tuple(_freeze(v) if isinstance(v, list) else v for v in value)


_DEFAULTS = RunConfig.__dataclass_fields__


def _type_of(name: str) -> type:
    return type(_DEFAULTS[name].default)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def _check_keys(keys: Iterable[str], source: str) -> None:
    unknown = sorted(set(keys) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} in {source}")


def parse_override(item: str) -> tuple[str, Any]:
    """``key=value`` with a TOML literal value; bare words are taken as strings."""
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    _check_keys([key], "--set")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; tables {nested} are not allowed")
    _check_keys(data, str(path))
    return data


def load_config(path=None, overrides: Iterable[str] = (), flags: Optional[Mapping[str, Any]] = None,
                env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Build the effective configuration; ``flags`` entries that are ``None`` are ignored."""
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_toml(Path(path)))
    if env.get(WORKERS_ENV):
        try:
            values["workers"] = int(env[WORKERS_ENV])
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    for key, value in (flags or {}).items():
        if value is not None:
            _check_keys([key], "command line")
            values[key] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
