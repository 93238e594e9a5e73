"""Run configuration: nested dataclasses loaded from YAML with dotted overrides."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .errors import ConfigError
from .loss import LossConfig
from .optim import OptimConfig

CONFIG_DIR = Path(__file__).parent / "configs"


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``5e-4`` as a float (PyYAML's YAML 1.1 would not)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)$
                |^[-+]?(?:[0-9][0-9_]*)?\.[0-9_]+(?:[eE][-+]?[0-9]+)?$
                |^[-+]?[0-9][0-9_]*\.$
                |^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$""", re.X),
    list("-+0123456789."))


def _yaml_load(text):
    return yaml.load(text, Loader=_Loader)


@dataclass
class ConvSpec:
    channels: int = 64
    kernel: List[int] = field(default_factory=lambda: [4, 3])
    dilation: List[int] = field(default_factory=lambda: [1, 1])

    def as_tuple(self):
        return (self.kernel[0], self.kernel[1], self.dilation[0], self.dilation[1])


def _default_layers():
    return [ConvSpec(64, [4, 3], [1, 1]), ConvSpec(64, [4, 3], [4, 3]),
            ConvSpec(64, [4, 3], [16, 9])]


@dataclass
class ModelConfig:
    layers: List[ConvSpec] = field(default_factory=_default_layers)
    input_shape: List[int] = field(default_factory=lambda: [100, 40])
    in_channels: int = 1
    n_classes: int = 12
    mode: str = "LIF"
    surrogate_a: float = 10.0
    eps: float = 1e-8
    readout: str = "mean"
    freeze_beta: bool = False
    freeze_b: bool = False
    causal: bool = False
    reset_detach: bool = False
    stop_grad_norm: bool = False


@dataclass
class InitConfig:
    threshold_mean: float = 1.0
    threshold_std: float = 0.01
    beta_mean: float = 0.7
    beta_std: float = 0.01
    # conv/readout weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    weight: str = "uniform_fan_in"


@dataclass
class DataConfig:
    root: Optional[str] = None
    manifest: Optional[str] = None
    cache_dir: Optional[str] = None
    batch_size: int = 128
    # keep only the first N train entries (overfitting checks)
    limit_train: Optional[int] = None
    eval_batch_size: int = 128


@dataclass
class TrainConfig:
    epochs: int = 20
    out_dir: str = "runs/default"
    log_every: int = 10
    steps_per_epoch: Optional[int] = None
    eval_split: str = "valid"


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    init: InitConfig = field(default_factory=InitConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["optim"]["betas"] = list(d["optim"]["betas"])
        return d

    def hash(self) -> str:
        """Digest of the model-defining sections (architecture and neuron setup)."""
        d = self.to_dict()
        payload = json.dumps({"model": d["model"]}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _build(cls, data, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    nested = {"model": ModelConfig, "init": InitConfig, "data": DataConfig, "optim": OptimConfig,
              "loss": LossConfig, "train": TrainConfig}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        if cls is RunConfig and name in nested:
            kwargs[name] = _build(nested[name], value, sub)
        elif cls is ModelConfig and name == "layers":
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{sub}: expected a nonempty list of layers")
            kwargs[name] = [_build(ConvSpec, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def from_dict(data: Dict[str, Any]) -> RunConfig:
    return _build(RunConfig, copy.deepcopy(data), "")


def apply_override(data: Dict[str, Any], override: str) -> None:
    """Apply ``a.b.c=value`` to a nested dict; the value is parsed as YAML."""
    if "=" not in override:
        raise ConfigError(f"override {override!r} is not key=value")
    key, raw = override.split("=", 1)
    try:
        value = _yaml_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {override!r}: invalid value ({exc})") from None
    parts = key.strip().split(".")
    node = data
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise ConfigError(f"override {key!r}: bad list index {part!r}") from None
            continue
        node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigError(f"override {key!r}: bad list index {last!r}") from None
    else:
        node[last] = value


def load_config(path=None, overrides=()) -> RunConfig:
    """Load a YAML run config (or the defaults) and apply overrides.

    ``path`` may also name a bundled config, e.g. ``"ablation_1a"``.
    """
    data = RunConfig().to_dict()
    if path is not None:
        p = Path(path)
        if not p.exists() and (CONFIG_DIR / f"{path}.yaml").exists():
            p = CONFIG_DIR / f"{path}.yaml"
        try:
            loaded = _yaml_load(p.read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        _merge(data, loaded)
    for ov in overrides:
        apply_override(data, ov)
    return from_dict(data)


def _merge(base: dict, new: dict) -> None:
    if not isinstance(new, dict):
        raise ConfigError("config file must contain a mapping")
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
