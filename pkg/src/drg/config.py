"""Run configuration: nested dataclasses with dotted-key file/override access.

Config files are flat UTF-8 `key = value` lines with `#` comments; nested
fields use dotted keys (e.g. `augment.alpha = 0.5`). Every leaf field is
reachable through `--override key=value`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, get_args, get_origin

from .errors import ConfigurationError


@dataclass
class DistractorConfig:
    mode: str = "clean"
    seed: int = 0
    held_out: bool = False
    folder: Optional[str] = None


@dataclass
class EnvConfig:
    name: str = "pointmass"
    action_repeat: int = 1
    episode_len: int = 200
    distractor: DistractorConfig = field(default_factory=DistractorConfig)


@dataclass
class NetworkConfig:
    conv_channels: Tuple[int, ...] = (8, 16)
    kernel: int = 3
    embed_dim: int = 64
    deter_dim: int = 64
    stoch_dim: int = 8
    hidden_dim: int = 64
    rsid_hidden_layers: int = 3


@dataclass
class AugmentSection:
    strategy: str = "H-S"
    hard_kind: str = "overlay"
    alpha: float = 0.5
    pad: int = 4
    source_mode: str = "procedural"
    source_seed: int = 1000
    source_folder: Optional[str] = None
    source_pool: int = 256


@dataclass
class LossSection:
    reality_reality: bool = True
    dream_reality: bool = True
    rsid: bool = True
    kl_balance: float = 0.8
    kl_scale: float = 0.1
    dream_from: str = "prior"


@dataclass
class TrainSection:
    seed_episodes: int = 5
    collect_interval: int = 100
    batch_size: int = 16
    seq_len: int = 16
    horizon: int = 15
    total_steps: int = 30_000
    lr_world: float = 1e-3
    lr_actor: float = 8e-5
    lr_critic: float = 8e-5
    gamma: float = 0.99
    lam: float = 0.95
    tau_ema: float = 0.01
    explore_noise: float = 0.3
    buffer_capacity: int = 100_000
    checkpoint_every: int = 5000
    grad_clip: float = 100.0
    precision: str = "f32"


@dataclass
class EvalSection:
    episodes: int = 10
    seed: int = 9000


@dataclass
class RunConfig:
    mode: str = "drg"  # drg | dreamer_baseline
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    augment: AugmentSection = field(default_factory=AugmentSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "RunConfig":
        if self.mode not in ("drg", "dreamer_baseline"):
            raise ConfigurationError(f"unknown mode '{self.mode}'")
        if self.train.precision not in ("f32", "f64"):
            raise ConfigurationError(f"precision must be f32 or f64, got '{self.train.precision}'")
        if self.mode == "drg" and not (self.loss.reality_reality or self.loss.dream_reality
                                       or self.loss.rsid):
            raise ConfigurationError(
                "all self-supervised terms disabled and no decoder: "
                "the world model would be untrainable")
        for name, value in (("train.total_steps", self.train.total_steps),
                            ("train.batch_size", self.train.batch_size),
                            ("train.seq_len", self.train.seq_len),
                            ("train.horizon", self.train.horizon),
                            ("env.episode_len", self.env.episode_len)):
            if value < 0 or (value == 0 and name != "train.total_steps"):
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.train.seq_len < 2:
            raise ConfigurationError("train.seq_len must be >= 2 (inverse dynamics needs pairs)")
        return self


_PRIMITIVES = (int, float, str, bool)


def _leaf_fields(obj, prefix=""):
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            yield from _leaf_fields(value, f"{prefix}{f.name}.")
        else:
            yield f"{prefix}{f.name}", f, obj


def list_keys(cfg: RunConfig):
    return [key for key, _, _ in _leaf_fields(cfg)]


def _parse_value(raw: str, annotation):
    raw = raw.strip()
    origin = get_origin(annotation)
    if annotation == Optional[str]:
        return None if raw.lower() in ("none", "null", "") else raw
    if origin is tuple or annotation in (Tuple[int, ...],):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    if annotation is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"cannot parse boolean from '{raw}'")
    if annotation is int:
        return int(raw)
    if annotation is float:
        return float(raw)
    if annotation is str:
        return raw
    raise ConfigurationError(f"unsupported config field type {annotation}")


def apply_override(cfg: RunConfig, key: str, raw_value: str) -> None:
    parts = key.strip().split(".")
    obj = cfg
    for part in parts[:-1]:
        if not hasattr(obj, part) or not dataclasses.is_dataclass(getattr(obj, part)):
            raise ConfigurationError(f"unknown config section '{key}'")
        obj = getattr(obj, part)
    leaf = parts[-1]
    matching = [f for f in dataclasses.fields(obj) if f.name == leaf]
    if not matching:
        raise ConfigurationError(f"unknown config key '{key}'")
    annotation = matching[0].type
    if isinstance(annotation, str):
        annotation = _resolve_annotation(annotation)
    setattr(obj, leaf, _parse_value(raw_value, annotation))


def _resolve_annotation(text: str):
    table = {
        "int": int, "float": float, "str": str, "bool": bool,
        "Optional[str]": Optional[str],
        "Tuple[int, ...]": Tuple[int, ...],
    }
    if text in table:
        return table[text]
    raise ConfigurationError(f"unsupported config field type '{text}'")


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_text(cfg: RunConfig) -> str:
    lines = []
    for key, f, owner in _leaf_fields(cfg):
        lines.append(f"{key} = {_format_value(getattr(owner, f.name))}")
    return "\n".join(lines) + "\n"


def parse_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value', got '{line}'")
        key, value = stripped.split("=", 1)
        apply_override(cfg, key.strip(), value.strip())
    return cfg


def load_config(path) -> RunConfig:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(to_text(cfg), encoding="utf-8")
