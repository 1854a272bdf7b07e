"""Run configuration: a line-oriented ``section.key = value`` text format.

Blank lines and ``#`` comments are ignored. Unknown keys are errors, so typos in
sweep files fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

from .core import OptimizerConfig
from .data import GenConfig, SplitSpec
from .losses import OBJECTIVES
from .model import TowerConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    csv: Optional[str] = None  # if unset, the synthetic generator is used


@dataclass
class RvqConfig:
    K: int = 8
    L: int = 2
    decay: float = 0.99
    expire_threshold: float = 1.0
    smoothing_eps: float = 1e-5

    def __post_init__(self):
        if not 1 <= self.K <= 1024:
            raise ConfigError(f"rvq.K must be in [1, 1024], got {self.K}")
        if not 1 <= self.L <= 8:
            raise ConfigError(f"rvq.L must be in [1, 8], got {self.L}")
        if not 0 < self.decay < 1:
            raise ConfigError("rvq.decay must be in (0, 1)")


@dataclass
class LossConfig:
    objective: str = "groupce"
    lambda_: float = 1.0
    listce_eps: float = 1e-12
    use_hierarchical: bool = True

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"loss.objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass
class TrainConfig:
    batch_size: int = 256
    max_steps: int = 2000
    eval_every: int = 1000
    early_stop_patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.eval_every < 1:
            raise ConfigError("train.eval_every must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("train.max_steps must be >= 0")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    tower: TowerConfig = field(default_factory=TowerConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    rvq: RvqConfig = field(default_factory=RvqConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def replace(self, **overrides) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"rvq.K": 4})``."""
        return parse_config(dump_config(self) + "".join(f"{k} = {_fmt(v)}\n" for k, v in overrides.items()))


SECTIONS = [f.name for f in dataclasses.fields(RunConfig)]


def _key(name: str) -> str:
    return "lambda" if name == "lambda_" else name


def _field_name(section_obj, key: str) -> Optional[dataclasses.Field]:
    for f in dataclasses.fields(section_obj):
        if _key(f.name) == key:
            return f
    return None


def _coerce(raw: str, current, type_hint: str):
    raw = raw.strip()
    if "Tuple" in type_hint or "List" in type_hint or isinstance(current, (list, tuple)):
        elem = float if ("float" in type_hint) else int
        vals = [elem(x) for x in raw.split(",") if x.strip()]
        return tuple(vals) if "Tuple" in type_hint else vals
    if "bool" in type_hint:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "Optional[str]" in type_hint or type_hint == "str":
        return None if raw.lower() in ("", "none") else raw
    if "int" in type_hint:
        return int(raw)
    if "float" in type_hint:
        return float(raw)
    return raw


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {s: {} for s in SECTIONS}
    defaults = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        if section not in values:
            raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
        f = _field_name(getattr(defaults, section), name)
        if f is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[section][f.name] = _coerce(raw, getattr(getattr(defaults, section), f.name), str(f.type))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    try:
        built = {s: type(getattr(defaults, s))(**values[s]) for s in SECTIONS}
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(**built)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for s in SECTIONS:
        obj = getattr(cfg, s)
        for f in dataclasses.fields(obj):
            lines.append(f"{s}.{_key(f.name)} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
