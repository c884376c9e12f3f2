"""Experiment configuration: nested dataclasses serialised as flat
``namespace.key=value`` lines."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticShiftSpec
from .errors import ConfigError
from .losses import LossWeights
from .model import ArchConfig
from .optim import AdamConfig
from .trainer import AblationToggles, TrainSchedule

DEFAULT_GRID = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class DataPaths:
    source_path: str = ""  # empty: generate synthetic domains from synth.*
    target_path: str = ""
    split_seed: int = 0
    fractions: tuple[float, ...] = (0.6, 0.2, 0.2)


@dataclass
class RunConfig:
    mode: str = "adast"  # adast | source-only
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    parallel_seeds: int = 1
    sweep_param: str = "lambda1"
    sweep_grid: tuple[float, ...] = DEFAULT_GRID


@dataclass
class ExperimentConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: AdamConfig = field(default_factory=AdamConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    ablation: AblationToggles = field(default_factory=AblationToggles)
    synth: SyntheticShiftSpec = field(default_factory=SyntheticShiftSpec)
    data: DataPaths = field(default_factory=DataPaths)
    run: RunConfig = field(default_factory=RunConfig)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for section in dataclasses.fields(self):
            part = getattr(self, section.name)
            for f in dataclasses.fields(part):
                out[f"{section.name}.{f.name}"] = _format(getattr(part, f.name))
        return out

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_kv().items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def validate(self) -> list[str]:
        from .trainer import validate_config

        problems = validate_config(self)
        if self.run.mode not in ("adast", "source-only"):
            problems.append(f"run.mode must be 'adast' or 'source-only', got {self.run.mode!r}")
        if not self.run.seeds:
            problems.append("run.seeds must not be empty")
        if self.run.sweep_param not in ("lambda1", "lambda2"):
            problems.append("run.sweep_param must be lambda1 or lambda2")
        if self.run.parallel_seeds < 1:
            problems.append("run.parallel_seeds must be >= 1")
        return problems


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ";".join(",".join(_format(v) for v in item) for item in value)
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_scalar(kind, text: str, key: str):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {text!r}") from None


def _parse(hint, text: str, key: str):
    origin = typing.get_origin(hint)
    if origin is tuple:
        (inner, *_rest) = typing.get_args(hint)
        if not text.strip():
            return ()
        if typing.get_origin(inner) is tuple:
            return tuple(_parse(inner, chunk, key) for chunk in text.split(";"))
        return tuple(_parse_scalar(inner, t, key) for t in text.split(","))
    if origin in (typing.Union, types.UnionType):
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    return _parse_scalar(hint, text, key)


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str]) -> list[str]:
    """Set dotted keys in place; returns a list of problems (unknown keys, bad values)."""
    problems = []
    sections = {f.name: f for f in dataclasses.fields(cfg)}
    for key, text in pairs.items():
        section, _, name = key.partition(".")
        if section not in sections or not name:
            problems.append(f"unknown key {key!r}")
            continue
        part = getattr(cfg, section)
        hints = typing.get_type_hints(type(part))
        if name not in {f.name for f in dataclasses.fields(part)}:
            problems.append(f"unknown key {key!r}")
            continue
        try:
            setattr(part, name, _parse(hints[name], text, key))
        except ConfigError as exc:
            problems.append(str(exc))
    return problems


def parse_kv_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the file (if any), then overrides; all problems reported at once."""
    cfg = ExperimentConfig()
    problems = []
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        problems += apply_overrides(cfg, parse_kv_text(text))
    if overrides:
        problems += apply_overrides(cfg, overrides)
    if problems:
        raise ConfigError("\n".join(problems))
    return cfg
