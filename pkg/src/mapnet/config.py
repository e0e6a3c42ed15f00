"""Experiment configuration: dataclass sections, TOML round-trip, dotted overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .audio import StftParams
from .errors import ArchiveIOError, ValidationError
from .model import ModelConfig
from .noise import NoiseParams
from .synth import MotionParams
from .train import TrainConfig

KNOWN_METHODS = ("mapnet", "mapnet_norebal", "pot", "lstm_po", "lstm_pa", "sma")


@dataclass
class DataConfig:
    window_s: float = 3.0
    hop_s: float = 1.0
    taus: list = field(default_factory=lambda: [1.0, 0.5, 0.33])
    n_trials: int = 4
    trial_duration_s: float = 60.0
    split_seed: int = 0
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    allow_degenerate_split: bool = False
    sync_threshold: float = 0.02
    sync_sustain_s: float = 0.2
    data_dir: str | None = None
    synth: MotionParams = field(default_factory=MotionParams)


@dataclass
class EvalConfig:
    methods: list = field(default_factory=lambda: ["mapnet", "pot", "sma"])
    theta: float = 0.05
    sma_window: int = 5
    split: str = "test"


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseParams = field(default_factory=NoiseParams)
    audio: StftParams = field(default_factory=StftParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        for m in self.eval.methods:
            if m not in KNOWN_METHODS:
                raise ValidationError(f"unknown method {m!r}; choose from {', '.join(KNOWN_METHODS)}")
        if not 0 < self.data.hop_s <= self.data.window_s:
            raise ValidationError("need 0 < hop_s <= window_s")
        self.noise.validate()
        self.model.validate()
        return self

    def data_root(self) -> Path:
        return Path(self.data.data_dir or os.environ.get("MAPNET_DATA_DIR", "mapnet_data"))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = _to_plain(getattr(obj, f.name))
            if v is not None:
                out[f.name] = v
        return out
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(value, current):
    if isinstance(current, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(current, int) and not isinstance(value, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        return tuple(value)
    return value


def _build(cls, data: dict):
    kwargs = {}
    defaults = cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ValidationError(f"unknown config key {cls.__name__}.{key}")
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _build(type(current), value)
        else:
            kwargs[key] = _coerce(value, current)
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    try:
        return _build(ExperimentConfig, data).validate()
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def to_dict(cfg: ExperimentConfig) -> dict:
    return _to_plain(cfg)


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str) -> ExperimentConfig:
    try:
        return from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"bad config: {exc}") from exc


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArchiveIOError(str(exc)) from exc
    return loads(text)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``section.key=value`` strings; values use TOML literal syntax, bare words stay strings."""
    data = to_dict(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not section.key=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValidationError(f"{path} does not name a config field")
        node[keys[-1]] = _parse_value(value.strip())
    return from_dict(data)
