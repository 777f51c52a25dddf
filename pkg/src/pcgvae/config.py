"""Experiment configuration: one INI-style file with fixed sections."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .artifacts import config_hash
from .latent import divergence_for
from .preprocessing import PreprocessConfig
from .wavenet import ArchConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    name: str = ""
    seed: int = 0
    deterministic: bool = True


@dataclass
class PreprocessSection:
    clip_percentile: float = 99.9
    cutoff_hz: float = 195.0
    crop_length: int = 6144
    crops_per_signal: int = 10
    filter_taps: int = 101
    val_fraction: float = 0.2
    test_fraction: float = 0.2


@dataclass
class ModelSection:
    stages: int = 2
    layers_per_stage: int = 5
    dilations: tuple = (1, 2, 4, 8, 16)
    encoder_kernel: int = 3
    decoder_kernel: int = 2
    residual_channels: int = 32
    skip_channels: int = 64
    latent_channels: int = 4
    pool_stride: int = 64
    latent_model: str = "GI"
    encoder_batch_norm: bool = False


@dataclass
class LossSection:
    divergence: str = "auto"
    kernel: str = "auto"
    weight: float = 1.0
    sigma2: float = 4.0


@dataclass
class TrainSection:
    steps: int = 1000
    batch_size: int = 10
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    save_every: int = 1000
    train_on: str = "all"


def _default_grid():
    return tuple(round(0.05 * i, 2) for i in range(1, 15))


@dataclass
class ClassifySection:
    crop_length: int = 12288
    crops_per_signal: int = 10
    c_grid: tuple = field(default_factory=_default_grid)
    gamma: str = "auto"
    tol: float = 1e-3


SECTIONS = {
    "run": RunSection,
    "preprocess": PreprocessSection,
    "model": ModelSection,
    "loss": LossSection,
    "train": TrainSection,
    "classify": ClassifySection,
}


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    classify: ClassifySection = field(default_factory=ClassifySection)

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            self.preprocess_config()
            self.classify_preprocess_config()
            self.arch()
            self.divergence()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        p = self.preprocess
        if not (0 <= p.val_fraction < 1 and 0 <= p.test_fraction < 1 and p.val_fraction + p.test_fraction < 1):
            raise ConfigError("val_fraction + test_fraction must be below 1")
        if self.train.steps < 1 or self.train.save_every < 1 or self.train.batch_size < 1:
            raise ConfigError("steps, save_every and batch_size must be positive")
        if not self.classify.c_grid or any(c <= 0 for c in self.classify.c_grid):
            raise ConfigError("c_grid needs at least one positive value")
        if self.classify.gamma != "auto":
            try:
                if float(self.classify.gamma) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"gamma must be 'auto' or a positive number, not {self.classify.gamma!r}")
        for length in (p.crop_length, self.classify.crop_length):
            if length % self.model.pool_stride:
                raise ConfigError(f"crop length {length} not divisible by pool stride {self.model.pool_stride}")

    # ---- views onto the library configs
    def preprocess_config(self) -> PreprocessConfig:
        p = self.preprocess
        return PreprocessConfig(p.clip_percentile, p.cutoff_hz, p.crop_length, p.crops_per_signal,
                                self.run.seed, p.filter_taps)

    def classify_preprocess_config(self) -> PreprocessConfig:
        p, c = self.preprocess, self.classify
        # distinct seed stream so evaluation crops differ from training crops
        return PreprocessConfig(p.clip_percentile, p.cutoff_hz, c.crop_length, c.crops_per_signal,
                                self.run.seed + 1_000_003, p.filter_taps)

    def arch(self) -> ArchConfig:
        return ArchConfig(**dataclasses.asdict(self.model))

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(steps=t.steps, batch_size=t.batch_size, lr=t.lr, beta1=t.beta1, beta2=t.beta2,
                           eps=t.eps, save_every=t.save_every, seed=self.run.seed, train_on=t.train_on)

    def divergence(self):
        lo = self.loss
        return divergence_for(self.model.latent_model, self.train.train_on, lo.divergence, lo.kernel,
                              lo.sigma2, lo.weight)

    def model_label(self) -> str:
        if self.run.name:
            return self.run.name
        regime = "all" if self.train.train_on == "all" else "n"
        bn = "-bn" if self.model.encoder_batch_norm else ""
        return f"{self.model.latent_model.upper()}-{regime}{bn}"

    def to_dict(self) -> dict:
        return {name: _plain(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for k, v in dataclasses.asdict(getattr(self, name)).items():
                lines.append(f"{k} = {_format(v)}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path):
        Path(path).write_text(self.to_ini())


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def _convert(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse INI text; unknown sections and keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    sections = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        cls = SECTIONS[name]
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in cp.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            values[key] = _convert(raw, getattr(defaults, key), f"{name}.{key}")
        sections[name] = cls(**values)
    for dotted, value in (overrides or {}).items():
        sec, key = dotted.split(".")
        cur = sections.setdefault(sec, SECTIONS[sec]())
        setattr(cur, key, value)
    return ExperimentConfig(**sections)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_config(text, overrides)
