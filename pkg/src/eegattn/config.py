"""Run configuration: flat key = value files with command-line overrides.

The file format is diffable text, one ``key = value`` per line, ``#``
comments allowed. Unknown keys are rejected. Every command validates its
full configuration before touching any output.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .model import ModelConfig
from .personalize import FinetuneConfig
from .preprocess import FilterSpec
from .synth import default_spec
from .train import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; commands exit with status 2 on this."""


@dataclass
class RunConfig:
    seed: int = None                 # mandatory, no default on purpose
    subjects: int = 6
    profile: str = "easy"
    seconds_per_class: float = 60.0
    filter_low_hz: float = 0.2
    filter_high_hz: float = 45.0
    filter_order: int = 4
    model_size: str = "tiny"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-4
    early_stop_patience: int = 15
    precision: str = "float64"
    ft_schedule: tuple = (10, 20, 30)
    ft_learning_rate: float = 1e-4
    ft_epochs: int = 20
    jobs: int = 1

    def validate(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory (set --seed or 'seed =' in the config file)")
        if self.subjects < 2:
            raise ConfigError("subjects must be >= 2")
        if self.model_size not in ("tiny", "full"):
            raise ConfigError(f"model_size must be 'tiny' or 'full', got {self.model_size!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            self.filter_spec().validate()
            self.train_config().validate()
            self.finetune_config().validate()
            self.model_config().validate()
            if self.profile not in ("easy", "shifted"):
                raise ValueError(f"unknown profile {self.profile!r}; expected 'easy' or 'shifted'")
            if self.seconds_per_class < 10:
                raise ValueError("seconds_per_class must be >= 10")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def filter_spec(self):
        return FilterSpec(low_hz=self.filter_low_hz, high_hz=self.filter_high_hz,
                          order=self.filter_order)

    def model_config(self):
        return ModelConfig.full() if self.model_size == "full" else ModelConfig.tiny()

    def train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs,
                           plateau_patience=self.plateau_patience,
                           plateau_min_delta=self.plateau_min_delta,
                           early_stop_patience=self.early_stop_patience,
                           seed=self.seed, precision=self.precision)

    def finetune_config(self):
        return FinetuneConfig(schedule=tuple(self.ft_schedule),
                              learning_rate=self.ft_learning_rate,
                              epochs=self.ft_epochs, batch_size=self.batch_size,
                              seed=self.seed if self.seed is not None else 0,
                              precision=self.precision)

    def synth_spec(self):
        return default_spec(self.subjects, self.profile,
                            seconds_per_class=self.seconds_per_class, seed=self.seed)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if key == "ft_schedule":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "int" or kind is int:
            return int(raw)
        if kind == "float" or kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"could not parse {key} = {raw!r}") from None


def parse_config_file(path):
    """Read a key = value file into a dict of typed values."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def build_run_config(config_path=None, overrides=None):
    """Merge defaults, config file, and CLI overrides (highest precedence)."""
    values = {}
    if config_path:
        values.update(parse_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(value)) if isinstance(value, str) else value
    return RunConfig(**values)
