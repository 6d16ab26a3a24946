"""Run configuration: one TOML file, ``section.key=value`` overrides.

Every artifact carries ``#config <hash> <json>`` where the hash covers
only the sections that artifact depends on (``STAGE_SECTIONS``), so
changing, say, the evaluation group count does not invalidate a trained
model while changing the sketch width does.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Iterable, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .features.store import StoreConfig
from .model import ModelConfig
from .synth import GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass
class GenSection(GeneratorConfig):
    seed: int = 1


@dataclass
class SketchSection:
    depth: int = 16
    width: int = 64
    seed: int = 0
    density_aware: bool = True


@dataclass
class StoreSection(StoreConfig):
    language_vocab: int = 66


@dataclass
class PartitionSection:
    validation_days: int = 1
    k: int = 10
    eval_fraction: float = 0.1
    seed: int = 0


@dataclass
class ModelSection(ModelConfig):
    hidden_width: int = 256


@dataclass
class EvalSection:
    groups: int = 5
    fine_groups: int = 200
    figures: bool = True


@dataclass
class BenchSection:
    predictions: int = 10_000
    warmup: int = 1000
    budget_p95_ms: float = 6.0
    budget_p50_ms: float = 4.0
    cpu: int = 0


@dataclass
class RunConfig:
    generator: GenSection = field(default_factory=GenSection)
    sketch: SketchSection = field(default_factory=SketchSection)
    store: StoreSection = field(default_factory=StoreSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    model: ModelSection = field(default_factory=ModelSection)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["fourier_scales"] = list(self.model.fourier_scales)
        return d

    def section_hash(self, stage: str) -> tuple[str, str]:
        """(hash, canonical json) of the sections ``stage`` depends on."""
        full = self.to_dict()
        subset = {s: full[s] for s in STAGE_SECTIONS[stage]}
        text = json.dumps(subset, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16], text

    def meta(self, stage: str) -> str:
        h, text = self.section_hash(stage)
        return f"{h} {text}"

    def model_config(self) -> ModelConfig:
        d = asdict(self.model)
        return ModelConfig(**d)

    def store_config(self) -> StoreConfig:
        return StoreConfig(self.store.jaccard_threshold, self.store.community_seed)

    def generator_config(self) -> GeneratorConfig:
        d = asdict(self.generator)
        d.pop("seed")
        return GeneratorConfig(**d)


STAGE_SECTIONS = {
    "gen": ("generator",),
    "fit-sketch": ("generator", "sketch"),
    "partition": ("generator", "partition"),
    "build-store": ("generator", "partition", "store"),
    "featurize": ("generator", "sketch", "partition", "store"),
    "train": ("generator", "sketch", "partition", "store", "model"),
    "predict": ("generator", "sketch", "partition", "store", "model"),
}

PROFILES: dict[str, dict[str, dict[str, Any]]] = {
    "desk": {},
    # small enough for end-to-end tests
    "smoke": {
        "generator": {"n_users": 200, "n_tweets": 800, "n_rows": 2500, "n_days": 5, "vocab_size": 400},
        "sketch": {"depth": 4, "width": 16},
        "partition": {"k": 3, "eval_fraction": 0.3},
        "model": {"hidden_width": 32, "epochs_stage1": 1, "epochs_stage2": 1, "lr": 1e-3, "batch_size": 64},
        "eval": {"fine_groups": 20},
        "bench": {"predictions": 300, "warmup": 50},
    },
    "bench": {
        "generator": {"n_users": 100_000, "n_tweets": 50_000, "n_rows": 200_000},
        "model": {"hidden_width": 1500},
    },
}


def _coerce(section: str, obj, key: str, value):
    names = {f.name: f for f in fields(obj)}
    if key not in names:
        raise ConfigError(f"unknown config key {section}.{key}")
    current = getattr(obj, key)
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if isinstance(current, tuple):
            return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: bad value {value!r}") from None
    return value


def apply(cfg: RunConfig, overrides: dict[str, dict[str, Any]]) -> RunConfig:
    cfg = copy.deepcopy(cfg)
    for section, values in overrides.items():
        if not hasattr(cfg, section) or not is_dataclass(getattr(cfg, section)):
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        obj = getattr(cfg, section)
        for key, value in values.items():
            setattr(obj, key, _coerce(section, obj, key, value))
    try:
        # re-run dataclass validation
        cfg.model_config()
        cfg.generator_config().validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_override(text: str) -> tuple[str, str, Any]:
    """``section.key=value``; the value is read as a TOML literal, else a string."""
    lhs, sep, rhs = text.partition("=")
    section, dot, key = lhs.strip().partition(".")
    if not sep or not dot or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {rhs.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = rhs.strip()
    return section, key.strip(), value


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (), profile: str = "desk") -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = apply(RunConfig(), PROFILES[profile])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = apply(cfg, data)
    extra: dict[str, dict[str, Any]] = {}
    for text in overrides:
        section, key, value = parse_override(text)
        extra.setdefault(section, {})[key] = value
    return apply(cfg, extra)
