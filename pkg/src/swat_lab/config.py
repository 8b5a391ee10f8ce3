"""Experiment configuration: one JSON document, four sections.

The schema mirrors the run matrix of the experiments: a model section, a
train section, a data section (corpus location plus batch geometry), and an
eval section (grid axes). Any leaf can be overridden from the command line
with dotted paths, e.g. ``--set model.window=128 --set train.steps=200``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import BatchSpec
from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


@dataclass(frozen=True)
class DataSettings:
    """Where tokens come from and how they are blocked into batches.

    With no corpus path the experiment synthesizes a deterministic text
    corpus of synthetic_bytes bytes from the experiment seed.
    """

    corpus: str | None = None
    synthetic_bytes: int = 2_000_000
    batch_size_tokens: int = 8192
    train_length: int = 64

    def __post_init__(self):
        if self.synthetic_bytes < 10:
            raise ConfigError("synthetic_bytes is too small to form a corpus")
        if self.batch_size_tokens < 1 or self.train_length < 1:
            raise ConfigError("batch geometry counts must be >= 1")


@dataclass(frozen=True)
class EvalSettings:
    windows: tuple[int, ...] = (64,)
    lengths: tuple[int, ...] = (64, 256)
    method: str = "auto"

    def __post_init__(self):
        if not self.windows or not self.lengths:
            raise ConfigError("eval axes must be non-empty")
        if any(w < 1 for w in self.windows) or any(l < 2 for l in self.lengths):
            raise ConfigError("eval windows must be >= 1 and lengths >= 2")
        if self.method not in ("auto", "incremental", "banded", "chunked"):
            raise ConfigError(f"unknown eval method {self.method!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataSettings = field(default_factory=DataSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    output_dir: str = "runs"
    seed: int = 0

    def __post_init__(self):
        if self.data.train_length % self.model.window:
            raise ConfigError(
                "data.train_length: must be a multiple of model.window "
                f"({self.data.train_length} % {self.model.window} != 0)"
            )

    def batch_spec(self) -> BatchSpec:
        return BatchSpec(
            batch_size_tokens=self.data.batch_size_tokens,
            train_length=self.data.train_length,
            train_window=self.model.window,
        )


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataSettings,
    "eval": EvalSettings,
}


def _coerce(cls, section: str, values: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown field")
    cleaned = dict(values)
    for f in dataclasses.fields(cls):
        if f.name in cleaned and isinstance(cleaned[f.name], list):
            cleaned[f.name] = tuple(cleaned[f.name])
    try:
        return cls(**cleaned)
    except ConfigError as e:
        raise ConfigError(f"{section}: {e}") from e
    except TypeError as e:
        raise ConfigError(f"{section}: {e}") from e


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - set(_SECTIONS) - {"output_dir", "seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "model" not in doc:
        raise ConfigError("model: section is required")
    if "train" not in doc:
        raise ConfigError("train: section is required")
    sections = {
        name: _coerce(cls, name, doc.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    return ExperimentConfig(
        output_dir=doc.get("output_dir", "runs"),
        seed=doc.get("seed", 0),
        **sections,
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "model": dataclasses.asdict(cfg.model),
        "train": dataclasses.asdict(cfg.train),
        "data": dataclasses.asdict(cfg.data),
        "eval": dataclasses.asdict(cfg.eval),
        "output_dir": cfg.output_dir,
        "seed": cfg.seed,
    }
    doc["eval"]["windows"] = list(cfg.eval.windows)
    doc["eval"]["lengths"] = list(cfg.eval.lengths)
    return doc


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: not valid JSON ({e})") from e
    return config_from_dict(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``section.field=value`` assignments to a raw config dict.

    Values parse as JSON when possible (numbers, booleans, lists) and fall
    back to plain strings, so ``--set data.corpus=texts/`` works unquoted.
    """
    out = json.loads(json.dumps(doc))  # deep copy, JSON types only
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"override {item!r} has an empty path segment")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {part} is not a section")
        node[parts[-1]] = value
    return out
