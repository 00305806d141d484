"""Experiment configuration: one declarative YAML/JSON file plus ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import InvalidArgument

OUTPUT_ROOT_ENV = "RANET_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    # data
    train_manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    embedding_file: str = ""
    unk_token: str = ""
    # model
    T: int = 16
    C: int = 64
    word_dim: int = 50
    recurrent_layers: int = 3
    lstm_hidden: int = 0  # per direction; 0 means C // 2
    psi: str = "concatenation"
    strategy: str = "dense"
    use_f1: bool = True
    use_f2: bool = True
    use_relation: bool = True
    relation_kind: str = "gat"
    gat_layers: int = 2
    use_semantic_branch: bool = True
    use_position_embedding: bool = False
    knn: int = 4
    r_softmax: bool = False
    eps: float = 1e-6
    theta_min: float = 0.5
    theta_max: float = 1.0
    # optimisation
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 15
    seed: int = 0
    deterministic: bool = True
    threads: int = 0  # 0 leaves torch's default
    # evaluation
    top_k: int = 5
    eval_ks: list[int] = field(default_factory=lambda: [1, 5])
    eval_mus: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])
    # output
    out_dir: str = ""
    name: str = "ranet"

    def __post_init__(self):
        if not (0.0 <= self.theta_min < self.theta_max <= 1.0):
            raise InvalidArgument("need 0 <= theta_min < theta_max <= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise InvalidArgument("batch_size >= 1, epochs >= 0 and lr >= 0 required")
        if not (self.use_f1 or self.use_f2):
            raise InvalidArgument("at least one of use_f1/use_f2 must be set")

    @property
    def relation(self) -> str:
        return self.relation_kind if self.use_relation else "none"

    @property
    def output_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.name

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# full-size settings for real features; the defaults differ only in sizes
FULL_SCALE = {"C": 512, "word_dim": 300, "recurrent_layers": 3, "lstm_hidden": 256}
# the synthetic benchmark asks "long"/"short"/"first"/"second", which needs absolute position;
# an instance covers up to 8 of 16 clips, so 8 semantic neighbours can reach a second instance
SYNTHETIC_PRESET = {"use_position_embedding": True, "knn": 8}


def _coerce(value: str, current: Any) -> Any:
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidArgument(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, list):
        return yaml.safe_load(value)
    return value


def apply_overrides(cfg: ExperimentConfig, overrides: list[str] | tuple[str, ...]) -> ExperimentConfig:
    changes = {}
    for item in overrides:
        if "=" not in item:
            raise InvalidArgument(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        if not hasattr(cfg, key):
            raise InvalidArgument(f"unknown config key {key!r}")
        changes[key] = _coerce(value, getattr(cfg, key))
    return cfg.replace(**changes)


def load_config(path: str | Path | None = None, overrides=()) -> ExperimentConfig:
    data: dict[str, Any] = {}
    if path:
        text = Path(path).read_text()
        data = json.loads(text) if str(path).endswith(".json") else (yaml.safe_load(text) or {})
    return apply_overrides(ExperimentConfig.from_dict(data), list(overrides))


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
