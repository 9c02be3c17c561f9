"""Experiment configuration: one JSON object, unknown keys rejected."""
from dataclasses import asdict, dataclass, fields
import json

from .data import RECIPES
from .model import VARIANTS
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "plain"
    K: int = 9
    n: int = 33
    ratio: float = 0.25
    seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dataset_dir: str = None
    patch_recipe: str = "set2"
    patches_per_image: int = None
    train_patches: str = None
    val_patches: str = None
    val_count: int = 200
    checkpoint: str = "model.ampn"
    history_log: str = "history.log"
    eval_records: str = "eval.jsonl"
    peak: float = 1.0
    baseline_problems: int = 20
    baseline_iterations: int = 30

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.K < 1 or self.n < 1:
            raise ConfigError("K and n must be positive")
        if not 0 < self.ratio <= 1:
            raise ConfigError(f"ratio must lie in (0, 1], got {self.ratio}")
        if self.patch_recipe not in RECIPES:
            raise ConfigError(f"patch_recipe must be one of {sorted(RECIPES)}")
        if self.peak <= 0:
            raise ConfigError("peak must be positive")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def patch_size(self):
        return RECIPES[self.patch_recipe].size

    def train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )

    def to_dict(self):
        return asdict(self)


def load_config(path=None, **overrides):
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("K", "n", "seed", "batch_size", "epochs", "val_count", "baseline_problems",
                "baseline_iterations"):
        if key in raw and not (isinstance(raw[key], int) and not isinstance(raw[key], bool)):
            raise ConfigError(f"{key} must be an integer, got {raw[key]!r}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
