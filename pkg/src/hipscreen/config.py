"""Run configuration: one JSON document with a section per module.

Missing keys take their defaults; unknown sections or keys are rejected, and
every value is range-checked when the document is loaded.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from hipscreen.augment import AugmentConfig
from hipscreen.dataset import SplitSpec
from hipscreen.errors import ConfigError, MissingFile
from hipscreen.geometry import DEFAULT_SEGMENT_LENGTH, DEFAULT_THRESHOLD
from hipscreen.nnet.train import TrainConfig
from hipscreen.nnet.unet import UNetConfig
from hipscreen.phantom import DEFAULT_CLASS_MIX

SECTIONS = ("dataset", "augment", "unet", "train", "geometry", "metrics")


@dataclass(frozen=True)
class DatasetConfig:
    """Synthetic data generation and the train/validation/test split."""

    n: int = 190
    class_mix: tuple = DEFAULT_CLASS_MIX
    left_fraction: float = 0.5
    split_fractions: tuple = (0.50, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_mix", tuple(float(v) for v in self.class_mix))
        object.__setattr__(self, "split_fractions", tuple(float(v) for v in self.split_fractions))
        if self.n < 0:
            raise ConfigError("dataset.n must be non-negative")
        if not 0.0 <= self.left_fraction <= 1.0:
            raise ConfigError("dataset.left_fraction must lie in [0, 1]")
        mix = self.class_mix
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"dataset.class_mix must be three fractions summing to 1, got {mix}")
        self.split_spec()

    def split_spec(self):
        return SplitSpec(self.split_fractions, self.seed)


@dataclass(frozen=True)
class GeometryConfig:
    threshold: float = DEFAULT_THRESHOLD
    segment_length: int = DEFAULT_SEGMENT_LENGTH

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 100.0:
            raise ConfigError("geometry.threshold must lie in [0, 100]")
        if self.segment_length < 2:
            raise ConfigError("geometry.segment_length must be at least 2")


@dataclass(frozen=True)
class MetricsConfig:
    classes: tuple = (1, 2, 3)
    positive: str = "DDH"

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if not self.classes or any(c < 0 or c > 3 for c in self.classes):
            raise ConfigError("metrics.classes must be non-empty class ids in 0..3")


SECTION_TYPES = {
    "dataset": DatasetConfig,
    "augment": AugmentConfig,
    "unet": UNetConfig,
    "train": TrainConfig,
    "geometry": GeometryConfig,
    "metrics": MetricsConfig,
}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = sorted(set(doc) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        sections = {}
        for name in SECTIONS:
            body = doc.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            typ = SECTION_TYPES[name]
            allowed = {f.name for f in fields(typ)}
            bad = sorted(set(body) - allowed)
            if bad:
                raise ConfigError(f"unknown key(s) in {name}: {', '.join(bad)}")
            try:
                sections[name] = typ(**body)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        return cls(**sections)

    def to_dict(self):
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def with_seed(self, seed):
        """Copy with every seeded section set to ``seed``."""
        return replace(self, dataset=replace(self.dataset, seed=seed),
                       augment=replace(self.augment, seed=seed),
                       train=replace(self.train, seed=seed))

    def update(self, section, **values):
        """Copy with ``values`` overriding keys of ``section`` (``None`` values are skipped)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        try:
            return replace(self, **{section: replace(current, **values)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}: {exc}") from exc


def load(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(doc)


def save(path, config):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
