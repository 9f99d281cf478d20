"""Dataset ingestion, left-hip reflection, stratified splitting and preprocessing."""

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from hipscreen import imagecore
from hipscreen.errors import BadClassLabel, ConfigError, MissingFile, ShapeMismatch

GGT_CLASSES = ("Normal", "Dysplastic", "Dislocated")
SIDES = ("L", "R")
MANIFEST_FIELDS = ("id", "image_path", "mask_path", "side", "ggt_class")

CROP_SIZE = 384
POOL_FACTOR = 3
TARGET_SIZE = CROP_SIZE // POOL_FACTOR


@dataclass
class Sample:
    """One scan with its segmented ground truth, stored right-hip-like."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    ggt_class: str
    side: str = "R"


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.50, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if len(fr) != 3:
            raise ConfigError("split needs exactly three fractions (train, validation, test)")
        if any(f < 0 or f > 1 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must lie in [0, 1] and sum to 1, got {fr}")


@dataclass
class SplitResult:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def to_json(self):
        return json.dumps({"seed": self.seed, "train": self.train,
                           "validation": self.validation, "test": self.test}, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(train=list(d["train"]), validation=list(d["validation"]),
                   test=list(d["test"]), seed=int(d.get("seed", 0)))


def read_manifest(manifest):
    manifest = Path(manifest)
    if not manifest.is_file():
        raise MissingFile(f"manifest not found: {manifest}")
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{manifest}: missing manifest columns {sorted(missing)}")
        return list(reader)


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in MANIFEST_FIELDS})


def load_dataset(directory, manifest):
    """Load every manifest row; left hips are mirrored to look like right hips.

    Paths in the manifest are relative to ``directory``.  Samples come back
    sorted by id.
    """
    directory = Path(directory)
    samples = []
    for row in read_manifest(manifest):
        if row["ggt_class"] not in GGT_CLASSES:
            raise BadClassLabel(f"sample {row['id']}: unknown GGT class {row['ggt_class']!r}")
        if row["side"] not in SIDES:
            raise BadClassLabel(f"sample {row['id']}: side must be L or R, got {row['side']!r}")
        paths = [directory / row["image_path"], directory / row["mask_path"]]
        for p in paths:
            if not p.is_file():
                raise MissingFile(f"sample {row['id']}: file not found: {p}")
        image = imagecore.read_gray_png(paths[0])
        mask = imagecore.read_mask_png(paths[1])
        if image.shape != mask.shape:
            raise ShapeMismatch(f"sample {row['id']}: image {image.shape} vs mask {mask.shape}")
        if row["side"] == "L":
            image = imagecore.reflect_horizontal(image)
            mask = imagecore.reflect_horizontal(mask)
        samples.append(Sample(row["id"], image, mask, row["ggt_class"], row["side"]))
    samples.sort(key=lambda s: s.id)
    return samples


def _cut_points(n, fractions):
    # Cumulative rounding keeps every split within one sample of its share.
    cum = np.cumsum(fractions)
    cuts = [min(n, int(math.floor(c * n + 0.5))) for c in cum[:-1]]
    return [0] + cuts + [n]


def stratified_split(samples, spec=SplitSpec()):
    """Shuffle each GGT class with a seeded PRNG and cut it by ``spec.fractions``."""
    by_class = {}
    for s in samples:
        by_class.setdefault(s.ggt_class, []).append(s.id)
    ordered = [c for c in GGT_CLASSES if c in by_class] + sorted(set(by_class) - set(GGT_CLASSES))
    parts = ([], [], [])
    for class_index, name in enumerate(ordered):
        ids = sorted(by_class[name])
        rng = np.random.default_rng([spec.seed, class_index])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        cuts = _cut_points(len(ids), spec.fractions)
        for k in range(3):
            parts[k].extend(ids[cuts[k]:cuts[k + 1]])
    return SplitResult(train=parts[0], validation=parts[1], test=parts[2], seed=spec.seed)


def preprocess(sample):
    """Crop to 384x384 and reduce to 128x128.

    The image is max-pooled with a 3x3 window; the mask takes the majority
    label of each block.  Samples already at 128x128 pass through unchanged.
    """
    if sample.image.shape == (TARGET_SIZE, TARGET_SIZE) and sample.mask.shape == sample.image.shape:
        return sample
    if sample.image.shape != sample.mask.shape:
        raise ShapeMismatch(f"sample {sample.id}: image {sample.image.shape} vs mask {sample.mask.shape}")
    image = imagecore.center_crop(sample.image, CROP_SIZE, CROP_SIZE)
    mask = imagecore.center_crop(sample.mask, CROP_SIZE, CROP_SIZE)
    return replace(sample,
                   image=imagecore.max_pool_downsample(image, POOL_FACTOR),
                   mask=imagecore.majority_downsample(mask, POOL_FACTOR))


def select(samples, ids):
    by_id = {s.id: s for s in samples}
    return [by_id[i] for i in ids]
