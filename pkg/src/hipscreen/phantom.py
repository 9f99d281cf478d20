"""Synthetic hip scans with analytically known femoral head coverage.

Every phantom is built on integer geometry (head centre, radius and ilium
row), so the rasterised mask reproduces the analytic coverage exactly.  The
GGT-like class bands (>55 Normal, 40..55 Dysplastic, <40 Dislocated) are a
generator convention used only to stratify synthetic data.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hipscreen import imagecore
from hipscreen.dataset import GGT_CLASSES, Sample, write_manifest
from hipscreen.errors import ConfigError, SpecOutOfFrame
from hipscreen.imagecore import FEMORAL_HEAD, ILIUM, LABRUM

# base intensity per class index: background, ilium, femoral head, labrum
INTENSITY = np.array([0.10, 0.90, 0.45, 0.65])

# FHC bands per class, used when drawing a dataset.
# 71/66/53 of 190, quoted as 37/35/28 percent; the rounded percentages would
# apportion 190 as 70/67/53.
DEFAULT_CLASS_MIX = (71 / 190, 66 / 190, 53 / 190)

CLASS_BANDS = {"Normal": (58.0, 90.0), "Dysplastic": (41.0, 54.0), "Dislocated": (10.0, 38.0)}


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry of one phantom.  Coordinates are (x, y) with y pointing down.

    The ilium is a band ``ilium_thickness`` rows deep whose upper edge is flat
    at ``ilium_row`` from ``ilium_start`` for ``ilium_horizontal_span`` columns,
    then drops with ``ilium_drop_slope`` rows per column for ``ilium_drop_span``
    columns.  The labrum is an ellipse centred at ``labrum_offset`` from the
    top of the head.
    """

    head_center: tuple = (84, 64)
    head_radius: int = 20
    ilium_row: int = 54
    ilium_start: int = 4
    ilium_horizontal_span: int = 40
    ilium_drop_span: int = 16
    ilium_drop_slope: float = 1.0
    ilium_thickness: int = 6
    labrum_offset: tuple = (10.0, -5.0)
    labrum_axes: tuple = (5.0, 2.5)
    speckle_noise_sigma: float = 0.05
    image_size: int = 128
    seed: int = 0

    @property
    def head_top(self):
        return self.head_center[1] - self.head_radius

    @property
    def head_bottom(self):
        return self.head_center[1] + self.head_radius

    @property
    def analytic_fhc(self):
        span = 2 * self.head_radius
        return 100.0 * min(max(self.head_bottom - self.ilium_row, 0), span) / span


def ggt_class_for(fhc):
    if fhc > 55.0:
        return "Normal"
    if fhc >= 40.0:
        return "Dysplastic"
    return "Dislocated"


def _check_frame(spec):
    n = spec.image_size
    cx, cy = spec.head_center
    r = spec.head_radius
    lx = cx + spec.labrum_offset[0]
    ly = spec.head_top + spec.labrum_offset[1]
    ax, ay = spec.labrum_axes
    drop_end = spec.ilium_start + spec.ilium_horizontal_span + spec.ilium_drop_span
    drop_depth = spec.ilium_drop_slope * (spec.ilium_drop_span - 1)
    problems = []
    if cx - r < 0 or cx + r >= n or cy - r < 0 or cy + r >= n:
        problems.append("femoral head leaves the frame")
    if lx - ax < 0 or lx + ax >= n or ly - ay < 0 or ly + ay >= n:
        problems.append("labrum leaves the frame")
    if spec.ilium_start < 0 or drop_end > n:
        problems.append("ilium leaves the frame horizontally")
    if spec.ilium_row < 0 or spec.ilium_row + drop_depth + spec.ilium_thickness > n:
        problems.append("ilium leaves the frame vertically")
    if drop_end > cx - r:
        problems.append("ilium overlaps the femoral head columns")
    if problems:
        raise SpecOutOfFrame("; ".join(problems))


def rasterize(spec):
    """Label mask for ``spec``; the head is painted last so its extent is exact."""
    _check_frame(spec)
    n = spec.image_size
    ys, xs = np.mgrid[0:n, 0:n]
    mask = np.zeros((n, n), dtype=np.uint8)

    x0 = spec.ilium_start
    x_turn = x0 + spec.ilium_horizontal_span
    x_end = x_turn + spec.ilium_drop_span
    top = np.full(n, -1, dtype=np.int64)
    top[x0:x_turn] = spec.ilium_row
    cols = np.arange(x_turn, x_end)
    top[x_turn:x_end] = spec.ilium_row + np.floor(spec.ilium_drop_slope * (cols - x_turn) + 0.5).astype(np.int64)
    in_cols = top >= 0
    ilium = in_cols[None, :] & (ys >= top[None, :]) & (ys < top[None, :] + spec.ilium_thickness)
    mask[ilium] = ILIUM

    lx = spec.head_center[0] + spec.labrum_offset[0]
    ly = spec.head_top + spec.labrum_offset[1]
    ax, ay = spec.labrum_axes
    labrum = ((xs - lx) / ax) ** 2 + ((ys - ly) / ay) ** 2 <= 1.0
    mask[labrum] = LABRUM

    cx, cy = spec.head_center
    head = (xs - cx) ** 2 + (ys - cy) ** 2 <= spec.head_radius ** 2
    mask[head] = FEMORAL_HEAD
    return mask


def generate_phantom(spec):
    """Returns ``(image, mask, analytic_fhc, ggt_class)``."""
    mask = rasterize(spec)
    base = INTENSITY[mask]
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.speckle_noise_sigma, size=mask.shape) if spec.speckle_noise_sigma > 0 else 0.0
    # quantised to 8 bits so the PNG round trip is lossless
    image = np.rint(np.clip(base + noise, 0.0, 1.0) * 255.0) / 255.0
    fhc = spec.analytic_fhc
    return image, mask, fhc, ggt_class_for(fhc)


def class_counts(n, class_mix):
    """Largest-remainder apportionment of ``n`` items over the class mix."""
    mix = np.asarray(class_mix, dtype=np.float64)
    if len(mix) != 3 or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
        raise ConfigError(f"class mix must be three non-negative fractions summing to 1, got {class_mix}")
    quotas = mix * n
    counts = np.floor(quotas).astype(int)
    remainder = n - counts.sum()
    order = sorted(range(3), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return [int(c) for c in counts]


def random_spec(rng, ggt_class, seed, image_size=128):
    """Draw an in-frame phantom whose analytic class is ``ggt_class``."""
    lo, hi = CLASS_BANDS[ggt_class]
    for _ in range(1000):
        r = int(rng.integers(15, 27))
        span = int(rng.choice([32, 40, 48]))
        drop = int(rng.choice([16, 24]))
        slope = float(rng.uniform(0.6, 1.4))
        x0 = int(rng.integers(2, 6))
        drop_end = x0 + span + drop
        cx_low = drop_end + r + 1
        cx_high = image_size - r - 2
        if cx_low > cx_high:
            continue
        cx = int(rng.integers(cx_low, cx_high + 1))
        cy = int(rng.integers(r + 14, image_size - r - 2))
        target = float(rng.uniform(lo, hi))
        ilium_row = int(round(cy + r - target * 2 * r / 100.0))
        spec = PhantomSpec(
            head_center=(cx, cy), head_radius=r, ilium_row=ilium_row, ilium_start=x0,
            ilium_horizontal_span=span, ilium_drop_span=drop, ilium_drop_slope=slope,
            labrum_offset=(round(0.5 * r, 1), -5.0), seed=seed, image_size=image_size)
        if ggt_class_for(spec.analytic_fhc) != ggt_class:
            continue
        try:
            _check_frame(spec)
        except SpecOutOfFrame:
            continue
        return spec
    raise SpecOutOfFrame(f"could not place a {ggt_class} phantom in a {image_size}px frame")


def generate_dataset(n, class_mix=DEFAULT_CLASS_MIX, seed=0, left_fraction=0.5):
    """``n`` phantoms, class counts apportioned by largest remainder.

    Returns ``(samples, truth)`` where ``truth`` maps id to
    ``(analytic_fhc, ggt_class)``.  Samples are right-hip-like; ``side``
    records how they are written to disk (left hips are stored mirrored).
    """
    counts = class_counts(n, class_mix)
    samples, truth = [], {}
    index = 0
    for name, count in zip(GGT_CLASSES, counts):
        for _ in range(count):
            rng = np.random.default_rng([seed, index])
            spec = random_spec(rng, name, seed=int(rng.integers(2 ** 31)))
            image, mask, fhc, ggt = generate_phantom(spec)
            side = "L" if rng.random() < left_fraction else "R"
            sid = f"phantom_{index:04d}"
            samples.append(Sample(sid, image, mask, ggt, side))
            truth[sid] = (fhc, ggt)
            index += 1
    return samples, truth


def write_dataset(out_dir, samples, truth):
    """Write PNG pairs, ``manifest.csv`` and ``truth.csv`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        image, mask = s.image, s.mask
        if s.side == "L":
            image = imagecore.reflect_horizontal(image)
            mask = imagecore.reflect_horizontal(mask)
        image_path = f"images/{s.id}.png"
        mask_path = f"masks/{s.id}.png"
        imagecore.write_gray_png(out / image_path, image)
        imagecore.write_mask_png(out / mask_path, mask)
        rows.append({"id": s.id, "image_path": image_path, "mask_path": mask_path,
                     "side": s.side, "ggt_class": s.ggt_class})
    write_manifest(out / "manifest.csv", rows)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "analytic_fhc", "ggt_class"])
        for sid in sorted(truth):
            fhc, ggt = truth[sid]
            w.writerow([sid, f"{fhc:.6f}", ggt])
    return out / "manifest.csv"


def read_truth(path):
    with open(path, newline="") as fh:
        return {row["id"]: (float(row["analytic_fhc"]), row["ggt_class"]) for row in csv.DictReader(fh)}
