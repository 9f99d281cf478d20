"""Pixel-grid primitives.

Images are 2D float arrays indexed ``[y, x]`` with values nominally in
[0, 1]; label masks are 2D ``uint8`` arrays with classes
0=background, 1=ilium, 2=femoral head, 3=labrum.

Coordinates are ``(x, y)`` with the origin at the top-left pixel, x growing
rightward and y growing downward.  "Below" therefore means larger y.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from hipscreen.errors import BadClassLabel, NoPixelsOfClass, ShapeError

BACKGROUND, ILIUM, FEMORAL_HEAD, LABRUM = 0, 1, 2, 3
CLASS_NAMES = {ILIUM: "ilium", FEMORAL_HEAD: "femoral_head", LABRUM: "labrum"}
N_CLASSES = 4

# 4-connectivity: N/S/E/W neighbours only.
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class PixelComponent:
    """A 4-connected set of pixels of one class.

    ``xy`` is an (n, 2) integer array of ``(x, y)`` rows sorted by y then x.
    """

    xy: np.ndarray
    class_id: int

    @property
    def pixels(self):
        return {(int(x), int(y)) for x, y in self.xy}

    def __len__(self):
        return len(self.xy)

    def to_mask(self, shape):
        out = np.zeros(shape, dtype=bool)
        out[self.xy[:, 1], self.xy[:, 0]] = True
        return out


def _component_from_mask(binary, class_id):
    ys, xs = np.nonzero(binary)
    return PixelComponent(np.column_stack([xs, ys]).astype(np.int64), int(class_id))


def as_label_mask(labels):
    mask = np.asarray(labels)
    if mask.ndim != 2 or mask.size == 0:
        raise ShapeError(f"label mask must be a non-empty 2D array, got shape {mask.shape}")
    if mask.min() < 0 or mask.max() >= N_CLASSES:
        raise BadClassLabel(f"label mask values must lie in 0..{N_CLASSES - 1}")
    return mask.astype(np.uint8, copy=False)


def connected_components(mask, class_id):
    """Maximal 4-connected components of ``class_id``.

    Ordered by each component's topmost-then-leftmost pixel.
    """
    labelled, n = ndimage.label(np.asarray(mask) == class_id, structure=FOUR_CONNECTED)
    if n == 0:
        return []
    # ndimage.label numbers components in raster order of their first pixel,
    # which is exactly topmost-then-leftmost.
    ys, xs = np.nonzero(labelled)
    ids = labelled[ys, xs]
    order = np.argsort(ids, kind="stable")
    ys, xs, ids = ys[order], xs[order], ids[order]
    splits = np.flatnonzero(np.diff(ids)) + 1
    return [PixelComponent(np.column_stack([cx, cy]).astype(np.int64), int(class_id))
            for cx, cy in zip(np.split(xs, splits), np.split(ys, splits))]


def flood_from(mask, class_id, seed):
    """Component of ``class_id`` containing ``seed``.

    If the seed pixel is not of ``class_id`` the flood starts from the class
    pixel nearest to the seed (Euclidean; ties go to smaller y, then smaller x).
    """
    mask = np.asarray(mask)
    sx, sy = seed
    h, w = mask.shape
    if not (0 <= sx < w and 0 <= sy < h):
        raise ValueError(f"seed {seed} outside {w}x{h} mask")
    binary = mask == class_id
    if not binary.any():
        raise NoPixelsOfClass(class_id)
    if not binary[sy, sx]:
        ys, xs = np.nonzero(binary)  # raster order: y then x
        d2 = (xs - sx) ** 2 + (ys - sy) ** 2
        k = int(np.argmin(d2))  # first minimum is the smallest (y, x)
        sx, sy = int(xs[k]), int(ys[k])
    labelled, _ = ndimage.label(binary, structure=FOUR_CONNECTED)
    return _component_from_mask(labelled == labelled[sy, sx], class_id)


def centroid(component):
    xy = component.xy
    return float(xy[:, 0].mean()), float(xy[:, 1].mean())


def boundary_mask(binary):
    """Pixels of ``binary`` with at least one 4-neighbour outside it.

    Pixels on the image border count as touching the outside.
    """
    binary = np.asarray(binary, dtype=bool)
    interior = ndimage.binary_erosion(binary, structure=FOUR_CONNECTED, border_value=0)
    return binary & ~interior


def boundary_pixels(component):
    """Boundary of a component as a set of ``(x, y)``.

    A pixel is on the boundary when any 4-neighbour is not in the component;
    neighbours beyond the image border are never in it.
    """
    xy = component.xy
    x0, y0 = xy.min(axis=0)
    w, h = xy.max(axis=0) - (x0, y0) + 1
    local = np.zeros((h + 2, w + 2), dtype=bool)
    local[xy[:, 1] - y0 + 1, xy[:, 0] - x0 + 1] = True
    ys, xs = np.nonzero(boundary_mask(local))
    return {(int(x + x0 - 1), int(y + y0 - 1)) for x, y in zip(xs, ys)}


def center_crop(image, w, h):
    """Centred ``w`` x ``h`` window, zero-padded where the source is smaller.

    When the size difference on an axis is odd, the extra row/column is
    removed from (or padded onto) the bottom/right.
    """
    if w <= 0 or h <= 0:
        raise ShapeError("crop size must be positive")
    image = np.asarray(image)
    src_h, src_w = image.shape
    out = np.zeros((h, w), dtype=image.dtype)

    def axis(src, dst):
        if src >= dst:
            start = (src - dst) // 2
            return slice(start, start + dst), slice(0, dst)
        start = (dst - src) // 2
        return slice(0, src), slice(start, start + src)

    src_y, dst_y = axis(src_h, h)
    src_x, dst_x = axis(src_w, w)
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def _blocks(image, k):
    h, w = image.shape
    if h % k or w % k:
        raise ShapeError(f"{w}x{h} image is not divisible by pooling factor {k}")
    return image.reshape(h // k, k, w // k, k).transpose(0, 2, 1, 3).reshape(h // k, w // k, k * k)


def max_pool_downsample(image, k):
    return _blocks(np.asarray(image), k).max(axis=-1)


def majority_downsample(mask, k):
    """Per-block majority label; ties go to the smaller class index."""
    blocks = _blocks(np.asarray(mask), k)
    counts = np.stack([(blocks == c).sum(axis=-1) for c in range(N_CLASSES)], axis=-1)
    return counts.argmax(axis=-1).astype(np.uint8)


def reflect_horizontal(array):
    """Mirror left-right: x -> width - 1 - x."""
    return np.ascontiguousarray(np.asarray(array)[:, ::-1])


def read_gray_png(path):
    with Image.open(path) as im:
        data = np.asarray(im.convert("L"), dtype=np.float64)
    return data / 255.0


def write_gray_png(path, image):
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def read_mask_png(path):
    with Image.open(path) as im:
        data = np.asarray(im)
    if data.ndim != 2:
        raise BadClassLabel(f"{path}: mask PNG must be single-channel")
    if data.size and data.max() >= N_CLASSES:
        raise BadClassLabel(f"{path}: mask contains label {int(data.max())}, expected 0..3")
    return data.astype(np.uint8)


def write_mask_png(path, mask):
    Image.fromarray(as_label_mask(mask)).save(path)
