"""Randomised training-time augmentation.

Five transforms are applied in a random order: brightness scaling, Gaussian
blur, per-axis scaling, per-axis translation and rotation about the image
centre.  Geometric transforms resample the image bilinearly and the mask by
nearest neighbour, filling exposed regions with 0 / background.
"""

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import ndimage

from hipscreen.errors import ConfigError

TRANSFORMS = ("brightness", "blur", "scale", "translate", "rotate")


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges; each value is drawn uniformly from ``(low, high)``.

    ``translate_frac`` is a signed fraction of the image width/height.
    """

    brightness: tuple = (0.5, 1.5)
    blur_sigma: tuple = (0.0, 2.0)
    scale_per_axis: tuple = (0.9, 1.1)
    translate_frac: tuple = (-0.10, 0.10)
    rotate_deg: tuple = (-15.0, 15.0)
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        for name in ("brightness", "blur_sigma", "scale_per_axis", "translate_frac", "rotate_deg"):
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi:
                raise ConfigError(f"augment.{name}: low {lo} exceeds high {hi}")
            object.__setattr__(self, name, (lo, hi))
        if self.brightness[0] <= 0 or self.blur_sigma[0] < 0 or self.scale_per_axis[0] <= 0:
            raise ConfigError("brightness and scale must be positive, blur sigma non-negative")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def sample_stream(seed, sample_index, epoch):
    """Independent RNG stream for one sample in one epoch."""
    return np.random.default_rng([seed, sample_index, epoch])


def draw_params(config, rng):
    def uniform(r):
        return float(rng.uniform(r[0], r[1]))

    return {
        "order": [TRANSFORMS[i] for i in rng.permutation(len(TRANSFORMS))],
        "brightness": uniform(config.brightness),
        "blur_sigma": uniform(config.blur_sigma),
        "scale": (uniform(config.scale_per_axis), uniform(config.scale_per_axis)),
        "translate": (uniform(config.translate_frac), uniform(config.translate_frac)),
        "rotate_deg": uniform(config.rotate_deg),
    }


def _centre(shape):
    return np.array([(shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0])


def _affine(image, mask, matrix, offset):
    # matrix/offset map output (row, col) to input (row, col)
    out_img = ndimage.affine_transform(image, matrix, offset=offset, order=1,
                                       mode="constant", cval=0.0)
    out_mask = None
    if mask is not None:
        out_mask = ndimage.affine_transform(mask, matrix, offset=offset, order=0,
                                            mode="constant", cval=0)
    return out_img, out_mask


def rotate(image, mask, degrees):
    """Rotate about the image centre; positive angles turn counter-clockwise on screen."""
    t = math.radians(degrees)
    # rows point down, so an on-screen CCW turn pulls output (r, c) from
    # input c + [[cos, sin], [-sin, cos]] (o - c)
    matrix = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    c = _centre(image.shape)
    return _affine(image, mask, matrix, c - matrix @ c)


def scale(image, mask, sx, sy):
    matrix = np.diag([1.0 / sy, 1.0 / sx])
    c = _centre(image.shape)
    return _affine(image, mask, matrix, c - matrix @ c)


def translate(image, mask, tx_frac, ty_frac):
    h, w = image.shape
    return _affine(image, mask, np.eye(2), np.array([-ty_frac * h, -tx_frac * w]))


def gaussian_blur(image, sigma):
    """Gaussian blur with kernel radius ceil(3 sigma); sigma 0 is the identity."""
    if sigma <= 0:
        return image.copy()
    return ndimage.gaussian_filter(image, sigma, mode="nearest", radius=int(math.ceil(3 * sigma)))


def adjust_brightness(image, factor):
    return np.clip(image * factor, 0.0, 1.0)


def apply(image, mask, params):
    """Apply drawn ``params`` to an image/mask pair, in ``params['order']``."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    for name in params["order"]:
        if name == "brightness":
            image = adjust_brightness(image, params["brightness"])
        elif name == "blur":
            image = gaussian_blur(image, params["blur_sigma"])
        elif name == "scale":
            image, mask = scale(image, mask, *params["scale"])
        elif name == "translate":
            image, mask = translate(image, mask, *params["translate"])
        elif name == "rotate":
            image, mask = rotate(image, mask, params["rotate_deg"])
        else:
            raise ValueError(f"unknown transform {name!r}")
    return image, mask.astype(np.uint8, copy=False)


def augment(sample, rng, config=AugmentConfig()):
    """Randomly augmented copy of ``sample``."""
    params = draw_params(config, rng)
    image, mask = apply(sample.image, sample.mask, params)
    return replace(sample, image=image, mask=mask)
