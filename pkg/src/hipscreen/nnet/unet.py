"""Lightweight multi-class U-Net with one convolution per encoder/decoder level."""

from dataclasses import asdict, dataclass

import numpy as np

from hipscreen.errors import ConfigError, ShapeError
from hipscreen.nnet import layers

N_CLASSES = 4


@dataclass(frozen=True)
class UNetConfig:
    """Architecture of the network.

    ``channels[i]`` is the width of encoder level ``i`` (and of the decoder
    level at the same resolution).  With the defaults the spatial path is
    128 -> 64 -> 32 -> 16 -> 8 -> 4.
    """

    input_size: int = 128
    levels: int = 5
    channels: tuple = (8, 16, 32, 64, 64)
    bottleneck: int = 64
    classes: int = N_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != self.levels:
            raise ConfigError(f"need {self.levels} channel widths, got {len(self.channels)}")
        if self.input_size % (2 ** self.levels) or self.input_size // 2 ** self.levels != 4:
            raise ConfigError(
                f"input_size / 2**levels must equal 4 (got {self.input_size} / 2**{self.levels})")
        if min(self.channels) < 1 or self.bottleneck < 1 or self.classes < 2:
            raise ConfigError("channel widths must be positive and classes >= 2")

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _conv_block_names(config):
    """(name, in_channels, out_channels) for every conv+BN+ReLU block, in forward order."""
    blocks = []
    in_ch = 1
    for i, ch in enumerate(config.channels):
        blocks.append((f"enc{i}", in_ch, ch))
        in_ch = ch
    blocks.append(("bottleneck", in_ch, config.bottleneck))
    prev = config.bottleneck
    for i in reversed(range(config.levels)):
        ch = config.channels[i]
        blocks.append((f"dec{i}", prev + ch, ch))
        prev = ch
    return blocks


def init_params(config, rng, dtype=np.float32):
    """He-normal kernels, zero biases, unit BN scale and zero BN shift.

    Returns ``(params, bn_state)``; ``bn_state`` holds the running statistics.
    """
    params = {}
    state = {}
    for name, cin, cout in _conv_block_names(config):
        std = np.sqrt(2.0 / (cin * 9))
        params[f"{name}.w"] = (rng.standard_normal((cout, cin, 3, 3)) * std).astype(dtype)
        params[f"{name}.gamma"] = np.ones(cout, dtype=dtype)
        params[f"{name}.beta"] = np.zeros(cout, dtype=dtype)
        state[f"{name}.running_mean"] = np.zeros(cout, dtype=dtype)
        state[f"{name}.running_var"] = np.ones(cout, dtype=dtype)
    c0 = config.channels[0]
    params["head.w"] = (rng.standard_normal((config.classes, c0)) * np.sqrt(2.0 / c0)).astype(dtype)
    params["head.b"] = np.zeros(config.classes, dtype=dtype)
    return params, state


def _block_forward(x, params, state, name, mode):
    z, conv_cache = layers.conv2d_forward(x, params[f"{name}.w"])
    z, bn_cache = layers.batchnorm_forward(
        z, params[f"{name}.gamma"], params[f"{name}.beta"],
        state[f"{name}.running_mean"], state[f"{name}.running_var"], mode)
    out, relu_mask = layers.relu_forward(z)
    return out, (name, conv_cache, bn_cache, relu_mask)


def _block_backward(dout, cache, grads):
    name, conv_cache, bn_cache, relu_mask = cache
    dz = layers.relu_backward(dout, relu_mask)
    dz, grads[f"{name}.gamma"], grads[f"{name}.beta"] = layers.batchnorm_backward(dz, bn_cache)
    dx, grads[f"{name}.w"], _ = layers.conv2d_backward(dz, conv_cache)
    return dx


def unet_forward(config, params, state, batch, mode="infer"):
    """Logits ``[N, classes, S, S]`` for a batch ``[N, 1, S, S]``.

    ``mode="train"`` uses batch statistics and updates ``state`` in place.
    Returns ``(logits, cache)``; ``cache`` feeds :func:`unet_backward`.
    """
    s = config.input_size
    if batch.ndim != 4 or batch.shape[1:] != (1, s, s):
        raise ShapeError(f"expected batch of shape [N,1,{s},{s}], got {batch.shape}")
    x = batch.astype(params["head.w"].dtype, copy=False)
    skips, caches = [], []
    for i in range(config.levels):
        x, c = _block_forward(x, params, state, f"enc{i}", mode)
        skips.append(x)
        x, argmax = layers.maxpool2(x)
        caches.append((c, argmax))
    x, bottleneck_cache = _block_forward(x, params, state, "bottleneck", mode)
    dec_caches = []
    for i in reversed(range(config.levels)):
        up = layers.upsample2(x)
        x = np.concatenate([up, skips[i]], axis=1)
        x, c = _block_forward(x, params, state, f"dec{i}", mode)
        dec_caches.append((c, up.shape[1]))
    logits, head_cache = layers.conv1x1_forward(x, params["head.w"], params["head.b"])
    return logits, (caches, bottleneck_cache, dec_caches, head_cache)


def unet_backward(config, cache, dlogits):
    """Gradients of the loss w.r.t. every parameter, keyed like ``params``."""
    caches, bottleneck_cache, dec_caches, head_cache = cache
    grads = {}
    dx, grads["head.w"], grads["head.b"] = layers.conv1x1_backward(dlogits, head_cache)
    dskips = [None] * config.levels
    for i, (c, n_up) in enumerate(reversed(dec_caches)):
        dcat = _block_backward(dx, c, grads)
        dskips[i] = dcat[:, n_up:]
        dx = layers.upsample2_backward(dcat[:, :n_up])
    dx = _block_backward(dx, bottleneck_cache, grads)
    for i in reversed(range(config.levels)):
        c, argmax = caches[i]
        dx = layers.maxpool2_backward(dx, argmax) + dskips[i]
        dx = _block_backward(dx, c, grads)
    return grads
