"""Forward and backward kernels for the layers used by the U-Net.

Arrays are NCHW numpy arrays.  Every ``*_forward`` returns ``(out, cache)``
and the matching ``*_backward`` consumes ``(dout, cache)``.
"""

import numpy as np

from hipscreen.errors import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _im2col3x3(x):
    """Columns of shape (C*9, N*H*W) for a 3x3 SAME window."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    xp = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, 3, 3, n, h, w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(c * 9, n * h * w)


def _col2im3x3(dcols, shape):
    n, c, h, w = shape
    dcols = dcols.reshape(c, 3, 3, n, h, w)
    dxp = np.zeros((c, n, h + 2, w + 2), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, i, j]
    return dxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3)


def conv2d_forward(x, kernel, bias=None):
    """3x3 cross-correlation with zero padding 1, so H and W are preserved.

    ``bias`` may be None for convolutions feeding a batch-norm layer.
    """
    if x.ndim != 4 or kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects x[N,C,H,W] and kernel[F,C,3,3], got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f = kernel.shape[0]
    if kernel.shape[1] != c:
        raise ShapeError(f"kernel has {kernel.shape[1]} input channels, input has {c}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"bias shape {bias.shape} does not match {f} filters")
    cols = _im2col3x3(x)
    out = kernel.reshape(f, c * 9) @ cols
    if bias is not None:
        out += bias[:, None]
    out = out.reshape(f, n, h, w).transpose(1, 0, 2, 3)
    return out, (cols, kernel, x.shape, bias is not None)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dkernel, dbias)``; ``dbias`` is None when no bias was used."""
    cols, kernel, xshape, has_bias = cache
    f = kernel.shape[0]
    d2 = dout.transpose(1, 0, 2, 3).reshape(f, -1)
    dkernel = (d2 @ cols.T).reshape(kernel.shape)
    dbias = d2.sum(axis=1) if has_bias else None
    dcols = kernel.reshape(f, -1).T @ d2
    return _col2im3x3(dcols, xshape), dkernel, dbias


def conv2d(x, kernel, bias=None):
    return conv2d_forward(x, kernel, bias)[0]


def conv1x1_forward(x, weight, bias):
    """Pointwise convolution; ``weight`` has shape (F, C)."""
    n, c, h, w = x.shape
    if weight.shape[1] != c:
        raise ShapeError(f"1x1 weight expects {weight.shape[1]} channels, input has {c}")
    xc = x.transpose(1, 0, 2, 3).reshape(c, -1)
    out = weight @ xc + bias[:, None]
    return out.reshape(-1, n, h, w).transpose(1, 0, 2, 3), (xc, weight, x.shape)


def conv1x1_backward(dout, cache):
    xc, weight, xshape = cache
    f = weight.shape[0]
    d2 = dout.transpose(1, 0, 2, 3).reshape(f, -1)
    dx = (weight.T @ d2).reshape(xshape[1], xshape[0], xshape[2], xshape[3])
    return dx.transpose(1, 0, 2, 3), d2 @ xc.T, d2.sum(axis=1)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode):
    """Per-channel batch normalisation over (N, H, W).

    In ``"train"`` mode the running statistics are updated in place.
    """
    shape = (1, -1, 1, 1)
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var
    elif mode == "infer":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out.astype(x.dtype, copy=False), (xhat, gamma, inv_std, mode)


def batchnorm_backward(dout, cache):
    xhat, gamma, inv_std, mode = cache
    shape = (1, -1, 1, 1)
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(shape)
    if mode == "infer":
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (dxhat - (dbeta * gamma).reshape(shape) / m
          - xhat * (dgamma * gamma).reshape(shape) / m) * inv_std.reshape(shape)
    return dx, dgamma, dbeta


def batchnorm(x, gamma, beta, running_mean, running_var, mode="train"):
    return batchnorm_forward(x, gamma, beta, running_mean, running_var, mode)[0]


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool2(x):
    """2x2 stride-2 max pooling.

    Returns ``(out, argmax)`` where ``argmax`` holds the flat index 0..3 of
    the winning element inside each window (row-major, first maximum wins).
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2_backward(dout, argmax):
    n, c, h2, w2 = dout.shape
    dwin = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, argmax[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dwin.reshape(n, c, h2 * 2, w2 * 2)


def upsample2(x):
    """Nearest-neighbour 2x replication."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dout):
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce_loss(logits, target):
    """Mean pixelwise cross-entropy.

    Parameters
    ----------
    logits : array (N, K, H, W)
    target : integer array (N, H, W) with values in 0..K-1

    Returns
    -------
    loss : float
    dlogits : array like ``logits``, gradient of the mean loss
    """
    target = np.asarray(target)
    if target.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(f"target shape {target.shape} does not match logits {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    idx = target[:, None].astype(np.intp)
    log_p_target = np.take_along_axis(z, idx, axis=1) - np.log(s)
    count = target.size
    loss = float(-log_p_target.sum(dtype=np.float64) / count)
    dlogits = e / s
    np.put_along_axis(dlogits, idx, np.take_along_axis(dlogits, idx, axis=1) - 1, axis=1)
    dlogits /= count
    return loss, dlogits
