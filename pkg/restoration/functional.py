"""
Forward/backward pairs for the restoration network's primitives.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Arrays are NCHW float64.

Convolutions pad by edge replication, so a spatially constant input stays
constant through a conv stack.
"""

from __future__ import annotations

from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

Cache = Tuple[Any, ...]


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _fold_edge_pad(dxp: np.ndarray, pad: int, height: int, width: int) -> np.ndarray:
    """Adjoint of ``np.pad(mode="edge")`` on the last two axes."""
    if pad == 0:
        return dxp
    rows = np.clip(np.arange(height + 2 * pad) - pad, 0, height - 1)
    cols = np.clip(np.arange(width + 2 * pad) - pad, 0, width - 1)
    folded_rows = np.zeros(dxp.shape[:2] + (height, width + 2 * pad))
    np.add.at(folded_rows, (slice(None), slice(None), rows), dxp)
    dx = np.zeros(dxp.shape[:2] + (height, width))
    np.add.at(dx, (slice(None), slice(None), slice(None), cols), folded_rows)
    return dx


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Cache]:
    """Stride-1 same convolution; ``w`` is (out, in, L, L) with odd L."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIHW weights, got {x.shape} and {w.shape}")
    out_ch, in_ch, kh, kw = w.shape
    if x.shape[1] != in_ch:
        raise ValueError(f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {in_ch}")
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square and odd, got {kh}x{kw}")
    pad = kh // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge") if pad else x
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N, C, H, W, L, L
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, w, windows, pad, b is not None)


def conv2d_backward(dout: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    x_shape, w, windows, pad, has_bias = cache
    _, _, height, width = x_shape
    kh, kw = w.shape[2:]

    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3)) if has_bias else None

    dxp = np.zeros((x_shape[0], x_shape[1], height + 2 * pad, width + 2 * pad))
    for di in range(kh):
        for dj in range(kw):
            contrib = np.tensordot(dout, w[:, :, di, dj], axes=([1], [0]))  # N, H, W, C
            dxp[:, :, di : di + height, dj : dj + width] += contrib.transpose(0, 3, 1, 2)
    return _fold_edge_pad(dxp, pad, height, width), dw, db


# ---------------------------------------------------------------------------
# Batch normalisation
# ---------------------------------------------------------------------------


def batchnorm2d_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    bn_param: Dict[str, Any],
) -> Tuple[np.ndarray, Cache]:
    """Per-channel batch normalisation.

    ``bn_param`` carries ``mode`` ("train" or "eval") and the running
    statistics, which train mode updates in place with momentum 0.1 (running
    variance uses the unbiased batch variance).
    """
    mode = bn_param.get("mode", "train")
    eps = bn_param.get("eps", BN_EPS)
    momentum = bn_param.get("momentum", BN_MOMENTUM)
    channels = x.shape[1]
    running_mean = bn_param.setdefault("running_mean", np.zeros(channels))
    running_var = bn_param.setdefault("running_var", np.ones(channels))

    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ValueError(f"batch norm in train mode needs >= 2 values per channel, got {count}")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        bn_param["running_mean"] = (1 - momentum) * running_mean + momentum * mean
        bn_param["running_var"] = (1 - momentum) * running_var + momentum * var * count / (count - 1)
    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(running_var + eps)
        x_hat = (x - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    else:
        raise ValueError(f"invalid batch norm mode {mode!r}")

    out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    return out, (mode, x_hat, inv_std, gamma)


def batchnorm2d_backward(dout: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mode, x_hat, inv_std, gamma = cache
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * x_hat).sum(axis=(0, 2, 3))
    dx_hat = dout * gamma[None, :, None, None]
    scale = inv_std[None, :, None, None]
    if mode == "eval":
        return dx_hat * scale, dgamma, dbeta

    count = dout.shape[0] * dout.shape[2] * dout.shape[3]
    sum_dx_hat = dx_hat.sum(axis=(0, 2, 3), keepdims=True)
    sum_dx_hat_x = (dx_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
    dx = scale / count * (count * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_x)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    mask = x > 0
    return x * mask, (mask,)


def relu_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    (mask,) = cache
    return dout * mask


def sigmoid_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    # Split by sign so exp never overflows.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, (out,)


def sigmoid_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    (out,) = cache
    return dout * out * (1.0 - out)


def softmax_forward(x: np.ndarray, axis: int = -1) -> Tuple[np.ndarray, Cache]:
    shifted = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)
    return out, (out, axis)


def softmax_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    out, axis = cache
    return out * (dout - (dout * out).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def avgpool2_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """2x2 average pool, stride 2."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsampling needs even height and width, got {h}x{w}")
    out = x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out, (x.shape,)


def avgpool2_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    (shape,) = cache
    dx = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
    return dx.reshape(shape)


def upsample_matrix(size: int) -> np.ndarray:
    """(2 size, size) bilinear interpolation matrix, half-pixel centres, clamped."""
    out = np.zeros((2 * size, size))
    src = (np.arange(2 * size) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    rows = np.arange(2 * size)
    np.add.at(out, (rows, lo), 1.0 - frac)
    np.add.at(out, (rows, hi), frac)
    return out


def upsample2_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """Bilinear 2x upsampling."""
    uh = upsample_matrix(x.shape[2])
    uw = upsample_matrix(x.shape[3])
    out = np.einsum("ih,nchw,jw->ncij", uh, x, uw, optimize=True)
    return out, (uh, uw)


def upsample2_backward(dout: np.ndarray, cache: Cache) -> np.ndarray:
    uh, uw = cache
    return np.einsum("ih,ncij,jw->nchw", uh, dout, uw, optimize=True)
