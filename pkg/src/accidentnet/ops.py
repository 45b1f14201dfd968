"""Forward and backward kernels for the network layers.

Everything here is per-sample and channels-last: conv3d input is
(T, H, W, C), kernels are (kt, kh, kw, Cin, F). Backward passes are
hand-written companions of each forward; there is no autodiff graph.
The heavy gather/scatter loops are delegated to the selected kernel
backend (compiled core or NumPy fallback).
"""

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError

# Rows of an im2col tile are capped so the scratch matrix stays
# cache-resident between the gather and the GEMM; spilling it to DRAM
# roughly doubles the wall time of the big stem convolution.
_TILE_BYTES = 2 * 1024 * 1024

CLASSES = ("accident", "normal")


def out_extent(extent, k, stride, padding):
    """Output extent and (lo, hi) padding for one axis.

    "same" pads with zeros, symmetric with the extra element trailing;
    "valid" uses no padding and must keep the output non-empty.
    """
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        out = -(-extent // stride)
        total = max((out - 1) * stride + k - extent, 0)
        return out, (total // 2, total - total // 2)
    if padding == "valid":
        out = (extent - k) // stride + 1
        if out < 1:
            raise ShapeError(
                f"zero-sized output: extent {extent}, kernel {k}, stride {stride}, valid padding"
            )
        return out, (0, 0)
    raise ShapeError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv_output_shape(in_extents, ksize, strides, padding):
    """Per-axis output extents and paddings for a conv/pool."""
    outs, pads = [], []
    for extent, k, s in zip(in_extents, ksize, strides):
        o, p = out_extent(extent, k, s, padding)
        outs.append(o)
        pads.append(p)
    return tuple(outs), tuple(pads)


def _pad_input(x, pads, value=0.0):
    if all(p == (0, 0) for p in pads):
        return x
    return np.pad(x, list(pads) + [(0, 0)], mode="constant", constant_values=value)


def _output_tiles(out_extents, kc, itemsize):
    """Rectangular (t0, t1, h0, h1) output tiles of bounded im2col size."""
    to, ho, wo = out_extents
    per_t = ho * wo * kc * itemsize
    if per_t <= _TILE_BYTES:
        t_chunk = max(1, _TILE_BYTES // max(per_t, 1))
        for lo in range(0, to, t_chunk):
            yield lo, min(lo + t_chunk, to), 0, ho
        return
    h_chunk = max(1, _TILE_BYTES // max(wo * kc * itemsize, 1))
    for t in range(to):
        for hlo in range(0, ho, h_chunk):
            yield t, t + 1, hlo, min(hlo + h_chunk, ho)


def conv3d_forward(x, w, b, strides, padding):
    """3D convolution; returns (y, cache) with y of shape (To,Ho,Wo,F)."""
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f"conv3d expects TxHxWxC input and 5D kernel, got {x.shape}, {w.shape}")
    kt, kh, kw, c_k, f = w.shape
    if x.shape[3] != c_k:
        raise ShapeError(f"channel mismatch: input has {x.shape[3]}, kernel expects {c_k}")
    out_extents, pads = conv_output_shape(x.shape[:3], (kt, kh, kw), strides, padding)
    xpad = np.ascontiguousarray(_pad_input(x, pads))
    w2 = w.reshape(kt * kh * kw * c_k, f)
    _, ho, wo = out_extents
    y = np.empty(out_extents + (f,), dtype=x.dtype)
    for tile in _output_tiles(out_extents, w2.shape[0], x.itemsize):
        t0, t1, h0, h1 = tile
        cols = kernels.im2col3d(xpad, (kt, kh, kw), strides, out_extents, tile)
        y[t0:t1, h0:h1] = (cols @ w2).reshape(t1 - t0, h1 - h0, wo, f)
    if b is not None:
        y += b
    cache = (xpad, x.shape, w, strides, out_extents, pads)
    return y, cache


def conv3d_backward(dy, cache, need_dx=True):
    """Gradients w.r.t. input, kernel and bias; dx is None if not needed."""
    xpad, x_shape, w, strides, out_extents, pads = cache
    kt, kh, kw, c_k, f = w.shape
    w2 = w.reshape(-1, f)
    dw2 = np.zeros_like(w2)
    dxpad = np.zeros_like(xpad) if need_dx else None
    _, ho, wo = out_extents
    for tile in _output_tiles(out_extents, w2.shape[0], xpad.itemsize):
        t0, t1, h0, h1 = tile
        cols = kernels.im2col3d(xpad, (kt, kh, kw), strides, out_extents, tile)
        dy_tile = dy[t0:t1, h0:h1].reshape(-1, f)
        dw2 += cols.T @ dy_tile
        if need_dx:
            dcols = dy_tile @ w2.T
            kernels.col2im3d(dcols, dxpad, (kt, kh, kw), strides, out_extents, tile)
    db = dy.reshape(-1, f).sum(axis=0)
    dx = None
    if need_dx:
        (t, h, wd, _) = x_shape
        dx = dxpad[
            pads[0][0] : pads[0][0] + t,
            pads[1][0] : pads[1][0] + h,
            pads[2][0] : pads[2][0] + wd,
            :,
        ]
        if any(p != (0, 0) for p in pads):
            dx = np.ascontiguousarray(dx)
    return dx, dw2.reshape(w.shape), db


def conv2d_forward(x, w, b, stride, padding):
    """2D convolution on (H,W,C) with kernel (kh,kw,Cin,F)."""
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects HxWxC input and 4D kernel, got {x.shape}, {w.shape}")
    if isinstance(stride, int):
        stride = (stride, stride)
    y, cache = conv3d_forward(
        x[None], w[None], b, (1,) + tuple(stride), padding
    )
    return y[0], cache


def conv2d_backward(dy, cache, need_dx=True):
    dx, dw, db = conv3d_backward(dy[None], cache, need_dx)
    if dx is not None:
        dx = dx[0]
    return dx, dw[0], db


def maxpool3d_forward(x, window, strides, padding="valid"):
    """Max pooling over (T,H,W) windows, channels independent."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool3d expects TxHxWxC input, got {x.shape}")
    if any(k > e for k, e in zip(window, x.shape[:3])):
        raise ShapeError(f"pool window {window} larger than input {x.shape[:3]}")
    out_extents, pads = conv_output_shape(x.shape[:3], window, strides, padding)
    xpad = np.ascontiguousarray(_pad_input(x, pads, value=-np.inf))
    y, argmax = kernels.maxpool3d(xpad, tuple(window), tuple(strides), out_extents)
    cache = (argmax, xpad.shape, x.shape, pads)
    return y, cache


def maxpool3d_backward(dy, cache):
    """Route gradient to each window's argmax (first occurrence on ties)."""
    argmax, xpad_shape, x_shape, pads = cache
    dxpad = np.zeros(xpad_shape, dtype=dy.dtype)
    kernels.maxpool3d_backward(dy, argmax, dxpad)
    t, h, w, _ = x_shape
    dx = dxpad[
        pads[0][0] : pads[0][0] + t,
        pads[1][0] : pads[1][0] + h,
        pads[2][0] : pads[2][0] + w,
        :,
    ]
    return np.ascontiguousarray(dx) if any(p != (0, 0) for p in pads) else dx


def dense_forward(x, w, b):
    """y = x @ w + b for a vector (n,) or a batch (B, n)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense dimension mismatch: x {x.shape} vs w {w.shape}")
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    if x.ndim == 1:
        dw = np.outer(x, dy)
        db = dy.copy()
    else:
        dw = x.T @ dy
        db = dy.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def sigmoid(x):
    # Split on sign so exp never sees a large positive argument.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(dy, y):
    return dy * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(dy, y):
    return dy * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0)


def relu_grad(dy, y):
    return dy * (y > 0)


ACTIVATIONS = {
    "sigmoid": (sigmoid, sigmoid_grad),
    "tanh": (tanh, tanh_grad),
    "relu": (relu, relu_grad),
}


def activation(x, kind):
    """Elementwise activation by name ("sigmoid", "tanh" or "relu")."""
    try:
        return ACTIVATIONS[kind][0](x)
    except KeyError:
        raise ShapeError(f"unknown activation {kind!r}") from None


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode, momentum=0.9, eps=1e-5):
    """Per-channel batch normalization over all axes except the last.

    Train mode normalizes with batch statistics (biased variance) and
    returns updated running statistics; infer mode uses the running ones.
    """
    if x.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm channel mismatch: {x.shape[-1]} vs {gamma.shape[0]}")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.ndim < 2 or x.shape[0] == 0:
            raise ShapeError("batchnorm train mode needs a non-empty batch axis")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean = momentum * running_mean + (1.0 - momentum) * mean
        running_var = momentum * running_var + (1.0 - momentum) * var
    elif mode == "infer":
        mean = running_mean
        var = running_var
    else:
        raise ShapeError(f"batchnorm mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    cache = (xhat, inv_std.astype(x.dtype), gamma, axes, x.shape, mode)
    return y.astype(x.dtype), cache, running_mean, running_var


def batchnorm_backward(dy, cache):
    """Gradients for input, scale and shift (mode taken from the cache)."""
    xhat, inv_std, gamma, axes, x_shape, mode = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    if mode == "infer":
        dx = dy * gamma * inv_std
    else:
        m = np.prod([x_shape[a] for a in axes])
        dx = (gamma * inv_std / m) * (m * dy - dbeta - xhat * dgamma)
    return dx.astype(dy.dtype), dgamma, dbeta


def gap2d_forward(x):
    """Spatial mean per channel: (H,W,C) -> (C,) or (B,H,W,C) -> (B,C)."""
    if x.ndim == 3:
        return x.mean(axis=(0, 1)), x.shape
    if x.ndim == 4:
        return x.mean(axis=(1, 2)), x.shape
    raise ShapeError(f"gap2d expects HxWxC or BxHxWxC, got {x.shape}")


def gap2d_backward(dy, x_shape):
    """Distribute each channel gradient uniformly over H x W."""
    if len(x_shape) == 3:
        h, w, _ = x_shape
        return np.broadcast_to(dy / (h * w), x_shape).astype(dy.dtype)
    _, h, w, _ = x_shape
    return np.broadcast_to(dy[:, None, None, :] / (h * w), x_shape).astype(dy.dtype)


def softmax2(z):
    """Two-class softmax, float64 with max-subtraction for stability.

    Accepts (2,) logits or a (B, 2) batch; returns probabilities of the
    same shape as (p_accident, p_no_accident).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != 2:
        raise ShapeError(f"softmax2 expects 2 logits per row, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits in softmax2")
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def class_index(label):
    try:
        return CLASSES.index(label)
    except ValueError:
        raise ShapeError(f"label must be one of {CLASSES}, got {label!r}") from None


def cross_entropy(p, label):
    """-log p_label with the probability clamped at 1e-12."""
    idx = class_index(label) if isinstance(label, str) else int(label)
    if idx not in (0, 1):
        raise ShapeError(f"class index must be 0 or 1, got {idx}")
    return -float(np.log(max(float(p[idx]), 1e-12)))


def softmax_xent_grad(p, label):
    """Fused gradient of cross_entropy(softmax2(z)) w.r.t. the logits."""
    idx = class_index(label) if isinstance(label, str) else int(label)
    one_hot = np.zeros(2, dtype=np.float64)
    one_hot[idx] = 1.0
    return np.asarray(p, dtype=np.float64) - one_hot


def grad_check(loss_fn, params, eps=1e-5, tol=1e-4, rng=None, max_elements=10000):
    """Compare analytic parameter gradients against central differences.

    `loss_fn` must run forward+backward, accumulate into each parameter's
    grad, and return the scalar loss. Parameters above `max_elements` are
    subsampled with `rng`. Returns a report dict with the max relative
    error (|a-n| / max(|a|,|n|,1e-8)) and a pass flag.
    """
    for p in params:
        p.zero_grad()
    loss_fn()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    worst_param = ""
    checked = 0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        n = flat.size
        if n > max_elements:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(n, size=max_elements, replace=False)
        else:
            idxs = range(n)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn()
            flat[i] = orig - eps
            lm = loss_fn()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * eps)
            a_i = float(a.reshape(-1)[i])
            rel = abs(a_i - numeric) / max(abs(a_i), abs(numeric), 1e-8)
            checked += 1
            if rel > worst:
                worst = rel
                worst_param = p.name or "<unnamed>"
    for p in params:
        p.zero_grad()
    return {
        "max_rel_error": worst,
        "worst_param": worst_param,
        "checked": checked,
        "tolerance": tol,
        "passed": worst < tol,
    }
