"""Stateful layers: parameters plus cached activations for backward.

Layers process one sample at a time (channels last) except Dense,
BatchNorm2D and Dropout, which also accept a leading batch axis. Every
backward accumulates parameter gradients via Parameter.accumulate, so
frozen parameters stay untouched.
"""

import numpy as np

from . import ops
from .errors import ShapeError
from .tensor import Parameter, he_uniform

GATES = ("f", "i", "o", "c")


class Conv3D:
    """3D convolution with bias and optional ReLU."""

    def __init__(self, ksize, in_channels, filters, strides=(1, 1, 1),
                 padding="same", activation="relu", rng=None, dtype=np.float32,
                 name="conv3d"):
        self.ksize = tuple(ksize)
        self.strides = tuple(strides)
        self.padding = padding
        self.activation = activation
        self.name = name
        kt, kh, kw = self.ksize
        fan_in = kt * kh * kw * in_channels
        rng = rng or np.random.default_rng(0)
        self.w = Parameter(
            he_uniform(rng, self.ksize + (in_channels, filters), fan_in, dtype),
            name=f"{name}.w",
        )
        self.b = Parameter(np.zeros(filters, dtype=dtype), name=f"{name}.b")
        self._caches = []

    def params(self):
        return [self.w, self.b]

    def clear_caches(self):
        self._caches.clear()

    def forward(self, x, keep_cache=False):
        y, cache = ops.conv3d_forward(x, self.w.value, self.b.value,
                                      self.strides, self.padding)
        if self.activation == "relu":
            y = ops.relu(y)
        if keep_cache:
            self._caches.append((cache, y if self.activation == "relu" else None))
        return y

    def backward(self, dy, need_dx=True):
        cache, y = self._caches.pop()
        if self.activation == "relu":
            dy = ops.relu_grad(dy, y)
        dx, dw, db = ops.conv3d_backward(dy, cache, need_dx)
        self.w.accumulate(dw)
        self.b.accumulate(db)
        return dx


class MaxPool3D:
    def __init__(self, window, strides, padding="same", name="maxpool3d"):
        self.window = tuple(window)
        self.strides = tuple(strides)
        self.padding = padding
        self.name = name
        self._caches = []

    def params(self):
        return []

    def clear_caches(self):
        self._caches.clear()

    def forward(self, x, keep_cache=False):
        y, cache = ops.maxpool3d_forward(x, self.window, self.strides, self.padding)
        if keep_cache:
            self._caches.append(cache)
        return y

    def backward(self, dy, need_dx=True):
        cache = self._caches.pop()
        if not need_dx:
            return None
        return ops.maxpool3d_backward(dy, cache)


class Dense:
    """Fully connected layer, optionally ReLU-activated."""

    def __init__(self, n_in, n_out, activation=None, rng=None,
                 dtype=np.float32, name="dense"):
        rng = rng or np.random.default_rng(0)
        self.activation = activation
        self.name = name
        self.w = Parameter(he_uniform(rng, (n_in, n_out), n_in, dtype),
                           name=f"{name}.w")
        self.b = Parameter(np.zeros(n_out, dtype=dtype), name=f"{name}.b")
        self._caches = []

    def params(self):
        return [self.w, self.b]

    def clear_caches(self):
        self._caches.clear()

    def forward(self, x, keep_cache=False):
        y, cache = ops.dense_forward(x, self.w.value, self.b.value)
        if self.activation == "relu":
            y = ops.relu(y)
        if keep_cache:
            self._caches.append((cache, y if self.activation == "relu" else None))
        return y

    def backward(self, dy):
        cache, y = self._caches.pop()
        if self.activation == "relu":
            dy = ops.relu_grad(dy, y)
        dx, dw, db = ops.dense_backward(dy, cache)
        self.w.accumulate(dw)
        self.b.accumulate(db)
        return dx


class BatchNorm2D:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32,
                 name="batchnorm"):
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.gamma = Parameter(np.ones(channels, dtype=dtype), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._caches = []

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def forward(self, x, mode="infer", keep_cache=False):
        y, cache, rmean, rvar = ops.batchnorm_forward(
            x, self.gamma.value, self.beta.value,
            self.running_mean, self.running_var,
            mode, self.momentum, self.eps,
        )
        if mode == "train":
            self.running_mean = rmean.astype(self.running_mean.dtype)
            self.running_var = rvar.astype(self.running_var.dtype)
        if keep_cache:
            self._caches.append(cache)
        return y

    def clear_caches(self):
        self._caches.clear()

    def backward(self, dy):
        dx, dgamma, dbeta = ops.batchnorm_backward(dy, self._caches.pop())
        self.gamma.accumulate(dgamma)
        self.beta.accumulate(dbeta)
        return dx


class Dropout:
    """Inverted dropout; identity when not training."""

    def __init__(self, rate, name="dropout"):
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.name = name
        self._masks = []

    def params(self):
        return []

    def clear_caches(self):
        self._masks.clear()

    def forward(self, x, train=False, rng=None, keep_cache=False):
        if not train or self.rate == 0.0:
            if keep_cache:
                self._masks.append(None)
            return x
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        mask = mask.astype(x.dtype)
        if keep_cache:
            self._masks.append(mask)
        return x * mask

    def backward(self, dy):
        mask = self._masks.pop()
        if mask is None:
            return dy
        return dy * mask


class ConvLSTM2D:
    """Convolutional LSTM over a (T, H, W, Cin) sequence.

    Gate pre-activations are `W * x_t + U * h_{t-1} + b` with same-padded
    3x3 convolutions by default, so hidden and cell states keep the input's
    spatial extents. Forget/input/output gates are sigmoid, the cell
    candidate is tanh:

        c_t = f_t . c_{t-1} + i_t . tanh(W_c * x_t + U_c * h_{t-1} + b_c)
        h_t = o_t . tanh(c_t)

    Backward unrolls the full recurrence (backpropagation through time).
    """

    def __init__(self, in_channels, filters, ksize=3, return_sequences=True,
                 rng=None, dtype=np.float32, name="convlstm"):
        self.in_channels = in_channels
        self.filters = filters
        self.ksize = (ksize, ksize) if isinstance(ksize, int) else tuple(ksize)
        self.return_sequences = return_sequences
        self.name = name
        rng = rng or np.random.default_rng(0)
        kh, kw = self.ksize
        self.w = {}  # input kernels per gate
        self.u = {}  # recurrent kernels per gate
        self.b = {}
        for gate in GATES:
            self.w[gate] = Parameter(
                he_uniform(rng, (kh, kw, in_channels, filters), kh * kw * in_channels, dtype),
                name=f"{name}.w_{gate}",
            )
            self.u[gate] = Parameter(
                he_uniform(rng, (kh, kw, filters, filters), kh * kw * filters, dtype),
                name=f"{name}.u_{gate}",
            )
            self.b[gate] = Parameter(np.zeros(filters, dtype=dtype),
                                     name=f"{name}.b_{gate}")
        self._caches = []

    def params(self):
        out = []
        for gate in GATES:
            out.append(self.w[gate])
        for gate in GATES:
            out.append(self.u[gate])
        for gate in GATES:
            out.append(self.b[gate])
        return out

    def clear_caches(self):
        self._caches.clear()

    def _fuse(self):
        # One (kh, kw, C, 4F) kernel per source keeps each step at two
        # convolutions instead of eight.
        w = np.concatenate([self.w[g].value for g in GATES], axis=3)
        u = np.concatenate([self.u[g].value for g in GATES], axis=3)
        b = np.concatenate([self.b[g].value for g in GATES])
        return w, u, b

    def step(self, x_t, state):
        """One recurrence step; returns (c_new, h_new). No caches kept."""
        c_prev, h_prev = state
        w, u, b = self._fuse()
        zx, _ = ops.conv2d_forward(x_t, w, None, 1, "same")
        zh, _ = ops.conv2d_forward(h_prev, u, None, 1, "same")
        z = zx + zh + b
        f_gate, i_gate, o_gate, g_pre = np.split(z, 4, axis=-1)
        f = ops.sigmoid(f_gate)
        i = ops.sigmoid(i_gate)
        o = ops.sigmoid(o_gate)
        g = ops.tanh(g_pre)
        c_new = f * c_prev + i * g
        h_new = o * ops.tanh(c_new)
        return c_new, h_new

    def forward(self, xs, keep_cache=False):
        if xs.ndim != 4 or xs.shape[3] != self.in_channels:
            raise ShapeError(
                f"{self.name} expects TxHxWx{self.in_channels}, got {xs.shape}"
            )
        t_len, h, w_ext = xs.shape[:3]
        dtype = xs.dtype
        fused_w, fused_u, fused_b = self._fuse()
        c = np.zeros((h, w_ext, self.filters), dtype=dtype)
        hs = np.zeros_like(c)
        steps = []
        outputs = np.empty((t_len, h, w_ext, self.filters), dtype=dtype)
        for t in range(t_len):
            zx, cache_x = ops.conv2d_forward(xs[t], fused_w, None, 1, "same")
            zh, cache_h = ops.conv2d_forward(hs, fused_u, None, 1, "same")
            z = zx + zh + fused_b
            f_gate, i_gate, o_gate, g_pre = np.split(z, 4, axis=-1)
            f = ops.sigmoid(f_gate)
            i = ops.sigmoid(i_gate)
            o = ops.sigmoid(o_gate)
            g = ops.tanh(g_pre)
            c_new = f * c + i * g
            tanh_c = ops.tanh(c_new)
            h_new = o * tanh_c
            if keep_cache:
                steps.append((cache_x, cache_h, f, i, o, g, c, tanh_c))
            c, hs = c_new, h_new
            outputs[t] = hs
        if keep_cache:
            self._caches.append((steps, fused_w, fused_u))
        return outputs if self.return_sequences else outputs[-1]

    def backward(self, d_out, need_dx=True):
        """BPTT through the cached forward; d_out matches forward's output."""
        steps, fused_w, fused_u = self._caches.pop()
        t_len = len(steps)
        f4 = 4 * self.filters
        dw = np.zeros(fused_w.shape, dtype=fused_w.dtype)
        du = np.zeros(fused_u.shape, dtype=fused_u.dtype)
        db = np.zeros(f4, dtype=fused_w.dtype)
        dxs = None
        dh_carry = None
        dc_carry = None
        for t in reversed(range(t_len)):
            cache_x, cache_h, f, i, o, g, c_prev, tanh_c = steps[t]
            if self.return_sequences:
                dh = d_out[t].astype(fused_w.dtype, copy=True)
            else:
                dh = d_out.copy() if t == t_len - 1 else np.zeros_like(f)
            if dh_carry is not None:
                dh += dh_carry
            dc = dh * o * (1.0 - tanh_c * tanh_c)
            if dc_carry is not None:
                dc += dc_carry
            do = dh * tanh_c
            df = dc * c_prev
            di = dc * g
            dg = dc * i
            dc_carry = dc * f
            dz = np.concatenate(
                [
                    df * f * (1.0 - f),
                    di * i * (1.0 - i),
                    do * o * (1.0 - o),
                    dg * (1.0 - g * g),
                ],
                axis=-1,
            )
            db += dz.reshape(-1, f4).sum(axis=0)
            dx_t, dw_t, _ = ops.conv2d_backward(dz, cache_x, need_dx)
            dh_carry, du_t, _ = ops.conv2d_backward(dz, cache_h, True)
            dw += dw_t
            du += du_t
            if need_dx:
                if dxs is None:
                    dxs = np.empty((t_len,) + dx_t.shape, dtype=dx_t.dtype)
                dxs[t] = dx_t
        for k, gate in enumerate(GATES):
            sel = slice(k * self.filters, (k + 1) * self.filters)
            self.w[gate].accumulate(dw[..., sel])
            self.u[gate].accumulate(du[..., sel])
            self.b[gate].accumulate(db[sel])
        return dxs
