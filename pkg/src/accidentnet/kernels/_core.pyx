# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: patch gather/scatter, max pooling, flow sweeps.

Semantics mirror accidentnet.kernels.reference; both backends must stay
interchangeable (same tie-breaking, same floating-point expression order).
"""

import numpy as np

from cython cimport floating
from libc.string cimport memcpy


def _im2col3d(floating[:, :, :, ::1] xpad, floating[:, ::1] cols,
              Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
              Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t wo,
              Py_ssize_t t0, Py_ssize_t t1, Py_ssize_t h0, Py_ssize_t h1):
    # The (kw, C) block of a patch is contiguous in both source and
    # destination, so each (kt, kh) offset is one wide copy.
    cdef Py_ssize_t c_in = xpad.shape[3]
    cdef Py_ssize_t run = kw * c_in
    cdef Py_ssize_t row = 0, col, to, oh, ow, a, b, ti, hi
    with nogil:
        for to in range(t0, t1):
            for oh in range(h0, h1):
                for ow in range(wo):
                    col = 0
                    for a in range(kt):
                        ti = to * st + a
                        for b in range(kh):
                            hi = oh * sh + b
                            memcpy(&cols[row, col], &xpad[ti, hi, ow * sw, 0],
                                   run * sizeof(floating))
                            col += run
                    row += 1


def _col2im3d(floating[:, ::1] cols, floating[:, :, :, ::1] dxpad,
              Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
              Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t wo,
              Py_ssize_t t0, Py_ssize_t t1, Py_ssize_t h0, Py_ssize_t h1):
    cdef Py_ssize_t c_in = dxpad.shape[3]
    cdef Py_ssize_t run = kw * c_in
    cdef Py_ssize_t row = 0, col, to, oh, ow, a, b, r, ti, hi
    cdef floating *dst
    cdef const floating *src
    with nogil:
        for to in range(t0, t1):
            for oh in range(h0, h1):
                for ow in range(wo):
                    col = 0
                    for a in range(kt):
                        ti = to * st + a
                        for b in range(kh):
                            hi = oh * sh + b
                            dst = &dxpad[ti, hi, ow * sw, 0]
                            src = &cols[row, col]
                            for r in range(run):
                                dst[r] += src[r]
                            col += run
                    row += 1


def _maxpool3d(floating[:, :, :, ::1] xpad, floating[:, :, :, ::1] out,
               long long[:, :, :, ::1] argmax,
               Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
               Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t to = out.shape[0], ho = out.shape[1], wo = out.shape[2]
    cdef Py_ssize_t c_in = xpad.shape[3], hp = xpad.shape[1], wp = xpad.shape[2]
    cdef Py_ssize_t t, h, w, ch, a, b, c, ti, hi, wi
    cdef floating best, val
    cdef Py_ssize_t best_idx
    with nogil:
        for t in range(to):
            for h in range(ho):
                for w in range(wo):
                    for ch in range(c_in):
                        best = xpad[t * st, h * sh, w * sw, ch]
                        best_idx = (((t * st) * hp + h * sh) * wp + w * sw) * c_in + ch
                        for a in range(kt):
                            ti = t * st + a
                            for b in range(kh):
                                hi = h * sh + b
                                for c in range(kw):
                                    wi = w * sw + c
                                    val = xpad[ti, hi, wi, ch]
                                    if val > best:
                                        best = val
                                        best_idx = ((ti * hp + hi) * wp + wi) * c_in + ch
                        out[t, h, w, ch] = best
                        argmax[t, h, w, ch] = best_idx


def _maxpool3d_backward(floating[:, :, :, ::1] dout,
                        long long[:, :, :, ::1] argmax,
                        floating[::1] dxpad_flat):
    cdef Py_ssize_t to = dout.shape[0], ho = dout.shape[1]
    cdef Py_ssize_t wo = dout.shape[2], c_in = dout.shape[3]
    cdef Py_ssize_t t, h, w, ch
    with nogil:
        for t in range(to):
            for h in range(ho):
                for w in range(wo):
                    for ch in range(c_in):
                        dxpad_flat[argmax[t, h, w, ch]] += dout[t, h, w, ch]


def _hs_sweep(floating[:, ::1] u, floating[:, ::1] v,
              floating[:, ::1] ix, floating[:, ::1] iy,
              floating[:, ::1] it, floating alpha2,
              floating[:, ::1] unew, floating[:, ::1] vnew):
    cdef Py_ssize_t height = u.shape[0], width = u.shape[1]
    cdef Py_ssize_t i, j, im, ip, jm, jp
    cdef floating ub, vb, gx, gy, w
    with nogil:
        for i in range(height):
            im = i - 1 if i > 0 else 0
            ip = i + 1 if i < height - 1 else height - 1
            for j in range(width):
                jm = j - 1 if j > 0 else 0
                jp = j + 1 if j < width - 1 else width - 1
                # Same grouping as the NumPy backend: ((n+s)+(w+e))/4.
                ub = ((u[im, j] + u[ip, j]) + (u[i, jm] + u[i, jp])) * <floating>0.25
                vb = ((v[im, j] + v[ip, j]) + (v[i, jm] + v[i, jp])) * <floating>0.25
                gx = ix[i, j]
                gy = iy[i, j]
                w = (((gx * ub) + (gy * vb)) + it[i, j]) / ((alpha2 + gx * gx) + gy * gy)
                unew[i, j] = ub - gx * w
                vnew[i, j] = vb - gy * w


def im2col3d(xpad, ksize, strides, out_extents, tile):
    """Gather patch rows for the output tile (t0, t1, h0, h1)."""
    kt, kh, kw = ksize
    st, sh, sw = strides
    wo = out_extents[2]
    t0, t1, h0, h1 = tile
    cols = np.empty(
        ((t1 - t0) * (h1 - h0) * wo, kt * kh * kw * xpad.shape[3]),
        dtype=xpad.dtype,
    )
    _im2col3d(xpad, cols, kt, kh, kw, st, sh, sw, wo, t0, t1, h0, h1)
    return cols


def col2im3d(cols, dxpad, ksize, strides, out_extents, tile):
    """Scatter-accumulate patch-row gradients of one tile back into dxpad."""
    kt, kh, kw = ksize
    st, sh, sw = strides
    t0, t1, h0, h1 = tile
    _col2im3d(np.ascontiguousarray(cols), dxpad, kt, kh, kw, st, sh, sw,
              out_extents[2], t0, t1, h0, h1)


def maxpool3d(xpad, ksize, strides, out_extents):
    """Window max with flat argmax into xpad; first-in-scan-order ties."""
    kt, kh, kw = ksize
    st, sh, sw = strides
    to, ho, wo = out_extents
    out = np.empty((to, ho, wo, xpad.shape[3]), dtype=xpad.dtype)
    argmax = np.empty(out.shape, dtype=np.int64)
    _maxpool3d(xpad, out, argmax, kt, kh, kw, st, sh, sw)
    return out, argmax


def maxpool3d_backward(dout, argmax, dxpad):
    """Route each output gradient to its argmax source element."""
    _maxpool3d_backward(np.ascontiguousarray(dout), argmax, dxpad.reshape(-1))


def hs_sweeps(u, v, ix, iy, it, alpha2, niter):
    """Run `niter` Jacobi sweeps of the Horn-Schunck update."""
    u = u.copy()  # double-buffered in place; keep caller arrays untouched
    v = v.copy()
    ubuf = np.empty_like(u)
    vbuf = np.empty_like(v)
    for _ in range(niter):
        _hs_sweep(u, v, ix, iy, it, alpha2, ubuf, vbuf)
        u, ubuf = ubuf, u
        v, vbuf = vbuf, v
    return u, v
