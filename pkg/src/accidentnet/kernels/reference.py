"""Pure-NumPy kernel implementations.

Fallback backend used when the compiled core is unavailable. Signatures
and semantics (including max-pool tie-breaking and the Horn-Schunck
update ordering) match accidentnet.kernels._core exactly.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _window_view(xpad, ksize, strides, out_extents):
    """Zero-copy (To,Ho,Wo,kt,kh,kw,C) sliding-window view of xpad."""
    kt, kh, kw = ksize
    st, sh, sw = strides
    to, ho, wo = out_extents
    s = xpad.strides
    return as_strided(
        xpad,
        shape=(to, ho, wo, kt, kh, kw, xpad.shape[3]),
        strides=(s[0] * st, s[1] * sh, s[2] * sw, s[0], s[1], s[2], s[3]),
        writeable=False,
    )


def im2col3d(xpad, ksize, strides, out_extents, tile):
    """Gather patch rows for the output tile (t0, t1, h0, h1).

    A tile is a rectangular block of output rows: temporal indices
    [t0, t1) crossed with spatial rows [h0, h1). Returns
    ((t1-t0)*(h1-h0)*Wo, kt*kh*kw*C) with patch elements in
    (kt, kh, kw, channel) order.
    """
    kt, kh, kw = ksize
    st, sh, sw = strides
    _, ho, wo = out_extents
    t0, t1, h0, h1 = tile
    c_in = xpad.shape[3]
    s = xpad.strides
    # Merge (kw, C) into one contiguous axis so the materializing reshape
    # copies in wide runs instead of per element.
    view = as_strided(
        xpad,
        shape=(out_extents[0], ho, wo, kt, kh, kw * c_in),
        strides=(s[0] * st, s[1] * sh, s[2] * sw, s[0], s[1], s[3]),
        writeable=False,
    )[t0:t1, h0:h1]
    return view.reshape((t1 - t0) * (h1 - h0) * wo, kt * kh * kw * c_in)


def col2im3d(cols, dxpad, ksize, strides, out_extents, tile):
    """Scatter-accumulate patch-row gradients of one tile back into dxpad."""
    kt, kh, kw = ksize
    st, sh, sw = strides
    _, ho, wo = out_extents
    t0, t1, h0, h1 = tile
    c_in = dxpad.shape[3]
    block = cols.reshape(t1 - t0, h1 - h0, wo, kt, kh, kw, c_in)
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                dxpad[
                    a + t0 * st : a + (t1 - 1) * st + 1 : st,
                    b + h0 * sh : b + (h1 - 1) * sh + 1 : sh,
                    c : c + (wo - 1) * sw + 1 : sw,
                    :,
                ] += block[:, :, :, a, b, c, :]


def maxpool3d(xpad, ksize, strides, out_extents):
    """Window max over (-inf padded) input.

    Returns (out, argmax) where argmax holds flat indices into xpad;
    ties go to the first maximal element in (kt, kh, kw) scan order.
    """
    kt, kh, kw = ksize
    st, sh, sw = strides
    to, ho, wo = out_extents
    tp, hp, wp, c_in = xpad.shape
    view = _window_view(xpad, ksize, strides, out_extents)
    windows = np.transpose(view, (0, 1, 2, 6, 3, 4, 5)).reshape(
        to, ho, wo, c_in, kt * kh * kw
    )
    local = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    ti, hi, wi = np.unravel_index(local, (kt, kh, kw))
    tg, hg, wg, cg = np.ogrid[:to, :ho, :wo, :c_in]
    flat = (((tg * st + ti) * hp + (hg * sh + hi)) * wp + (wg * sw + wi)) * c_in + cg
    return np.ascontiguousarray(out), flat.astype(np.int64)


def maxpool3d_backward(dout, argmax, dxpad):
    """Route each output gradient to its argmax source element."""
    flat = np.bincount(
        argmax.ravel(), weights=dout.ravel().astype(np.float64), minlength=dxpad.size
    )
    dxpad.ravel()[...] += flat.astype(dxpad.dtype)


def _avg4(f):
    # ((north+south) + (west+east))/4 with edge replication; the grouping
    # is load-bearing: it keeps horizontal mirroring bit-exact.
    n = np.concatenate([f[:1], f[:-1]], axis=0)
    s = np.concatenate([f[1:], f[-1:]], axis=0)
    w = np.concatenate([f[:, :1], f[:, :-1]], axis=1)
    e = np.concatenate([f[:, 1:], f[:, -1:]], axis=1)
    return ((n + s) + (w + e)) * f.dtype.type(0.25)


def hs_sweeps(u, v, ix, iy, it, alpha2, niter):
    """Run `niter` Jacobi sweeps of the Horn-Schunck update."""
    alpha2 = u.dtype.type(alpha2)
    den = (alpha2 + ix * ix) + iy * iy
    for _ in range(niter):
        ubar = _avg4(u)
        vbar = _avg4(v)
        w = (((ix * ubar) + (iy * vbar)) + it) / den
        u = ubar - ix * w
        v = vbar - iy * w
    return u, v
