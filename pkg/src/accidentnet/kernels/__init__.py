"""Kernel backend selection.

The compiled core (Cython) is preferred when importable; otherwise the
NumPy reference implementation takes over. Set ACCIDENTNET_KERNELS to
"cython" or "python" to force a backend ("cython" raises if the
extension is missing).
"""

import os

from . import reference

_BACKENDS = {"python": reference}
try:
    from . import _core

    _BACKENDS["cython"] = _core
except ImportError:
    _core = None

_requested = os.environ.get("ACCIDENTNET_KERNELS", "auto")
if _requested not in ("auto", "cython", "python"):
    raise ValueError(
        f"ACCIDENTNET_KERNELS must be auto, cython or python, got {_requested!r}"
    )
if _requested == "cython" and _core is None:
    raise ImportError(
        "ACCIDENTNET_KERNELS=cython but accidentnet.kernels._core is not built"
    )

_active = _requested if _requested != "auto" else ("cython" if _core else "python")


def backend_name():
    """Name of the active backend: "cython" or "python"."""
    return _active


def available_backends():
    """Mapping of backend name to implementation module."""
    return dict(_BACKENDS)


def use_backend(name):
    """Switch the active backend (tests and benchmarks only)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}")
    _active = name


def im2col3d(xpad, ksize, strides, out_extents, tile):
    return _BACKENDS[_active].im2col3d(xpad, ksize, strides, out_extents, tile)


def col2im3d(cols, dxpad, ksize, strides, out_extents, tile):
    return _BACKENDS[_active].col2im3d(cols, dxpad, ksize, strides, out_extents, tile)


def maxpool3d(xpad, ksize, strides, out_extents):
    return _BACKENDS[_active].maxpool3d(xpad, ksize, strides, out_extents)


def maxpool3d_backward(dout, argmax, dxpad):
    return _BACKENDS[_active].maxpool3d_backward(dout, argmax, dxpad)


def hs_sweeps(u, v, ix, iy, it, alpha2, niter):
    return _BACKENDS[_active].hs_sweeps(u, v, ix, iy, it, alpha2, niter)
