"""Dense optical flow between consecutive frames (Horn-Schunck).

The flow branch input is an H x W x 2 field per frame pair: horizontal
displacement u and vertical displacement v, in pixels/frame, computed on
the already-sampled, already-normalized grayscale frames and fed to the
model unscaled.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import assert_finite

DEFAULT_ALPHA = 15.0
DEFAULT_ITERATIONS = 100

# Rec.601 luminance weights for RGB -> grayscale.
LUMA = (0.299, 0.587, 0.114)


@dataclass
class FlowField:
    """Per-pixel displacement between two frames."""

    u: np.ndarray  # horizontal, pixels/frame
    v: np.ndarray  # vertical, pixels/frame

    def stack(self):
        """The H x W x 2 branch tensor, channels (u, v)."""
        return np.stack([self.u, self.v], axis=-1)


def _central_diff_x(f):
    left = np.concatenate([f[:, :1], f[:, :-1]], axis=1)
    right = np.concatenate([f[:, 1:], f[:, -1:]], axis=1)
    return (right - left) * f.dtype.type(0.5)


def _central_diff_y(f):
    up = np.concatenate([f[:1], f[:-1]], axis=0)
    down = np.concatenate([f[1:], f[-1:]], axis=0)
    return (down - up) * f.dtype.type(0.5)


def gradients(frame_a, frame_b):
    """Spatial gradients averaged over both frames, plus temporal diff.

    Central differences with edge replication for I_x and I_y; I_t is the
    plain frame difference.
    """
    half = frame_a.dtype.type(0.5)
    ix = (_central_diff_x(frame_a) + _central_diff_x(frame_b)) * half
    iy = (_central_diff_y(frame_a) + _central_diff_y(frame_b)) * half
    it = frame_b - frame_a
    return ix, iy, it


def horn_schunck(frame_a, frame_b, alpha=DEFAULT_ALPHA,
                 iterations=DEFAULT_ITERATIONS):
    """Dense flow from frame_a to frame_b by Jacobi iteration.

    Each sweep replaces (u, v) with the smoothness-average field corrected
    along the image gradient:

        u <- ubar - I_x (I_x ubar + I_y vbar + I_t) / (alpha^2 + I_x^2 + I_y^2)

    and symmetrically for v, where ubar is the 4-neighbor average with
    edge replication. Runs exactly `iterations` sweeps; deterministic.
    """
    if frame_a.ndim != 2 or frame_a.shape != frame_b.shape:
        raise ShapeError(
            f"frames must be matching 2D grayscale, got {frame_a.shape} vs {frame_b.shape}"
        )
    if alpha <= 0:
        raise ShapeError(f"alpha must be positive, got {alpha}")
    if iterations < 1:
        raise ShapeError(f"iterations must be >= 1, got {iterations}")
    ix, iy, it = gradients(frame_a, frame_b)
    u = np.zeros_like(frame_a)
    v = np.zeros_like(frame_a)
    u, v = kernels.hs_sweeps(u, v, ix, iy, it, float(alpha) ** 2, int(iterations))
    assert_finite(u, "flow u")
    assert_finite(v, "flow v")
    return FlowField(u, v)


def hs_energy(u, v, ix, iy, it, alpha):
    """Discrete Horn-Schunck objective: data term + alpha^2 smoothness.

    Smoothness is the sum of squared neighbor differences over the pixel
    grid, scaled by 1/4 to match the 4-neighbor averaging of the sweep;
    this is the quadratic form the Jacobi iteration descends, so it is
    non-increasing across sweeps (up to rounding).
    """
    u = u.astype(np.float64)
    v = v.astype(np.float64)
    data = (ix.astype(np.float64) * u + iy.astype(np.float64) * v
            + it.astype(np.float64))
    smooth = 0.0
    for f in (u, v):
        smooth += np.sum((f[1:] - f[:-1]) ** 2)
        smooth += np.sum((f[:, 1:] - f[:, :-1]) ** 2)
    return float(np.sum(data * data) + (float(alpha) ** 2 / 4.0) * smooth)


def to_grayscale(frame):
    """Rec.601 luminance of an H x W x 3 frame."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 RGB frame, got {frame.shape}")
    r, g, b = LUMA
    gray = frame[..., 0] * r + frame[..., 1] * g + frame[..., 2] * b
    return gray.astype(frame.dtype)


def flow_sequence(frames, alpha=DEFAULT_ALPHA, iterations=DEFAULT_ITERATIONS):
    """Flow stack for an (N, H, W, 3) RGB clip: one field per frame.

    Computes the N-1 pairwise fields on luminance frames, then repeats the
    final field once so the stack's temporal length matches the RGB stack.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] < 2:
        raise ShapeError(
            f"flow_sequence needs at least 2 RGB frames, got shape {frames.shape}"
        )
    n = frames.shape[0]
    grays = [to_grayscale(frames[i]) for i in range(n)]
    stack = np.empty(frames.shape[:3] + (2,), dtype=frames.dtype)
    for i in range(n - 1):
        field = horn_schunck(grays[i], grays[i + 1], alpha, iterations)
        stack[i, ..., 0] = field.u
        stack[i, ..., 1] = field.v
    stack[n - 1] = stack[n - 2]
    return stack
