"""Raw frames to model-ready windows.

Pipeline order: read PPM frames -> normalize to [0,1] -> segment into
five-second clips -> temporal subsampling -> bilinear resize -> sliding
windows. Augmentation samples one geometric transform per clip and
applies it identically to every frame (and, for two-stream training, to
the cached flow stack with the matching vector adjustment).
"""

import math
import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensorio import read_ppm

CLIP_SECONDS = 5.0
FRAME_PATTERN = re.compile(r"frame_(\d+)\.ppm$")
META_FILENAME = "meta.txt"


@dataclass
class FrameSequence:
    """An ordered RGB clip: frames (N, H, W, 3) in [0,1], plus frame rate."""

    frames: np.ndarray
    fps: float
    source_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[3] != 3:
            raise ShapeError(f"frames must be NxHxWx3, got {self.frames.shape}")
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class Window:
    """A fixed-depth run of frames classified as one unit."""

    frames: np.ndarray  # (T, H, W, C)
    start_index: int
    clip_id: str


@dataclass
class AugmentationSpec:
    """Per-clip geometric augmentation ranges.

    Rotations are capped (at most 10 degrees) and there is deliberately
    no vertical-flip field: upside-down traffic is out of distribution.
    """

    crop_range: tuple = (0.8, 1.0)
    zoom_range: tuple = (1.0, 1.2)
    rotation_cap: float = 10.0
    hflip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rotation_cap <= 10.0:
            raise ConfigError(
                f"rotation cap must be within [0, 10] degrees, got {self.rotation_cap}"
            )
        if not 0.0 < self.crop_range[0] <= self.crop_range[1] <= 1.0:
            raise ConfigError(f"bad crop range {self.crop_range}")
        if not 1.0 <= self.zoom_range[0] <= self.zoom_range[1]:
            raise ConfigError(f"bad zoom range {self.zoom_range}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError(f"bad flip probability {self.hflip_prob}")


def identity_spec(seed=0):
    """An AugmentationSpec that always produces the identity transform."""
    return AugmentationSpec(crop_range=(1.0, 1.0), zoom_range=(1.0, 1.0),
                            rotation_cap=0.0, hflip_prob=0.0, seed=seed)


def normalize(frame):
    """Map integer pixels 0..255 to [0,1] by exact division by 255."""
    arr = np.asarray(frame)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise DataError(
            f"pixel values outside [0, 255]: min {arr.min()}, max {arr.max()}"
        )
    return arr.astype(np.float32) / np.float32(255.0)


def segment_clips(raw):
    """Split into consecutive non-overlapping five-second clips.

    Each clip has exactly round(5*fps) frames; the trailing remainder is
    dropped and sequences shorter than five seconds yield no clips.
    """
    if raw.fps <= 0:
        raise DataError(f"fps must be positive, got {raw.fps}")
    per_clip = int(round(CLIP_SECONDS * raw.fps))
    n = len(raw)
    clips = []
    for k in range(n // per_clip):
        clips.append(
            FrameSequence(
                frames=raw.frames[k * per_clip : (k + 1) * per_clip],
                fps=raw.fps,
                source_id=f"{raw.source_id}_clip{k:03d}" if raw.source_id else f"clip{k:03d}",
            )
        )
    return clips


def sample_frames(clip, stride):
    """Keep frames 0, stride, 2*stride, ...; ceil(N/stride) survive."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if len(clip) == 0:
        raise DataError("cannot sample an empty clip")
    return FrameSequence(
        frames=clip.frames[::stride],
        fps=clip.fps / stride,
        source_id=clip.source_id,
    )


def resize_bilinear(frame, target=(224, 224)):
    """Corner-aligned bilinear resize of an H x W x C frame."""
    h, w = frame.shape[:2]
    th, tw = target
    if h < 2 or w < 2:
        raise ShapeError(f"resize needs extents >= 2, got {frame.shape[:2]}")
    if (h, w) == (th, tw):
        return frame
    src_r = np.linspace(0.0, h - 1.0, th) if th > 1 else np.zeros(1)
    src_c = np.linspace(0.0, w - 1.0, tw) if tw > 1 else np.zeros(1)
    r0 = np.clip(np.floor(src_r).astype(np.int64), 0, h - 2)
    c0 = np.clip(np.floor(src_c).astype(np.int64), 0, w - 2)
    fr = (src_r - r0).astype(frame.dtype)[:, None, None]
    fc = (src_c - c0).astype(frame.dtype)[None, :, None]
    tl = frame[np.ix_(r0, c0)]
    tr = frame[np.ix_(r0, c0 + 1)]
    bl = frame[np.ix_(r0 + 1, c0)]
    br = frame[np.ix_(r0 + 1, c0 + 1)]
    top = tl + (tr - tl) * fc
    bot = bl + (br - bl) * fc
    return top + (bot - top) * fr


def resize_clip(clip, target=(224, 224)):
    frames = np.stack([resize_bilinear(f, target) for f in clip.frames])
    return FrameSequence(frames=frames, fps=clip.fps, source_id=clip.source_id)


def make_windows(clip, depth, window_stride):
    """Sliding windows at starts 0, S, 2S, ... while start+T <= N."""
    if depth < 1 or window_stride < 1:
        raise ConfigError(
            f"window depth and stride must be >= 1, got {depth}, {window_stride}"
        )
    n = len(clip)
    if n < depth:
        raise DataError(f"clip has {n} frames, shorter than window depth {depth}")
    windows = []
    start = 0
    while start + depth <= n:
        windows.append(
            Window(
                frames=clip.frames[start : start + depth],
                start_index=start,
                clip_id=clip.source_id,
            )
        )
        start += window_stride
    return windows


def warp_affine(image, matrix, offset, fill=0.0):
    """Sample image at src = matrix @ (dst - center) + center + offset.

    Coordinates are (row, col); bilinear interpolation with constant fill
    outside the source. Works on (H, W) or (H, W, C) arrays.
    """
    h, w = image.shape[:2]
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rel = np.stack([rr.ravel() - center[0], cc.ravel() - center[1]])
    src = matrix @ rel + (center + np.asarray(offset))[:, None]
    sr, sc = src[0], src[1]
    r0 = np.floor(sr).astype(np.int64)
    c0 = np.floor(sc).astype(np.int64)
    fr = (sr - r0).astype(image.dtype)
    fc = (sc - c0).astype(image.dtype)
    planar = image.ndim == 2
    img = image[..., None] if planar else image
    out = np.zeros((h * w, img.shape[2]), dtype=image.dtype)
    valid = (r0 >= -1) & (r0 <= h - 1) & (c0 >= -1) & (c0 <= w - 1)

    def corner(ri, ci):
        ok = valid & (ri >= 0) & (ri <= h - 1) & (ci >= 0) & (ci <= w - 1)
        vals = np.full((h * w, img.shape[2]), fill, dtype=image.dtype)
        vals[ok] = img[ri[ok], ci[ok]]
        return vals

    wtl = ((1 - fr) * (1 - fc))[:, None]
    wtr = ((1 - fr) * fc)[:, None]
    wbl = (fr * (1 - fc))[:, None]
    wbr = (fr * fc)[:, None]
    out = (
        corner(r0, c0) * wtl
        + corner(r0, c0 + 1) * wtr
        + corner(r0 + 1, c0) * wbl
        + corner(r0 + 1, c0 + 1) * wbr
    )
    out = out.reshape(h, w, img.shape[2])
    return out[..., 0] if planar else out


def sample_transform(spec, rng=None):
    """Draw one clip-level transform: (matrix, offset, scale, is_flip).

    The matrix maps destination to source coordinates; scale is the
    source-window fraction (crop/zoom combined).
    """
    rng = rng or np.random.default_rng(spec.seed)
    crop = rng.uniform(*spec.crop_range)
    zoom = rng.uniform(*spec.zoom_range)
    theta = math.radians(rng.uniform(-spec.rotation_cap, spec.rotation_cap))
    flip = rng.random() < spec.hflip_prob
    scale = crop / zoom
    rot = np.array(
        [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    )
    mirror = np.diag([1.0, -1.0]) if flip else np.eye(2)
    matrix = scale * rot @ mirror
    margin = (1.0 - min(scale, 1.0)) / 2.0
    offset = rng.uniform(-margin, margin, size=2)
    return matrix, offset, scale, flip


def _is_identity(matrix, offset):
    return np.allclose(matrix, np.eye(2), atol=0) and np.allclose(offset, 0, atol=0)


def augment(clip, spec, rng=None):
    """Apply one sampled transform identically to every frame of a clip."""
    matrix, offset_frac, _, _ = sample_transform(spec, rng)
    if _is_identity(matrix, offset_frac):
        return clip
    h, w = clip.frames.shape[1:3]
    offset = offset_frac * np.array([h - 1, w - 1])
    frames = np.stack([warp_affine(f, matrix, offset) for f in clip.frames])
    return FrameSequence(frames=frames, fps=clip.fps, source_id=clip.source_id)


def augment_pair(rgb_stack, flow_stack, spec, rng=None):
    """Consistently transform an RGB window and its matching flow stack.

    Flow vectors are resampled with the same map and remixed by the
    inverse linear part, so flipped fields negate u and zoomed fields
    rescale displacements.
    """
    matrix, offset_frac, _, _ = sample_transform(spec, rng)
    if _is_identity(matrix, offset_frac):
        return rgb_stack, flow_stack
    h, w = rgb_stack.shape[1:3]
    offset = offset_frac * np.array([h - 1, w - 1])
    rgb_out = np.stack([warp_affine(f, matrix, offset) for f in rgb_stack])
    inv = np.linalg.inv(matrix)
    flow_out = None
    if flow_stack is not None:
        flow_out = np.empty_like(flow_stack)
        for t in range(flow_stack.shape[0]):
            warped = warp_affine(flow_stack[t], matrix, offset)
            # channels are (u=col, v=row); the linear map works in (row, col)
            v_new = inv[0, 0] * warped[..., 1] + inv[0, 1] * warped[..., 0]
            u_new = inv[1, 0] * warped[..., 1] + inv[1, 1] * warped[..., 0]
            flow_out[t, ..., 0] = u_new
            flow_out[t, ..., 1] = v_new
    return rgb_out, flow_out


def read_frame_dir(path):
    """Load a directory of frame_NNNNNN.ppm files plus its fps metadata."""
    if not os.path.isdir(path):
        raise DataError(f"frame directory {path} does not exist")
    entries = []
    for name in os.listdir(path):
        m = FRAME_PATTERN.match(name)
        if m:
            entries.append((int(m.group(1)), name))
    if not entries:
        raise DataError(f"no frame_*.ppm files in {path}")
    entries.sort()
    frames = np.stack([normalize(read_ppm(os.path.join(path, name)))
                       for _, name in entries])
    meta_path = os.path.join(path, META_FILENAME)
    if not os.path.isfile(meta_path):
        raise DataError(f"missing {META_FILENAME} with fps=<float> in {path}")
    fps = None
    with open(meta_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("fps="):
                try:
                    fps = float(line[4:])
                except ValueError:
                    raise DataError(f"{meta_path}: bad fps value {line!r}") from None
    if fps is None:
        raise DataError(f"{meta_path}: no fps=<float> line")
    return FrameSequence(frames=frames, fps=fps,
                         source_id=os.path.basename(os.path.normpath(path)))
