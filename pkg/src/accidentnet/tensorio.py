"""On-disk formats: TNSR tensor files, weight indexes, and P6 PPM frames.

TNSR layout: magic b"TNSR", version byte 0x01, u32 little-endian rank,
rank x u32 little-endian extents, then product(extents) float32
little-endian scalars in row-major order. Model checkpoints are a
directory holding one TNSR file per parameter plus a plain-text index
mapping name -> file.
"""

import os
import struct

import numpy as np

from .errors import DataError

TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1
INDEX_FILENAME = "index.txt"


def write_tensor(path, arr):
    """Write an array as a TNSR file (stored as float32)."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TNSR_MAGIC)
        fh.write(bytes([TNSR_VERSION]))
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path, dtype=np.float32):
    """Read a TNSR file back into an array of `dtype`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TNSR_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {TNSR_MAGIC!r}")
        version = fh.read(1)
        if len(version) != 1 or version[0] != TNSR_VERSION:
            raise DataError(f"{path}: unsupported TNSR version {version!r}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise DataError(f"{path}: truncated rank field")
        (rank,) = struct.unpack("<I", raw)
        raw = fh.read(4 * rank)
        if len(raw) != 4 * rank:
            raise DataError(f"{path}: truncated extents")
        shape = struct.unpack(f"<{rank}I", raw)
        if any(e < 1 for e in shape):
            raise DataError(f"{path}: extent below 1 in {shape}")
        count = int(np.prod(shape)) if rank else 1
        data = fh.read(4 * count)
        if len(data) != 4 * count:
            raise DataError(f"{path}: expected {count} scalars, file truncated")
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after tensor data")
    arr = np.frombuffer(data, dtype="<f4").reshape(shape)
    return np.ascontiguousarray(arr, dtype=dtype)


def _index_filename(name):
    return name.replace("/", "_").replace("\\", "_") + ".tnsr"


def save_named_tensors(directory, named):
    """Save `{name: array}` as one TNSR file per entry plus an index."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name in named:
        fname = _index_filename(name)
        write_tensor(os.path.join(directory, fname), named[name])
        lines.append(f"{name}={fname}\n")
    with open(os.path.join(directory, INDEX_FILENAME), "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def load_named_tensors(directory, dtype=np.float32):
    """Load the `{name: array}` mapping written by save_named_tensors."""
    index_path = os.path.join(directory, INDEX_FILENAME)
    if not os.path.isfile(index_path):
        raise DataError(f"no weight index at {index_path}")
    named = {}
    with open(index_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{index_path}:{lineno}: expected name=file")
            name, fname = line.split("=", 1)
            named[name] = read_tensor(os.path.join(directory, fname), dtype=dtype)
    return named


def write_ppm(path, pixels):
    """Write an H x W x 3 uint8 array as a binary P6 PPM (maxval 255)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DataError(f"PPM frame must be HxWx3, got {pixels.shape}")
    pixels = pixels.astype(np.uint8)
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path):
    """Read a binary P6 PPM (maxval 255) into an H x W x 3 uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise DataError(f"{path}: not a binary P6 PPM")
    # Header tokens may be separated by whitespace and '#' comments.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise DataError(f"{path}: non-numeric PPM header fields {fields}") from None
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    need = w * h * 3
    raster = data[pos : pos + need]
    if len(raster) != need:
        raise DataError(f"{path}: expected {need} raster bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()
