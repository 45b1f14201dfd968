"""Dataset manifests and cached clip loading.

A manifest is a CSV with header `clip_id,frames_dir,label,split,source`.
Each frames_dir is a per-clip directory; preprocessing leaves `rgb.tnsr`
(and `flow.tnsr` for two-stream training) caches inside it. Relative
frames_dir paths resolve against the manifest's own directory.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .tensorio import read_tensor

MANIFEST_HEADER = ["clip_id", "frames_dir", "label", "split", "source"]
LABELS = ("accident", "normal")
SPLITS = ("train", "val", "test")
SOURCES = ("trafficam", "dashcam", "external")
RGB_CACHE = "rgb.tnsr"
FLOW_CACHE = "flow.tnsr"


@dataclass
class ManifestRow:
    clip_id: str
    frames_dir: str
    label: str
    split: str
    source: str


class DatasetManifest:
    """Validated clip index with split bookkeeping."""

    def __init__(self, rows):
        self.rows = list(rows)
        seen = set()
        for row in self.rows:
            if row.clip_id in seen:
                raise DataError(f"duplicate clip_id {row.clip_id!r} in manifest")
            seen.add(row.clip_id)

    def __len__(self):
        return len(self.rows)

    def split(self, name):
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [r for r in self.rows if r.split == name]

    def summarize(self):
        """Split x label counts plus per-split totals."""
        out = {s: {lab: 0 for lab in LABELS} for s in SPLITS}
        for row in self.rows:
            out[row.split][row.label] += 1
        for s in SPLITS:
            out[s]["total"] = sum(out[s][lab] for lab in LABELS)
        return out


def load_manifest(path, require_dirs=True):
    """Read and validate a manifest CSV."""
    if not os.path.isfile(path):
        raise DataError(f"manifest {path} does not exist")
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise DataError(
                f"{path}: bad header {header!r}, expected {','.join(MANIFEST_HEADER)}"
            )
        for lineno, fields in enumerate(reader, 2):
            if not fields or (len(fields) == 1 and not fields[0].strip()):
                continue
            if len(fields) != len(MANIFEST_HEADER):
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
            clip_id, frames_dir, label, split, source = (f.strip() for f in fields)
            if label not in LABELS:
                raise DataError(
                    f"{path}:{lineno}: unknown label {label!r} for clip {clip_id!r}"
                )
            if split not in SPLITS:
                raise DataError(
                    f"{path}:{lineno}: unknown split {split!r} for clip {clip_id!r}"
                )
            if source not in SOURCES:
                raise DataError(
                    f"{path}:{lineno}: unknown source {source!r} for clip {clip_id!r}"
                )
            if not os.path.isabs(frames_dir):
                frames_dir = os.path.normpath(os.path.join(base, frames_dir))
            if require_dirs and not os.path.isdir(frames_dir):
                raise DataError(
                    f"{path}:{lineno}: frames_dir {frames_dir} does not exist"
                )
            rows.append(ManifestRow(clip_id, frames_dir, label, split, source))
    return DatasetManifest(rows)


def write_manifest(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow([row.clip_id, row.frames_dir, row.label, row.split,
                             row.source])


def load_cached_window(row, need_flow, depth=None, dtype=np.float32):
    """Load the preprocessed (rgb, flow) tensors for one manifest row.

    Clips longer than `depth` frames are truncated to their first window.
    """
    rgb_path = os.path.join(row.frames_dir, RGB_CACHE)
    if not os.path.isfile(rgb_path):
        raise DataError(
            f"clip {row.clip_id}: missing cache {rgb_path}; run preprocess first"
        )
    rgb = read_tensor(rgb_path, dtype=dtype)
    flow = None
    if need_flow:
        flow_path = os.path.join(row.frames_dir, FLOW_CACHE)
        if not os.path.isfile(flow_path):
            raise DataError(
                f"clip {row.clip_id}: missing flow cache {flow_path}; "
                "two-stream variants need preprocessed flow"
            )
        flow = read_tensor(flow_path, dtype=dtype)
        if flow.shape[0] != rgb.shape[0]:
            raise DataError(
                f"clip {row.clip_id}: flow frames {flow.shape[0]} != rgb frames {rgb.shape[0]}"
            )
    if depth is not None:
        if rgb.shape[0] < depth:
            raise DataError(
                f"clip {row.clip_id}: {rgb.shape[0]} frames < window depth {depth}"
            )
        rgb = rgb[:depth]
        if flow is not None:
            flow = flow[:depth]
    return rgb, flow
