"""Classification head and full two-stream model.

Per stream: backbone features feed a stack of three ConvLSTM2D layers
(the first two return sequences, the last returns its final hidden
state), optionally batch-normalized, then spatially averaged to one
vector. Stream vectors are concatenated (RGB first) and classified by a
ReLU dense stack with dropout and a final two-way softmax.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .backbone import build_backbone, count_parameters, mini_i3d_config
from .errors import ConfigError, ShapeError
from .layers import BatchNorm2D, ConvLSTM2D, Dense, Dropout
from .tensor import assert_finite

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "configs")
STREAM_CHANNELS = {"rgb": 3, "flow": 2}


@dataclass
class HeadConfig:
    convlstm_filters: tuple = (64, 32, 32)
    convlstm_kernel: int = 3
    batchnorm_before_gap: bool = False
    dense_widths: tuple = (512, 256, 256)
    dropout: float = 0.3
    num_classes: int = 2

    def __post_init__(self):
        if len(self.convlstm_filters) < 1:
            raise ConfigError("need at least one ConvLSTM layer")
        if any(w < 1 for w in self.dense_widths):
            raise ConfigError(f"dense widths must be positive, got {self.dense_widths}")
        if self.num_classes != 2:
            raise ConfigError("only two-way accident/normal classification is supported")


@dataclass
class VariantConfig:
    """One named architecture configuration (one per experiment row)."""

    name: str
    streams: tuple = ("rgb", "flow")
    head: HeadConfig = field(default_factory=HeadConfig)
    backbone_trainable_last_n: int = 0
    augment: bool = False
    frame_stride: int = 5
    window_depth: int = 30
    window_stride: int = 15

    def __post_init__(self):
        unknown = [s for s in self.streams if s not in STREAM_CHANNELS]
        if unknown:
            raise ConfigError(f"unknown streams {unknown}; expected rgb and/or flow")


def fuse(rgb_vec, flow_vec):
    """Concatenate per-stream feature vectors, RGB first.

    flow_vec may be None or empty for single-stream models, in which case
    the RGB vector passes through unchanged.
    """
    if flow_vec is None or (hasattr(flow_vec, "size") and flow_vec.size == 0):
        return rgb_vec
    if rgb_vec is None:
        raise ShapeError("fuse: missing RGB vector in two-stream mode")
    return np.concatenate([rgb_vec, flow_vec], axis=-1)


class StreamBranch:
    """Backbone + ConvLSTM stack + optional batch norm for one stream."""

    def __init__(self, stream, variant, rng, dtype, input_extents):
        self.stream = stream
        cfg = mini_i3d_config(
            STREAM_CHANNELS[stream],
            trainable_last_n=variant.backbone_trainable_last_n,
            input_extents=input_extents,
        )
        self.backbone = build_backbone(cfg, rng=rng, dtype=dtype,
                                       name=f"{stream}.backbone")
        channels = self.backbone.output_shape[3]
        head = variant.head
        self.convlstms = []
        for li, filters in enumerate(head.convlstm_filters):
            last = li == len(head.convlstm_filters) - 1
            self.convlstms.append(
                ConvLSTM2D(channels, filters, ksize=head.convlstm_kernel,
                           return_sequences=not last, rng=rng, dtype=dtype,
                           name=f"{stream}.convlstm{li}")
            )
            channels = filters
        self.out_channels = channels
        self.bn = (BatchNorm2D(channels, dtype=dtype, name=f"{stream}.bn")
                   if head.batchnorm_before_gap else None)

    def layers(self):
        out = [self.backbone] + list(self.convlstms)
        if self.bn is not None:
            out.append(self.bn)
        return out

    def params(self):
        return [p for layer in self.layers() for p in layer.params()]

    def clear_caches(self):
        for layer in self.layers():
            layer.clear_caches()

    def forward_map(self, window, keep_cache=False):
        """Window -> final hidden state map (H', W', F_last), pre-BN."""
        y = self.backbone.forward(window, keep_cache=keep_cache)
        for lstm in self.convlstms:
            y = lstm.forward(y, keep_cache=keep_cache)
        return y

    def backward_map(self, d_map):
        d = d_map
        for lstm in reversed(self.convlstms):
            is_first = lstm is self.convlstms[0]
            need = (not is_first) or self.backbone._first_trainable() is not None
            d = lstm.backward(d, need_dx=need)
        if d is not None:
            self.backbone.backward(d)


class AccidentModel:
    """Two-stream (or RGB-only) window classifier."""

    def __init__(self, variant, seed=0, dtype=np.float32,
                 input_extents=(30, 224, 224)):
        self.variant = variant
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.branches = {
            stream: StreamBranch(stream, variant, rng, dtype, input_extents)
            for stream in variant.streams
        }
        fused = sum(b.out_channels for b in self.branches.values())
        widths = variant.head.dense_widths
        self.dense_stack = []
        self.dropouts = []
        n_in = fused
        for di, width in enumerate(widths):
            self.dense_stack.append(Dense(n_in, width, activation="relu", rng=rng,
                                          dtype=dtype, name=f"head.dense{di}"))
            self.dropouts.append(Dropout(variant.head.dropout, name=f"head.drop{di}"))
            n_in = width
        self.classifier = Dense(n_in, variant.head.num_classes, activation=None,
                                rng=rng, dtype=dtype, name="head.logits")
        self._gap_shapes = {}

    # -- parameter plumbing ------------------------------------------------

    def params(self):
        out = []
        for stream in self.variant.streams:
            out.extend(self.branches[stream].params())
        for layer in self.dense_stack:
            out.extend(layer.params())
        out.extend(self.classifier.params())
        return out

    def named_params(self):
        named = {}
        for p in self.params():
            if p.name in named:
                raise ConfigError(f"duplicate parameter name {p.name}")
            named[p.name] = p
        return named

    def buffers(self):
        out = {}
        for branch in self.branches.values():
            if branch.bn is not None:
                out.update(branch.bn.buffers())
        return out

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def clear_caches(self):
        for branch in self.branches.values():
            branch.clear_caches()
        for layer in self.dense_stack + self.dropouts + [self.classifier]:
            layer.clear_caches()

    # -- forward / backward ------------------------------------------------

    def _check_inputs(self, rgb, flow):
        if "flow" in self.branches and flow is None:
            raise ShapeError("two-stream model needs a flow window")
        if "flow" not in self.branches and flow is not None:
            raise ShapeError("RGB-only model got an unexpected flow window")

    def forward_batch(self, rgb_windows, flow_windows=None, train=False,
                      rng=None, keep_cache=False):
        """Forward a batch of windows; returns (probs float64, logits)."""
        batch = len(rgb_windows)
        self._check_inputs(rgb_windows[0], None if flow_windows is None else flow_windows[0])
        mode = "train" if train else "infer"
        vecs = []
        for stream in self.variant.streams:
            branch = self.branches[stream]
            windows = rgb_windows if stream == "rgb" else flow_windows
            maps = np.stack([
                branch.forward_map(windows[i].astype(self.dtype, copy=False),
                                   keep_cache=keep_cache)
                for i in range(batch)
            ])
            if branch.bn is not None:
                maps = branch.bn.forward(maps, mode=mode, keep_cache=keep_cache)
            gap, shape = ops.gap2d_forward(maps)
            if keep_cache:
                self._gap_shapes[stream] = shape
            vecs.append(gap)
        fused = vecs[0] if len(vecs) == 1 else np.concatenate(vecs, axis=1)
        y = fused
        for dense, drop in zip(self.dense_stack, self.dropouts):
            y = dense.forward(y, keep_cache=keep_cache)
            y = drop.forward(y, train=train, rng=rng, keep_cache=keep_cache)
        logits = self.classifier.forward(y, keep_cache=keep_cache)
        assert_finite(logits, "logits")
        return ops.softmax2(logits), logits

    def backward_batch(self, dlogits):
        """Backprop a batch given d(loss)/d(logits); accumulates grads."""
        d = self.classifier.backward(dlogits.astype(self.dtype))
        for dense, drop in zip(reversed(self.dense_stack), reversed(self.dropouts)):
            d = drop.backward(d)
            d = dense.backward(d)
        lo = 0
        for stream in self.variant.streams:
            branch = self.branches[stream]
            width = branch.out_channels
            d_vec = d[:, lo : lo + width]
            lo += width
            d_maps = ops.gap2d_backward(d_vec, self._gap_shapes[stream])
            if branch.bn is not None:
                d_maps = branch.bn.backward(d_maps)
            for i in reversed(range(d_maps.shape[0])):
                branch.backward_map(np.ascontiguousarray(d_maps[i]))

    def predict(self, rgb_window, flow_window=None):
        """Inference on one window: (p_accident, p_no_accident, logits)."""
        self._check_inputs(rgb_window, flow_window)
        probs, logits = self.forward_batch(
            [rgb_window],
            None if flow_window is None else [flow_window],
            train=False,
        )
        p = probs[0]
        return float(p[0]), float(p[1]), logits[0]

    def count_parameters(self):
        return count_parameters(self)


def build_model(variant, seed=0, dtype=np.float32, input_extents=(30, 224, 224)):
    if isinstance(variant, str):
        variant = load_variant(variant)
    return AccidentModel(variant, seed=seed, dtype=dtype, input_extents=input_extents)


# -- variant config files ----------------------------------------------------


def parse_kv_file(path):
    """Parse a key=value config file; '#' starts a comment."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path} does not exist")
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _parse_bool(s):
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected boolean, got {s!r}")


def _parse_int_tuple(s):
    return tuple(int(x) for x in s.split(","))


def variant_from_dict(values):
    try:
        streams = tuple(values.get("streams", "rgb+flow").split("+"))
        head = HeadConfig(
            convlstm_filters=_parse_int_tuple(values.get("convlstm_filters", "64,32,32")),
            convlstm_kernel=int(values.get("convlstm_kernel", "3")),
            batchnorm_before_gap=_parse_bool(values.get("batchnorm_before_gap", "false")),
            dense_widths=_parse_int_tuple(values.get("dense_widths", "512,256,256")),
            dropout=float(values.get("dropout", "0.3")),
        )
        return VariantConfig(
            name=values.get("variant", "custom"),
            streams=streams,
            head=head,
            backbone_trainable_last_n=int(values.get("backbone_trainable_last_n", "0")),
            augment=_parse_bool(values.get("augment", "false")),
            frame_stride=int(values.get("frame_stride", "5")),
            window_depth=int(values.get("window_depth", "30")),
            window_stride=int(values.get("window_stride", "15")),
        )
    except ValueError as exc:
        raise ConfigError(f"bad variant config value: {exc}") from None


def list_variants():
    return sorted(
        name[:-4] for name in os.listdir(CONFIG_DIR) if name.endswith(".cfg")
    )


def load_variant(name_or_path):
    """Load a shipped variant by name, or any .cfg file by path."""
    path = name_or_path
    if not os.path.isfile(path):
        path = os.path.join(CONFIG_DIR, f"{name_or_path}.cfg")
        if not os.path.isfile(path):
            raise ConfigError(
                f"unknown variant {name_or_path!r}; shipped: {', '.join(list_variants())}"
            )
    return variant_from_dict(parse_kv_file(path))
