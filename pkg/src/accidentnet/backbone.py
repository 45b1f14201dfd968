"""Mini inflated-3D feature extractor with layer freezing.

A scaled-down I3D-style stack: a big-kernel stem convolution, spatial max
pooling, two inception-style stages (parallel 1x1x1 and 3x3x3 branches
concatenated on channels) and a final 3x3x3 convolution. Both the RGB and
flow branches use this topology, differing only in input channels.

Freezing follows transfer-learning practice: convolution layers are
enumerated in forward order and only the last `trainable_last_n` receive
gradients; the rest act as a fixed feature extractor.
"""

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import Conv3D, MaxPool3D


@dataclass
class ConvSpec:
    ksize: tuple
    filters: int
    strides: tuple = (1, 1, 1)
    padding: str = "same"


@dataclass
class PoolSpec:
    window: tuple
    strides: tuple
    padding: str = "same"


@dataclass
class InceptionSpec:
    """Parallel conv paths whose outputs concatenate on the channel axis."""

    branches: tuple


@dataclass
class BackboneConfig:
    stages: list
    input_channels: int
    input_extents: tuple = (30, 224, 224)
    trainable_last_n: int = 0


def mini_i3d_stages():
    """Default stage list: stem 7x7x7/64 s2, pool, inception 96, inception
    128 (temporal stride 2 each), final conv 3x3x3/192."""
    return [
        ConvSpec(ksize=(7, 7, 7), filters=64, strides=(2, 2, 2)),
        PoolSpec(window=(1, 3, 3), strides=(1, 2, 2)),
        InceptionSpec(branches=(
            (ConvSpec(ksize=(1, 1, 1), filters=32, strides=(2, 2, 2)),),
            (ConvSpec(ksize=(3, 3, 3), filters=64, strides=(2, 2, 2)),),
        )),
        InceptionSpec(branches=(
            (ConvSpec(ksize=(1, 1, 1), filters=48, strides=(2, 2, 2)),),
            (ConvSpec(ksize=(3, 3, 3), filters=80, strides=(2, 2, 2)),),
        )),
        ConvSpec(ksize=(3, 3, 3), filters=192, strides=(1, 2, 2)),
    ]


def mini_i3d_config(input_channels, trainable_last_n=0, input_extents=(30, 224, 224)):
    return BackboneConfig(
        stages=mini_i3d_stages(),
        input_channels=input_channels,
        input_extents=input_extents,
        trainable_last_n=trainable_last_n,
    )


@dataclass
class FeatureMap:
    """Backbone output plus provenance for downstream bookkeeping."""

    tensor: np.ndarray
    branch: str = ""
    clip_id: str = ""
    window_start: int = 0


class InceptionStage:
    """Runs each branch on the same input and concatenates channels."""

    def __init__(self, branches, name="inception"):
        self.branches = branches  # list of lists of Conv3D
        self.name = name
        self._splits = [branch[-1].w.shape[4] for branch in branches]

    def params(self):
        return [p for branch in self.branches for conv in branch for p in conv.params()]

    def clear_caches(self):
        for branch in self.branches:
            for conv in branch:
                conv.clear_caches()

    def forward(self, x, keep_cache=False):
        outs = []
        for branch in self.branches:
            y = x
            for conv in branch:
                y = conv.forward(y, keep_cache)
            outs.append(y)
        base = outs[0].shape[:3]
        if any(o.shape[:3] != base for o in outs):
            raise ShapeError(
                f"{self.name}: branch extents disagree: {[o.shape for o in outs]}"
            )
        return np.concatenate(outs, axis=-1)

    def backward(self, dy, need_dx=True):
        dx = None
        lo = 0
        for branch, width in zip(self.branches, self._splits):
            d = np.ascontiguousarray(dy[..., lo : lo + width])
            lo += width
            for conv in reversed(branch):
                is_first = conv is branch[0]
                d = conv.backward(d, need_dx=need_dx or not is_first)
            if need_dx:
                dx = d if dx is None else dx + d
        return dx


class Backbone:
    """Spatiotemporal feature extractor assembled from a BackboneConfig."""

    def __init__(self, stages, config, output_shape):
        self.stages = stages
        self.config = config
        self.output_shape = output_shape
        self.conv_layers = []
        for stage in stages:
            if isinstance(stage, Conv3D):
                self.conv_layers.append(stage)
            elif isinstance(stage, InceptionStage):
                for branch in stage.branches:
                    self.conv_layers.extend(branch)

    def params(self):
        return [p for stage in self.stages for p in stage.params()]

    def clear_caches(self):
        for stage in self.stages:
            stage.clear_caches()

    def num_layers(self):
        return len(self.conv_layers)

    def _first_trainable(self):
        for idx, stage in enumerate(self.stages):
            if any(p.trainable for p in stage.params()):
                return idx
        return None

    def forward(self, x, keep_cache=False):
        if x.shape[3] != self.config.input_channels:
            raise ShapeError(
                f"backbone expects {self.config.input_channels} channels, got {x.shape}"
            )
        # Stages below the first trainable one never run backward, so
        # caching their activations would only leak memory.
        first = self._first_trainable() if keep_cache else None
        y = x
        for idx, stage in enumerate(self.stages):
            y = stage.forward(y, keep_cache and first is not None and idx >= first)
        return y

    def backward(self, dy):
        """Backpropagate only as deep as the first trainable stage."""
        first = self._first_trainable()
        if first is None:
            return None
        for idx in range(len(self.stages) - 1, first - 1, -1):
            dy = self.stages[idx].backward(dy, need_dx=idx > first)
        return dy


def _propagate_shape(extents, channels, stage):
    if isinstance(stage, ConvSpec):
        out, _ = ops.conv_output_shape(extents, stage.ksize, stage.strides, stage.padding)
        return out, stage.filters
    if isinstance(stage, PoolSpec):
        out, _ = ops.conv_output_shape(extents, stage.window, stage.strides, stage.padding)
        return out, channels
    if isinstance(stage, InceptionSpec):
        shapes = []
        total = 0
        for branch in stage.branches:
            ext, ch = extents, channels
            for conv in branch:
                ext, ch = _propagate_shape(ext, ch, conv)
            shapes.append(ext)
            total += ch
        if any(s != shapes[0] for s in shapes):
            raise ConfigError(f"inception branches produce mismatched extents {shapes}")
        return shapes[0], total
    raise ConfigError(f"unknown stage spec {stage!r}")


def backbone_output_shape(config):
    """Closed-form (T', H', W', C') for a config; errors if any extent < 1."""
    extents, channels = tuple(config.input_extents), config.input_channels
    for stage in config.stages:
        extents, channels = _propagate_shape(extents, channels, stage)
        if any(e < 1 for e in extents):
            raise ConfigError(
                f"stage {stage!r} collapses extents to {extents}"
            )
    return extents + (channels,)


def build_backbone(config, rng=None, dtype=np.float32, name="backbone"):
    """Materialize layers from a config, then apply freezing semantics."""
    rng = rng or np.random.default_rng(0)
    output_shape = backbone_output_shape(config)  # validates extents
    stages = []
    channels = config.input_channels
    for si, spec in enumerate(config.stages):
        if isinstance(spec, ConvSpec):
            stages.append(Conv3D(spec.ksize, channels, spec.filters, spec.strides,
                                 spec.padding, rng=rng, dtype=dtype,
                                 name=f"{name}.conv{si}"))
            channels = spec.filters
        elif isinstance(spec, PoolSpec):
            stages.append(MaxPool3D(spec.window, spec.strides, spec.padding,
                                    name=f"{name}.pool{si}"))
        elif isinstance(spec, InceptionSpec):
            branches = []
            total = 0
            for bi, branch_spec in enumerate(spec.branches):
                convs = []
                ch = channels
                for ci, conv_spec in enumerate(branch_spec):
                    convs.append(Conv3D(conv_spec.ksize, ch, conv_spec.filters,
                                        conv_spec.strides, conv_spec.padding,
                                        rng=rng, dtype=dtype,
                                        name=f"{name}.inc{si}.b{bi}.conv{ci}"))
                    ch = conv_spec.filters
                branches.append(convs)
                total += ch
            stages.append(InceptionStage(branches, name=f"{name}.inc{si}"))
            channels = total
        else:
            raise ConfigError(f"unknown stage spec {spec!r}")
    backbone = Backbone(stages, config, output_shape)
    n_layers = backbone.num_layers()
    if not 0 <= config.trainable_last_n <= n_layers:
        raise ConfigError(
            f"trainable_last_n {config.trainable_last_n} out of range for "
            f"{n_layers} layers"
        )
    cutoff = n_layers - config.trainable_last_n
    for idx, conv in enumerate(backbone.conv_layers):
        trainable = idx >= cutoff
        for p in conv.params():
            p.trainable = trainable
    return backbone


def extract_features(backbone, window, branch="", clip_id="", window_start=0,
                     keep_cache=False):
    """Run a window through the backbone and tag the result's provenance."""
    feats = backbone.forward(window, keep_cache=keep_cache)
    return FeatureMap(tensor=feats, branch=branch, clip_id=clip_id,
                      window_start=window_start)


def count_parameters(obj):
    """(total, trainable) element counts for anything exposing params()."""
    if hasattr(obj, "params"):
        params = obj.params()
    else:
        params = list(obj)
    total = sum(p.num_elements() for p in params)
    trainable = sum(p.num_elements() for p in params if p.trainable)
    return total, trainable
