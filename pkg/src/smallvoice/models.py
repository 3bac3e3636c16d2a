"""The two multi-scale CNN classifiers and their checkpoint format.

Both networks share one topology: a 1x1 convolution, four feature
extraction blocks (3x1 conv, ELU, dropout, average pool 2/2), temporal max
pooling of the last three block outputs concatenated into a fixed-length
vector, dropout, and a fully connected head. The language-identification
preset uses channels (3, 1, 3, 3, 3) for 3 classes; the speech-command
preset uses (16, 32, 64, 128, 256) for 105 classes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import tensorcore as tc
from .dsp import FeatureSequence

CHECKPOINT_MAGIC = b"NLM1"
CHECKPOINT_VERSION = 1

LANGID_CHANNELS = (3, 1, 3, 3, 3)
ASR_CHANNELS = (16, 32, 64, 128, 256)
LANGID_CLASSES = 3
ASR_CLASSES = 105

MIN_FRAMES = 16  # four stride-2 pools must leave at least one frame


class InvalidConfig(ValueError):
    """Model configuration violates its invariants."""


class DimMismatch(ValueError):
    """Feature dimension disagrees with the model's input dimension."""


class VersionUnsupported(ValueError):
    """Checkpoint version not understood."""


class ChecksumMismatch(ValueError):
    """Checkpoint is corrupt or truncated."""


@dataclass(frozen=True)
class ModelConfig:
    """Input dim, the five channel counts, class count, and dropout rate."""

    input_dim: int
    channels: tuple
    num_classes: int
    dropout_rate: float = 0.1

    def __post_init__(self):
        # checkpoints store dropout_rate as f32 and channels as a tuple;
        # normalize here so save -> load -> config compares equal
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "dropout_rate", float(np.float32(self.dropout_rate)))

    @property
    def feature_dim(self) -> int:
        # multiscale vector concatenates the last three block outputs
        return sum(self.channels[2:])

    def validate(self):
        if len(self.channels) != 5 or any(c < 1 for c in self.channels):
            raise InvalidConfig("channels must be five positive integers")
        if self.input_dim < 1 or self.num_classes < 1:
            raise InvalidConfig("input_dim and num_classes must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must be in [0, 1)")


def langid_config(input_dim: int = 512, dropout_rate: float = 0.1) -> ModelConfig:
    return ModelConfig(input_dim, LANGID_CHANNELS, LANGID_CLASSES, dropout_rate)


def asr_config(input_dim: int = 512, dropout_rate: float = 0.1) -> ModelConfig:
    return ModelConfig(input_dim, ASR_CHANNELS, ASR_CLASSES, dropout_rate)


class Model:
    """A built network: parameter groups plus the dropout RNG."""

    def __init__(self, config: ModelConfig, groups, seed: int):
        self.config = config
        self.groups = groups  # list[tc.ParameterGroup] in fixed order
        self.seed = seed
        self.dropout_rng = np.random.default_rng([seed, 1])

    def group(self, name: str) -> tc.ParameterGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def forward(self, fs: FeatureSequence, mask: Optional[tc.FrameMask] = None,
                training: bool = False) -> tc.Node:
        return forward(self, fs, mask, training)

    def extract_multiscale(self, fs: FeatureSequence,
                           mask: Optional[tc.FrameMask] = None) -> np.ndarray:
        return extract_multiscale(self, fs, mask)


def build(config: ModelConfig, seed: int = 0) -> Model:
    """Wire the network and initialize weights from a seeded generator.

    Weights are uniform on +/- sqrt(6 / fan_in); biases start at zero.
    """
    config.validate()
    rng = np.random.default_rng([seed, 0])

    def init(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return tc.Node(rng.uniform(-bound, bound, size=shape))

    c = config.channels
    groups = [
        tc.ParameterGroup(
            "conv0",
            init((c[0], config.input_dim, 1), config.input_dim),
            tc.Node(np.zeros(c[0])),
        )
    ]
    for i in range(1, 5):
        groups.append(
            tc.ParameterGroup(
                f"block{i}",
                init((c[i], c[i - 1], 3), 3 * c[i - 1]),
                tc.Node(np.zeros(c[i])),
            )
        )
    groups.append(
        tc.ParameterGroup(
            "head",
            init((config.num_classes, config.feature_dim), config.feature_dim),
            tc.Node(np.zeros(config.num_classes)),
        )
    )
    return Model(config, groups, seed)


def count_params(m: Model) -> int:
    """Total number of scalar weights and biases."""
    return sum(node.values.size for g in m.groups for _, node in g.nodes())


def _multiscale(m: Model, x: tc.Node, mask: tc.FrameMask, training: bool) -> tc.Node:
    """Shared trunk: returns the concatenated post-max-pool vector node."""
    cfg = m.config
    conv0 = m.group("conv0")
    h = tc.conv1d(x, conv0.weight, conv0.bias, padding="same")
    pooled = []
    for i in range(1, 5):
        blk = m.group(f"block{i}")
        h = tc.conv1d(h, blk.weight, blk.bias, padding="same")
        h = tc.elu(h)
        h = tc.dropout(h, cfg.dropout_rate, training, m.dropout_rng)
        h, mask = tc.avgpool2(h, mask)
        if i >= 2:
            pooled.append(tc.temporal_maxpool(h, mask))
    return tc.concat(pooled)


def forward_from(m: Model, x: tc.Node, mask: tc.FrameMask,
                 training: bool = False) -> tc.Node:
    """Forward pass from a prepared [D, T] input node (graph retained)."""
    feat = _multiscale(m, x, mask, training)
    feat = tc.dropout(feat, m.config.dropout_rate, training, m.dropout_rng)
    head = m.group("head")
    return tc.linear(feat, head.weight, head.bias)


def _check_input(m: Model, fs: FeatureSequence, mask: Optional[tc.FrameMask]):
    if fs.dim != m.config.input_dim:
        raise DimMismatch(
            f"features have dim {fs.dim}, model expects {m.config.input_dim}"
        )
    if mask is None:
        mask = tc.FrameMask.full(fs.num_frames)
    elif len(mask) != fs.num_frames:
        raise DimMismatch("mask length must match frame count")
    if mask.count < MIN_FRAMES:
        raise tc.InputTooShort(
            f"need at least {MIN_FRAMES} real frames, got {mask.count}"
        )
    return mask


def forward(m: Model, fs: FeatureSequence, mask: Optional[tc.FrameMask] = None,
            training: bool = False) -> tc.Node:
    """Class logits for a feature sequence of any length T >= 16."""
    mask = _check_input(m, fs, mask)
    x = tc.Node(fs.frames.astype(np.float64).T)
    return forward_from(m, x, mask, training)


def extract_multiscale(m: Model, fs: FeatureSequence,
                       mask: Optional[tc.FrameMask] = None) -> np.ndarray:
    """The concatenated multiscale feature vector (eval mode, pre-head)."""
    mask = _check_input(m, fs, mask)
    x = tc.Node(fs.frames.astype(np.float64).T)
    return _multiscale(m, x, mask, training=False).values


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: magic NLM1; u32 version; u32 input_dim; 5x u32 channels;
# u32 num_classes; f32 dropout_rate; u64 seed; per-group weights then bias
# as f64-LE in build order; trailing CRC32-LE over all preceding bytes.
# Weights are stored at full 64-bit precision so that save -> load -> forward
# reproduces the original forward bit-exactly.


def save(m: Model, path: Union[str, Path]) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, m.config.input_dim)]
    parts.append(struct.pack("<5I", *m.config.channels))
    parts.append(struct.pack("<IfQ", m.config.num_classes,
                             m.config.dropout_rate, m.seed))
    for g in m.groups:
        for _, node in g.nodes():
            parts.append(np.ascontiguousarray(node.values, dtype="<f8").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load(path: Union[str, Path]) -> Model:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise ChecksumMismatch("not a model checkpoint")
    if len(blob) < 8:
        raise ChecksumMismatch("checkpoint truncated")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupported(f"checkpoint version {version} not supported")
    payload, tail = blob[:-4], blob[-4:]
    if len(blob) < 48 or struct.unpack("<I", tail)[0] != zlib.crc32(payload) & 0xFFFFFFFF:
        raise ChecksumMismatch("checkpoint CRC mismatch")

    input_dim = struct.unpack("<I", blob[8:12])[0]
    channels = struct.unpack("<5I", blob[12:32])
    num_classes, dropout_rate, seed = struct.unpack("<IfQ", blob[32:48])
    config = ModelConfig(input_dim, channels, num_classes, float(dropout_rate))
    m = build(config, int(seed))

    offset = 48
    for g in m.groups:
        for _, node in g.nodes():
            n = node.values.size * 8
            if offset + n > len(payload):
                raise ChecksumMismatch("checkpoint shorter than parameter table")
            node.values[...] = np.frombuffer(
                payload[offset : offset + n], dtype="<f8"
            ).reshape(node.values.shape)
            offset += n
    if offset != len(payload):
        raise ChecksumMismatch("trailing bytes after parameter table")
    return m


def clone(m: Model) -> Model:
    """Deep copy of config and parameters (used for best-epoch snapshots)."""
    out = build(m.config, m.seed)
    for src, dst in zip(m.groups, out.groups):
        for (_, a), (_, b) in zip(src.nodes(), dst.nodes()):
            b.values[...] = a.values
    return out


def with_dropout(config: ModelConfig, rate: float) -> ModelConfig:
    return replace(config, dropout_rate=rate)
