"""Three-layer SRCNN: feature extraction, non-linear mapping, reconstruction."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from deblur import autograd as ag
from deblur.errors import FormatError, VersionError
from deblur.tensor import DTYPE, ConvKernel, as_tensor

MAGIC = b"SRCN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sB6IIfQ")


@dataclass(frozen=True)
class SrcnnConfig:
    f1: int = 9
    f2: int = 1
    f3: int = 5
    n1: int = 64
    n2: int = 32
    channels: int = 3

    def __post_init__(self):
        for name in ("f1", "f2", "f3"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be an odd positive kernel size, got {k}")
        for name in ("n1", "n2", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def layer_shapes(self) -> list[tuple[int, int, int, int]]:
        """Weight shapes (out, in, kh, kw) of the three layers."""
        return [
            (self.n1, self.channels, self.f1, self.f1),
            (self.n2, self.n1, self.f2, self.f2),
            (self.channels, self.n2, self.f3, self.f3),
        ]

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) + s[0] for s in self.layer_shapes())


@dataclass(frozen=True)
class SrcnnWeights:
    layer1: ConvKernel
    layer2: ConvKernel
    layer3: ConvKernel

    @property
    def layers(self) -> tuple[ConvKernel, ConvKernel, ConvKernel]:
        return (self.layer1, self.layer2, self.layer3)

    @property
    def config(self) -> SrcnnConfig:
        l1, l2, l3 = self.layers
        return SrcnnConfig(l1.kh, l2.kh, l3.kh, l1.out_channels, l2.out_channels, l1.in_channels)

    def arrays(self) -> list[np.ndarray]:
        """Parameters in optimizer order: w1, b1, w2, b2, w3, b3."""
        return [a for k in self.layers for a in (k.weights, k.bias)]

    @classmethod
    def from_arrays(cls, arrays) -> SrcnnWeights:
        w1, b1, w2, b2, w3, b3 = arrays
        return cls(ConvKernel(w1, b1), ConvKernel(w2, b2), ConvKernel(w3, b3))

    def parameter_count(self) -> int:
        return sum(k.size for k in self.layers)


def srcnn_init(config: SrcnnConfig, seed: int) -> SrcnnWeights:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    kernels = []
    for shape in config.layer_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(DTYPE)
        kernels.append(ConvKernel(w, np.zeros(shape[0], dtype=DTYPE)))
    return SrcnnWeights(*kernels)


def forward_layers(params, x):
    """conv -> relu -> conv -> relu -> conv on arrays or graph nodes.

    ``params`` is the flat ``[w1, b1, w2, b2, w3, b3]`` list; no output clamp.
    """
    w1, b1, w2, b2, w3, b3 = params
    h = ag.relu(ag.conv2d(x, w1, b1))
    h = ag.relu(ag.conv2d(h, w2, b2))
    return ag.conv2d(h, w3, b3)


def srcnn_forward(weights: SrcnnWeights, image: np.ndarray, clamp: bool = True) -> np.ndarray:
    x = as_tensor(image)
    cfg = weights.config
    if x.shape[2] != cfg.channels:
        raise ValueError(f"channel mismatch: image has {x.shape[2]}, model expects {cfg.channels}")
    if x.shape[0] < cfg.f1 or x.shape[1] < cfg.f1:
        raise ValueError(f"image {x.shape[0]}x{x.shape[1]} smaller than first kernel {cfg.f1}")
    out = forward_layers(weights.arrays(), x)
    return np.clip(out, 0.0, 1.0) if clamp else out


# --- checkpoints ---------------------------------------------------------------

@dataclass(frozen=True)
class Checkpoint:
    weights: SrcnnWeights
    epoch: int = 0
    best_ssim: float = 0.0
    seed: int = 0
    version: int = FORMAT_VERSION

    @property
    def config(self) -> SrcnnConfig:
        return self.weights.config


def encode_checkpoint(c: Checkpoint) -> bytes:
    cfg = c.config
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION,
        cfg.f1, cfg.f2, cfg.f3, cfg.n1, cfg.n2, cfg.channels,
        c.epoch, c.best_ssim, c.seed,
    )
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in c.weights.arrays())
    return header + body


def decode_checkpoint(buf: bytes, path=None) -> Checkpoint:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0, path=path)
    if len(buf) < 5:
        raise FormatError("truncated before version byte", offset=len(buf), path=path)
    if buf[4] != FORMAT_VERSION:
        raise VersionError(buf[4], FORMAT_VERSION, offset=4, path=path)
    if len(buf) < _HEADER.size:
        raise FormatError(
            f"truncated header: {len(buf)} of {_HEADER.size} bytes", offset=len(buf), path=path
        )
    _, _, f1, f2, f3, n1, n2, ch, epoch, best, seed = _HEADER.unpack_from(buf)
    try:
        cfg = SrcnnConfig(f1, f2, f3, n1, n2, ch)
    except ValueError as exc:
        raise FormatError(f"invalid model config: {exc}", offset=5, path=path) from None

    arrays = []
    pos = _HEADER.size
    for shape in cfg.layer_shapes():
        for sub in (shape, (shape[0],)):
            n = int(np.prod(sub))
            end = pos + 4 * n
            if end > len(buf):
                raise FormatError(
                    f"truncated weights: need {end} bytes, file has {len(buf)}", offset=len(buf), path=path
                )
            arrays.append(np.frombuffer(buf, dtype="<f4", count=n, offset=pos).astype(DTYPE).reshape(sub))
            pos = end
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after weights", offset=pos, path=path)
    return Checkpoint(SrcnnWeights.from_arrays(arrays), epoch=epoch, best_ssim=best, seed=seed)


def save_checkpoint(c: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(c))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), path=path)
