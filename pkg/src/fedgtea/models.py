"""Client networks: task encoder, conditional generator, discriminator.

The discriminator's CNN produces a data feature F; its real/fake head sees
F alone while the class head consumes F concatenated with the batch task
embedding E.  The generator maps noise + one-hot class to an image through
a dense projection and four transposed-convolution stages.  A toy image
mode shrinks channel widths (divide by 8, floor 4) while preserving layer
counts, so architecture-shape behavior can be exercised in seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .errors import ShapeError
from .numkit import Tensor

FULL_DISC_CHANNELS = (16, 32, 64, 128, 256, 512)
FULL_GEN_CHANNELS = (384, 192, 96, 48, 3)
DISC_STRIDES = (1, 2, 1, 2, 1, 2)


def _shrink(channels, factor=8, floor=4):
    return tuple(max(floor, c // factor) for c in channels)


@dataclass(frozen=True)
class ArchConfig:
    """Shared architecture description for one run (all clients alike)."""

    image_shape: tuple[int, int, int]  # (C, H, W)
    num_classes: int
    embed_dim: int = 32
    z_dim: int = 100
    disc_channels: tuple[int, ...] = FULL_DISC_CHANNELS
    gen_channels: tuple[int, ...] = FULL_GEN_CHANNELS
    cate_hidden: tuple[int, ...] = (256, 128)

    @classmethod
    def full(cls, num_classes: int, image_shape=(3, 32, 32), **kwargs) -> "ArchConfig":
        gen = FULL_GEN_CHANNELS[:-1] + (image_shape[0],)
        return cls(image_shape=image_shape, num_classes=num_classes,
                   gen_channels=gen, **kwargs)

    @classmethod
    def toy(cls, num_classes: int, image_shape=(1, 8, 8), **kwargs) -> "ArchConfig":
        gen = _shrink(FULL_GEN_CHANNELS[:-1]) + (image_shape[0],)
        return cls(image_shape=image_shape, num_classes=num_classes,
                   disc_channels=_shrink(FULL_DISC_CHANNELS),
                   gen_channels=gen, **kwargs)

    def __post_init__(self):
        c, h, w = self.image_shape
        if h != w or h < 8 or (h & (h - 1)) != 0:
            raise ShapeError(f"image side must be a power of two >= 8, got {h}x{w}")
        if self.gen_channels[-1] != c:
            raise ShapeError("last generator channel must equal image channels")

    def to_dict(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "num_classes": self.num_classes,
            "embed_dim": self.embed_dim,
            "z_dim": self.z_dim,
            "disc_channels": list(self.disc_channels),
            "gen_channels": list(self.gen_channels),
            "cate_hidden": list(self.cate_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(image_shape=tuple(d["image_shape"]),
                   num_classes=int(d["num_classes"]),
                   embed_dim=int(d["embed_dim"]),
                   z_dim=int(d["z_dim"]),
                   disc_channels=tuple(d["disc_channels"]),
                   gen_channels=tuple(d["gen_channels"]),
                   cate_hidden=tuple(d["cate_hidden"]))


# -- layers -------------------------------------------------------------------


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        std = math.sqrt(2.0 / in_dim)
        self.w = nk.parameter(rng.normal(0.0, std, size=(in_dim, out_dim)))
        self.b = nk.parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return nk.matmul(x, self.w) + self.b

    def params(self):
        return [("w", self.w), ("b", self.b)]


class Conv:
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator):
        std = math.sqrt(2.0 / (in_ch * k * k))
        self.w = nk.parameter(rng.normal(0.0, std, size=(out_ch, in_ch, k, k)))
        self.b = nk.parameter(np.zeros((1, out_ch, 1, 1)))
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return nk.conv2d(x, self.w, stride=self.stride, padding=self.pad) + self.b

    def params(self):
        return [("w", self.w), ("b", self.b)]


class TConv:
    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator):
        std = math.sqrt(2.0 / (in_ch * k * k))
        self.w = nk.parameter(rng.normal(0.0, std, size=(in_ch, out_ch, k, k)))
        self.b = nk.parameter(np.zeros((1, out_ch, 1, 1)))
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        return nk.transposed_conv2d(x, self.w, stride=self.stride, padding=self.pad) + self.b

    def params(self):
        return [("w", self.w), ("b", self.b)]


def _collect(prefix: str, layers) -> list[tuple[str, Tensor]]:
    out = []
    for i, layer in enumerate(layers):
        for suffix, p in layer.params():
            out.append((f"{prefix}.{i}.{suffix}", p))
    return out


# -- networks -----------------------------------------------------------------


class CateEncoder:
    """Maps flattened images to per-example task embeddings in R^d.

    Parameter count is independent of how many tasks the run visits.
    """

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        c, h, w = arch.image_shape
        dims = [c * h * w, *arch.cate_hidden, arch.embed_dim]
        self.layers = [Dense(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def embed(self, images: Tensor) -> Tensor:
        """Per-example embeddings, shape (n, d)."""
        n = images.shape[0]
        x = nk.reshape(images, (n, -1))
        for layer in self.layers[:-1]:
            x = nk.leaky_relu(layer(x), alpha=0.2)
        return self.layers[-1](x)

    def named_params(self):
        return _collect("cate.dense", self.layers)


class Generator:
    """Noise + one-hot class -> image in [-1, 1]."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        self.arch = arch
        _, h, _ = arch.image_shape
        ch = arch.gen_channels
        self.start_hw = max(1, h // 16)
        doublings = int(math.log2(h // self.start_hw))
        strides = [1] * (len(ch) - 1 - doublings) + [2] * doublings
        if len(strides) != len(ch) - 1:
            raise ShapeError(f"cannot reach image side {h} with {len(ch) - 1} stages")
        self.project = Dense(arch.z_dim + arch.num_classes,
                             ch[0] * self.start_hw ** 2, rng)
        self.stages = []
        for i, s in enumerate(strides):
            k, pad = (4, 1) if s == 2 else (3, 1)
            self.stages.append(TConv(ch[i], ch[i + 1], k, s, pad, rng))

    def forward(self, z: Tensor, onehot: Tensor) -> Tensor:
        n = z.shape[0]
        x = nk.relu(self.project(nk.concat([z, onehot], axis=1)))
        x = nk.reshape(x, (n, self.arch.gen_channels[0], self.start_hw, self.start_hw))
        for stage in self.stages[:-1]:
            x = nk.relu(stage(x))
        return nk.tanh(self.stages[-1](x))

    def named_params(self):
        return _collect("gen.project", [self.project]) + _collect("gen.stage", self.stages)


class Discriminator:
    """CNN feature extractor with a real/fake head and a class head.

    The class head's input width is feature_dim + embed_dim; the real/fake
    head sees the data feature only.
    """

    def __init__(self, arch: ArchConfig, rng: np.random.Generator):
        self.arch = arch
        ch = (arch.image_shape[0], *arch.disc_channels)
        self.convs = [Conv(ch[i], ch[i + 1], 3, DISC_STRIDES[i], 1, rng)
                      for i in range(len(arch.disc_channels))]
        self.feature_dim = arch.disc_channels[-1]
        self.rf_head = Dense(self.feature_dim, 1, rng)
        self.class_head = Dense(self.feature_dim + arch.embed_dim,
                                arch.num_classes, rng)

    def features(self, images: Tensor) -> Tensor:
        """Global-average-pooled final conv activations, shape (n, f)."""
        x = images
        for conv in self.convs:
            x = nk.leaky_relu(conv(x), alpha=0.2)
        return nk.mean(x, axis=(2, 3))

    def rf_logits(self, feats: Tensor) -> Tensor:
        return nk.reshape(self.rf_head(feats), (-1,))

    def class_logits(self, feats: Tensor, embedding: Tensor) -> Tensor:
        """Class logits from F || E; embedding is a single (d,) vector."""
        n = feats.shape[0]
        rows = nk.broadcast_to(nk.reshape(embedding, (1, -1)),
                               (n, self.arch.embed_dim))
        return self.class_head(nk.concat([feats, rows], axis=1))

    def named_params(self):
        return (_collect("disc.conv", self.convs)
                + _collect("disc.rf", [self.rf_head])
                + _collect("disc.cls", [self.class_head]))


# -- the bundle a client trains and uploads -----------------------------------


@dataclass
class ClientModels:
    arch: ArchConfig
    cate: CateEncoder
    gen: Generator
    disc: Discriminator

    @classmethod
    def init(cls, arch: ArchConfig, seed_seq: np.random.SeedSequence) -> "ClientModels":
        rngs = [np.random.default_rng(s) for s in seed_seq.spawn(3)]
        return cls(arch=arch, cate=CateEncoder(arch, rngs[0]),
                   gen=Generator(arch, rngs[1]), disc=Discriminator(arch, rngs[2]))

    def named_params(self) -> list[tuple[str, Tensor]]:
        return (self.cate.named_params() + self.gen.named_params()
                + self.disc.named_params())

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return int(np.sum([p.size for p in self.params()]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.params()])

    def from_vector(self, vec: np.ndarray) -> None:
        if vec.ndim != 1 or vec.size != self.param_count():
            raise ShapeError(
                f"parameter vector length {vec.shape} does not match "
                f"architecture ({self.param_count()} params)")
        offset = 0
        for p in self.params():
            p.data = vec[offset:offset + p.size].reshape(p.shape).copy()
            offset += p.size

    def clone(self) -> "ClientModels":
        twin = ClientModels.init(self.arch, np.random.SeedSequence(0))
        twin.from_vector(self.to_vector())
        return twin


# -- operations ---------------------------------------------------------------


def cate_embed_batch(enc: CateEncoder, images: Tensor) -> Tensor:
    """Batch task embedding: the mean of per-example embeddings."""
    if images.shape[0] == 0:
        raise ShapeError("cannot embed an empty batch")
    return nk.mean(enc.embed(images), axis=0)


def generate(gen: Generator, labels, rng_seed: int):
    """Synthesize one image per label, deterministically per seed.

    Returns (images, labels) as plain arrays; images lie in [-1, 1].
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= gen.arch.num_classes):
        raise ValueError(f"labels outside [0, {gen.arch.num_classes})")
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((labels.size, gen.arch.z_dim))
    onehot = np.zeros((labels.size, gen.arch.num_classes))
    onehot[np.arange(labels.size), labels] = 1.0
    images = gen.forward(nk.constant(z), nk.constant(onehot))
    return images.data, labels


def discriminate(disc: Discriminator, image: np.ndarray, embedding: np.ndarray):
    """Single-example heads: (real/fake logit, class logits)."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape != (disc.arch.embed_dim,):
        raise ShapeError(
            f"embedding shape {embedding.shape} != ({disc.arch.embed_dim},)")
    x = nk.constant(image[None])
    feats = disc.features(x)
    rf = disc.rf_logits(feats)
    logits = disc.class_logits(feats, nk.constant(embedding))
    return float(rf.data[0]), logits.data[0].copy()
