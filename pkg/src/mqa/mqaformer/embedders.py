"""Window embedders: map a ``W x D`` window slice to a ``K``-vector token.

All embedders accept any number of leading axes (``[..., W, D]``) so a whole
batch of windowed sequences is embedded in one call.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from mqa.errors import ConfigurationError, DimensionError
from mqa.mqaformer.attention import MultiHeadAttention
from mqa.mqaformer.bodyparts import check_partition, default_parts
from mqa.numcore import Conv1d, Dense, Module, Tensor, ops
from mqa.numcore.tensor import as_tensor

KINDS = ("mlp", "cnn", "hfe", "hfe_a")


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "hfe_a"
    K: int = 256
    W: int = 40
    D: int = 75
    body_parts: dict[str, list[int]] | None = None  # None: preset chosen by joint count
    hfe_attention_heads: int = 5
    K_part: int = 64
    part_key_dim: int | None = None  # per-head width of the part attention; default K_part // heads
    mlp_hidden: tuple[int, int] = (256, 256)
    cnn_channels: tuple[int, int] = (64, 64)
    cnn_kernels: tuple[int, int] = (5, 5)
    hfe_channels: int = 32
    hfe_kernel: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown embedder kind {self.kind!r}; expected one of {KINDS}")
        if self.K < 1 or self.W < 1 or self.D < 1:
            raise ConfigurationError(f"K, W and D must be positive, got K={self.K} W={self.W} D={self.D}")
        if self.hfe_attention_heads < 1:
            raise ConfigurationError("hfe_attention_heads must be >= 1")
        if self.kind in ("hfe", "hfe_a"):
            if self.D % 3:
                raise ConfigurationError(f"D={self.D} is not a whole number of 3-angle joints")
            check_partition(self.parts, self.D // 3)

    @property
    def parts(self) -> dict[str, list[int]]:
        return dict(self.body_parts) if self.body_parts is not None else default_parts(self.D // 3)

    @property
    def key_dim(self) -> int:
        return self.part_key_dim or max(1, self.K_part // self.hfe_attention_heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("mlp_hidden", "cnn_channels", "cnn_kernels"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown embedder keys: {sorted(unknown)}")
        for key in ("mlp_hidden", "cnn_channels", "cnn_kernels"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        if d.get("body_parts") is not None:
            d["body_parts"] = {str(k): [int(j) for j in v] for k, v in d["body_parts"].items()}
        return cls(**d)


def _check_window(x: Tensor, cfg: EmbedderConfig) -> None:
    if x.ndim < 2 or x.shape[-2:] != (cfg.W, cfg.D):
        raise DimensionError(f"expected windows of shape [..., {cfg.W}, {cfg.D}], got {x.shape}")


class MLPEmbedder(Module):
    """Flatten, two dense+ReLU layers, linear to ``K``."""

    def __init__(self, cfg: EmbedderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        h1, h2 = cfg.mlp_hidden
        self.fc1 = self.add_module("fc1", Dense(cfg.W * cfg.D, h1, rng))
        self.fc2 = self.add_module("fc2", Dense(h1, h2, rng))
        self.out = self.add_module("out", Dense(h2, cfg.K, rng, None))

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        _check_window(x, self.cfg)
        flat = ops.reshape(x, (*x.shape[:-2], self.cfg.W * self.cfg.D))
        return self.out(self.fc2(self.fc1(flat)))


class CNNEmbedder(Module):
    """Two temporal conv+ReLU stages, global max pool over time, linear to ``K``."""

    def __init__(self, cfg: EmbedderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        (c1, c2), (k1, k2) = cfg.cnn_channels, cfg.cnn_kernels
        if cfg.W < self.receptive_field:
            raise DimensionError(f"window length {cfg.W} is shorter than the CNN receptive field {self.receptive_field}")
        self.conv1 = self.add_module("conv1", Conv1d(cfg.D, c1, k1, rng))
        self.conv2 = self.add_module("conv2", Conv1d(c1, c2, k2, rng))
        self.out = self.add_module("out", Dense(c2, cfg.K, rng, None))

    @property
    def receptive_field(self) -> int:
        k1, k2 = self.cfg.cnn_kernels
        return k1 + k2 - 1

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        _check_window(x, self.cfg)
        return self.out(ops.global_max_pool(self.conv2(self.conv1(x))))


class PartSubnet(Module):
    """Conv+ReLU over one body part's columns, max pool over time, dense+ReLU to ``K_part``."""

    def __init__(self, n_cols: int, cfg: EmbedderConfig, rng: np.random.Generator):
        super().__init__()
        self.conv = self.add_module("conv", Conv1d(n_cols, cfg.hfe_channels, cfg.hfe_kernel, rng))
        self.fc = self.add_module("fc", Dense(cfg.hfe_channels, cfg.K_part, rng))

    def __call__(self, x) -> Tensor:
        return self.fc(ops.global_max_pool(self.conv(x)))


class HFEEmbedder(Module):
    """Hierarchical feature extractor: one sub-network per body part.

    ``part_features`` gives the stacked per-part vectors ``[..., P, K_part]``
    before they are combined.
    """

    def __init__(self, cfg: EmbedderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        if cfg.W < cfg.hfe_kernel:
            raise DimensionError(f"window length {cfg.W} is shorter than the part kernel {cfg.hfe_kernel}")
        self.part_names = list(cfg.parts)
        self.part_columns = [
            (3 * np.asarray(cfg.parts[name])[:, None] + np.arange(3)).ravel() for name in self.part_names
        ]
        self.subnets = [
            self.add_module(f"part.{name}", PartSubnet(len(cols), cfg, rng))
            for name, cols in zip(self.part_names, self.part_columns)
        ]
        self._build_head(rng)

    def _build_head(self, rng: np.random.Generator) -> None:
        P = len(self.part_names)
        self.out = self.add_module("out", Dense(P * self.cfg.K_part, self.cfg.K, rng, None))

    def part_features(self, x) -> Tensor:
        x = as_tensor(x)
        _check_window(x, self.cfg)
        feats = [net(ops.take(x, cols, axis=-1)) for net, cols in zip(self.subnets, self.part_columns)]
        return ops.stack(feats, axis=-2)

    def __call__(self, x) -> Tensor:
        parts = self.part_features(x)
        flat = ops.reshape(parts, (*parts.shape[:-2], parts.shape[-2] * parts.shape[-1]))
        return self.out(flat)


class HFEAEmbedder(HFEEmbedder):
    """HFE with multi-head self-attention across the part vectors and a max pool over parts.

    After each call ``last_part_attention`` holds the ``[..., heads, P, P]``
    attention weights.
    """

    def _build_head(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        self.attn = self.add_module(
            "attn", MultiHeadAttention(cfg.K_part, cfg.hfe_attention_heads, cfg.key_dim, rng, scope="part_attention")
        )
        self.out = self.add_module("out", Dense(cfg.K_part, cfg.K, rng, None))
        self.last_part_attention: np.ndarray | None = None

    def part_attention(self, part_vectors) -> tuple[Tensor, np.ndarray]:
        """Self-attention over ``[..., P, K_part]`` part vectors."""
        return self.attn(part_vectors)

    def __call__(self, x) -> Tensor:
        mixed, weights = self.part_attention(self.part_features(x))
        self.last_part_attention = weights
        return self.out(ops.global_max_pool(mixed))


_CLASSES = {"mlp": MLPEmbedder, "cnn": CNNEmbedder, "hfe": HFEEmbedder, "hfe_a": HFEAEmbedder}


def build_embedder(cfg: EmbedderConfig, rng: np.random.Generator) -> Module:
    return _CLASSES[cfg.kind](cfg, rng)
