"""Multi-head self-attention, sinusoidal positions and pre-norm encoder blocks."""

from __future__ import annotations

import numpy as np

from mqa.errors import ConfigurationError, DimensionError
from mqa.numcore import Dense, LayerNorm, Module, Tensor, flop_scope, ops
from mqa.numcore.nn import glorot_uniform
from mqa.numcore.tensor import as_tensor


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention over the second-to-last axis.

    Queries/keys/values use ``heads * key_dim`` units; the output is
    projected back to ``d_model``. Score and mixing products run inside
    the FLOP scope ``scope``.
    """

    def __init__(self, d_model: int, heads: int, key_dim: int, rng: np.random.Generator, scope: str = "attention"):
        super().__init__()
        if heads < 1 or key_dim < 1:
            raise ConfigurationError(f"attention needs heads >= 1 and key_dim >= 1, got {heads}, {key_dim}")
        self.heads, self.key_dim, self.scope = heads, key_dim, scope
        inner = heads * key_dim
        for name in ("query", "key", "value"):
            self.add_param(name, glorot_uniform(rng, (d_model, inner), d_model, inner))
        self.add_param("out", glorot_uniform(rng, (inner, d_model), inner, d_model))
        self.add_param("out_bias", np.zeros(d_model))

    def _split(self, x: Tensor) -> Tensor:
        # [..., N, h*dk] -> [..., h, N, dk]
        lead = x.shape[:-1]
        return ops.swapaxes(ops.reshape(x, (*lead, self.heads, self.key_dim)), -3, -2)

    def __call__(self, x) -> tuple[Tensor, np.ndarray]:
        x = as_tensor(x)
        if x.ndim < 2:
            raise DimensionError(f"attention input must be [..., N, d], got {x.shape}")
        p = self._params
        q = self._split(ops.matmul(x, p["query"]))
        k = self._split(ops.matmul(x, p["key"]))
        v = self._split(ops.matmul(x, p["value"]))
        with flop_scope(self.scope):
            scores = ops.mul(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / np.sqrt(self.key_dim))
            weights = ops.softmax(scores, axis=-1)
            mixed = ops.matmul(weights, v)
        merged = ops.swapaxes(mixed, -3, -2)
        merged = ops.reshape(merged, (*merged.shape[:-2], self.heads * self.key_dim))
        return ops.linear(merged, p["out"], p["out_bias"]), weights.data.copy()


def sinusoidal_table(N: int, K: int) -> np.ndarray:
    """``N x K`` table; even columns ``sin(pos / 10000^(2i/K))``, odd columns the matching cosine."""
    if N < 1 or K < 1:
        raise DimensionError(f"positional table needs N >= 1 and K >= 1, got {N}x{K}")
    pos = np.arange(N)[:, None]
    i = np.arange(0, K, 2)[None, :]
    angle = pos / np.power(10000.0, i / K)
    table = np.zeros((N, K))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : K // 2])
    return table


def add_positional(z, table) -> Tensor:
    """Add the position table to a token matrix (``[..., N, K]`` plus ``[N, K]``)."""
    z = as_tensor(z)
    table = np.asarray(table, dtype=np.float64)
    if z.shape[-2:] != table.shape:
        raise DimensionError(f"positional table {table.shape} does not match tokens {z.shape}")
    return ops.add(z, table)


class EncoderBlock(Module):
    """Pre-norm block: ``x + MHA(LN(x))`` then ``h + FFN(LN(h))``."""

    def __init__(self, K: int, heads: int, ff_dim: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or K % heads:
            raise ConfigurationError(f"token size K={K} is not divisible by {heads} heads")
        self.norm1 = self.add_module("norm1", LayerNorm(K))
        self.attn = self.add_module("attn", MultiHeadAttention(K, heads, K // heads, rng))
        self.norm2 = self.add_module("norm2", LayerNorm(K))
        self.ff1 = self.add_module("ff1", Dense(K, ff_dim, rng, "relu"))
        self.ff2 = self.add_module("ff2", Dense(ff_dim, K, rng, None))

    def __call__(self, x) -> tuple[Tensor, np.ndarray]:
        a, weights = self.attn(self.norm1(x))
        h = ops.add(x, a)
        return ops.add(h, self.ff2(self.ff1(self.norm2(h)))), weights


class Encoder(Module):
    def __init__(self, K: int, heads: int, blocks: int, ff_dim: int, rng: np.random.Generator):
        super().__init__()
        if blocks < 1:
            raise ConfigurationError(f"need at least one encoder block, got {blocks}")
        self.blocks = [self.add_module(f"block{i}", EncoderBlock(K, heads, ff_dim, rng)) for i in range(blocks)]
        self.norm = self.add_module("norm", LayerNorm(K))

    def __call__(self, zp) -> tuple[Tensor, list[np.ndarray]]:
        zp = as_tensor(zp)
        if zp.ndim < 2 or zp.shape[-2] < 1:
            raise DimensionError(f"encoder input must be [..., N>=1, K], got {zp.shape}")
        maps = []
        x = zp
        for block in self.blocks:
            x, w = block(x)
            maps.append(w)
        return self.norm(x), maps


def encoder_forward(zp, encoder: Encoder) -> tuple[Tensor, list[np.ndarray]]:
    return encoder(zp)
