"""The full scorer: windowing, embedding, positions, encoder, dense head."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mqa.errors import ConfigurationError, DimensionError, WindowError
from mqa.mqaformer.attention import Encoder, add_positional, sinusoidal_table
from mqa.mqaformer.embedders import EmbedderConfig, HFEAEmbedder, HFEEmbedder, build_embedder
from mqa.numcore import Dense, Module, Tensor, load_checkpoint, no_grad, ops, save_checkpoint
from mqa.skeldata import SkeletalSequence, resample_frames

FORMAT_NAME = "mqa-scorer"


@dataclass(frozen=True)
class ScorerConfig:
    embedder: EmbedderConfig
    canonical_T: int = 240
    heads: int = 4
    blocks: int = 2
    ff_dim: int | None = None  # default 2 * K
    head_hidden: tuple[int, int] = (128, 32)

    def __post_init__(self):
        if self.canonical_T < self.embedder.W:
            raise WindowError(f"canonical length {self.canonical_T} is shorter than the window length {self.embedder.W}")
        if self.heads < 1 or self.embedder.K % self.heads:
            raise ConfigurationError(f"token size K={self.embedder.K} is not divisible by {self.heads} heads")

    @property
    def N(self) -> int:
        return self.canonical_T // self.embedder.W

    @property
    def K(self) -> int:
        return self.embedder.K

    def to_dict(self) -> dict:
        return {
            "embedder": self.embedder.to_dict(),
            "canonical_T": self.canonical_T,
            "heads": self.heads,
            "blocks": self.blocks,
            "ff_dim": self.ff_dim,
            "head_hidden": list(self.head_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerConfig":
        d = dict(d)
        d["embedder"] = EmbedderConfig.from_dict(d["embedder"])
        if "head_hidden" in d:
            d["head_hidden"] = tuple(int(v) for v in d["head_hidden"])
        return cls(**d)


@dataclass
class AttentionRecord:
    """Attention weights from one forward pass.

    ``encoder[l]`` is ``[..., heads, N, N]`` for encoder layer ``l``;
    ``parts`` is ``[..., N, heads, P, P]`` (HFE-A only, one map per window).
    """

    encoder: list[np.ndarray] = field(default_factory=list)
    parts: np.ndarray | None = None
    part_names: list[str] = field(default_factory=list)

    def mean_part_attention(self) -> np.ndarray | None:
        """Part attention averaged over every leading axis: ``[heads, P, P]``."""
        if self.parts is None:
            return None
        return self.parts.reshape(-1, *self.parts.shape[-3:]).mean(axis=0)

    def all_matrices(self) -> list[np.ndarray]:
        out = list(self.encoder)
        if self.parts is not None:
            out.append(self.parts)
        return out


class ScorerModel(Module):
    """Scores a canonical-length sequence in (0, 1).

    Frames are standardised per feature (statistics set by
    :meth:`fit_normalization`), cut into ``N`` windows, embedded, given
    sinusoidal positions, passed through the encoder, flattened and fed to
    a dense head with a sigmoid output.
    """

    def __init__(self, cfg: ScorerConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        K, N = cfg.K, cfg.N
        self.embedder = self.add_module("embedder", build_embedder(cfg.embedder, rng))
        self.positional = sinusoidal_table(N, K)
        self.encoder = self.add_module("encoder", Encoder(K, cfg.heads, cfg.blocks, cfg.ff_dim or 2 * K, rng))
        h1, h2 = cfg.head_hidden
        self.head1 = self.add_module("head1", Dense(N * K, h1, rng))
        self.head2 = self.add_module("head2", Dense(h1, h2, rng))
        self.head3 = self.add_module("head3", Dense(h2, 1, rng, None))
        self.feature_mean = np.zeros(cfg.embedder.D)
        self.feature_std = np.ones(cfg.embedder.D)

    def fit_normalization(self, frames: np.ndarray) -> None:
        """Per-feature mean/std over every frame of ``frames`` (``[..., T, D]``)."""
        flat = np.asarray(frames, dtype=np.float64).reshape(-1, self.cfg.embedder.D)
        self.feature_mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        self.feature_std = np.where(std > 1e-8, std, 1.0)

    def windows(self, frames: np.ndarray) -> np.ndarray:
        """``[B, T, D]`` canonical frames to standardised ``[B, N, W, D]`` windows."""
        frames = np.asarray(frames, dtype=np.float64)
        W, D, N = self.cfg.embedder.W, self.cfg.embedder.D, self.cfg.N
        if frames.ndim != 3 or frames.shape[1:] != (self.cfg.canonical_T, D):
            raise DimensionError(f"expected [B, {self.cfg.canonical_T}, {D}] frames, got {frames.shape}")
        z = (frames - self.feature_mean) / self.feature_std
        return z[:, : N * W].reshape(len(z), N, W, D)

    def forward(self, frames: np.ndarray) -> tuple[Tensor, AttentionRecord]:
        """Scores ``[B]`` for canonical-length frames ``[B, T, D]``."""
        tokens = self.embedder(self.windows(frames))
        encoded, maps = self.encoder(add_positional(tokens, self.positional))
        B = encoded.shape[0]
        flat = ops.reshape(encoded, (B, self.cfg.N * self.cfg.K))
        logits = self.head3(self.head2(self.head1(flat)))
        record = AttentionRecord(encoder=maps)
        if isinstance(self.embedder, HFEAEmbedder):
            record.parts = self.embedder.last_part_attention
        if isinstance(self.embedder, HFEEmbedder):
            record.part_names = list(self.embedder.part_names)
        return ops.reshape(ops.sigmoid(logits), (B,)), record

    __call__ = forward

    def state(self) -> dict[str, np.ndarray]:
        state = self.state_dict()
        state["norm.mean"] = self.feature_mean.copy()
        state["norm.std"] = self.feature_std.copy()
        return state

    @classmethod
    def from_state(cls, cfg: ScorerConfig, state: dict[str, np.ndarray]) -> "ScorerModel":
        state = dict(state)
        model = cls(cfg, np.random.default_rng(0))
        model.feature_mean = np.asarray(state.pop("norm.mean"), dtype=np.float64)
        model.feature_std = np.asarray(state.pop("norm.std"), dtype=np.float64)
        model.load_state_dict(state)
        return model

    def save(self, path, extra: dict | None = None) -> Path:
        hyper = {"format": FORMAT_NAME, "scorer": self.cfg.to_dict()}
        if extra:
            hyper.update(extra)
        return save_checkpoint(path, self.state(), hyper)

    @classmethod
    def load(cls, path) -> "ScorerModel":
        state, hyper = load_checkpoint(path)
        if hyper.get("format") != FORMAT_NAME:
            raise ConfigurationError(f"{path} is not a scorer checkpoint")
        return cls.from_state(ScorerConfig.from_dict(hyper["scorer"]), state)


def canonical_frames(x, T: int) -> np.ndarray:
    frames = x.frames if isinstance(x, SkeletalSequence) else np.asarray(x, dtype=np.float64)
    return frames if frames.shape[0] == T else resample_frames(frames, T)


def predict_scores(model: ScorerModel, sequences) -> tuple[np.ndarray, AttentionRecord]:
    """Batch inference without gradient tracking."""
    frames = np.stack([canonical_frames(s, model.cfg.canonical_T) for s in sequences])
    with no_grad():
        scores, record = model(frames)
    return scores.data.copy(), record


def predict_score(model: ScorerModel, x) -> tuple[float, AttentionRecord]:
    """Score one sequence (resampled to the canonical length) and its attention maps."""
    scores, record = predict_scores(model, [x])
    record.encoder = [m[0] for m in record.encoder]
    if record.parts is not None:
        record.parts = record.parts[0]
    return float(scores[0]), record
