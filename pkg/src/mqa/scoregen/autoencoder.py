"""Dense denoising autoencoder over flattened, length-aligned sequences."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from mqa.augment import AugmentationSpec, augment_batch
from mqa.errors import DimensionError, ParameterError, TrainingError
from mqa.numcore import Adam, Dense, Module, Tensor, backward, no_grad, ops
from mqa.rng import derive_seed, make_rng
from mqa.skeldata import SkeletalSequence


@dataclass
class AutoencoderConfig:
    T: int
    D: int
    latent_dim: int = 8
    hidden: tuple[int, ...] = (256, 64)
    l1: float = 1e-4
    lr: float = 5e-4
    epochs: int = 200
    batch_size: int = 8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderConfig":
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (256, 64)))
        return cls(**d)


class Autoencoder(Module):
    """Encoder ``T*D -> hidden -> L`` and its mirror image as decoder.

    Inputs are standardised per feature with statistics fixed at training
    time; reconstruction happens in that standardised space.
    """

    def __init__(self, cfg: AutoencoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        sizes = [cfg.T * cfg.D, *cfg.hidden, cfg.latent_dim]
        self.encoder_layers = [
            self.add_module(f"enc{i}", Dense(a, b, rng, "relu" if i < len(sizes) - 2 else None))
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        rev = sizes[::-1]
        self.decoder_layers = [
            self.add_module(f"dec{i}", Dense(a, b, rng, "relu" if i < len(rev) - 2 else None))
            for i, (a, b) in enumerate(zip(rev[:-1], rev[1:]))
        ]
        self.feature_mean = np.zeros(cfg.D)
        self.feature_std = np.ones(cfg.D)

    def fit_normalization(self, frames: np.ndarray) -> None:
        flat = frames.reshape(-1, self.cfg.D)
        self.feature_mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        self.feature_std = np.where(std > 1e-8, std, 1.0)

    def standardize(self, frames: np.ndarray) -> np.ndarray:
        """``[B, T, D]`` raw angles to ``[B, T*D]`` standardised vectors."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.shape[1:] != (self.cfg.T, self.cfg.D):
            raise DimensionError(
                f"expected sequences of shape ({self.cfg.T}, {self.cfg.D}), got {frames.shape[1:]}"
            )
        return ((frames - self.feature_mean) / self.feature_std).reshape(len(frames), -1)

    def encode(self, x) -> Tensor:
        for layer in self.encoder_layers:
            x = layer(x)
        return x

    def decode(self, z) -> Tensor:
        for layer in self.decoder_layers:
            z = layer(z)
        return z

    def __call__(self, x) -> Tensor:
        return self.decode(self.encode(x))

    def encoder_l1(self) -> Tensor:
        total = ops.sum(ops.abs(self.encoder_layers[0].weight))
        for layer in self.encoder_layers[1:]:
            total = ops.add(total, ops.sum(ops.abs(layer.weight)))
        return total

    def state(self) -> dict[str, np.ndarray]:
        state = self.state_dict()
        state["norm.mean"] = self.feature_mean.copy()
        state["norm.std"] = self.feature_std.copy()
        return state

    @classmethod
    def from_state(cls, cfg: AutoencoderConfig, state: dict[str, np.ndarray]) -> "Autoencoder":
        ae = cls(cfg, np.random.default_rng(0))
        state = dict(state)
        ae.feature_mean = np.asarray(state.pop("norm.mean"))
        ae.feature_std = np.asarray(state.pop("norm.std"))
        ae.load_state_dict(state)
        return ae


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    reconstruction: list[float] = field(default_factory=list)


def _as_frames(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return np.asarray(data, dtype=np.float64)
    return np.stack([s.frames if isinstance(s, SkeletalSequence) else np.asarray(s) for s in data])


def train_denoising_autoencoder(
    data,
    policy: Sequence[AugmentationSpec] | None = None,
    l1: float = 1e-4,
    epochs: int = 200,
    seed: int = 0,
    latent_dim: int = 8,
    hidden: tuple[int, ...] = (256, 64),
    lr: float = 5e-4,
    batch_size: int = 8,
) -> tuple[Autoencoder, TrainHistory]:
    """Minimise ``MSE(clean, g(f(augmented))) + l1 * sum|encoder weights|``.

    ``data`` holds equal-length sequences (list or ``[n, T, D]`` array). With
    an empty or ``None`` policy the encoder sees the clean batch.
    """
    frames = _as_frames(data) if len(data) else np.zeros((0,))
    if frames.size == 0:
        raise TrainingError("no training sequences")
    if l1 < 0:
        raise ParameterError(f"L1 weight must be >= 0, got {l1}")
    n, T, D = frames.shape
    cfg = AutoencoderConfig(T, D, latent_dim, tuple(hidden), l1, lr, epochs, batch_size)
    rng = make_rng(seed, 0)
    ae = Autoencoder(cfg, rng)
    ae.fit_normalization(frames)
    target_all = ae.standardize(frames)
    opt = Adam(ae.parameters(), lr=lr)
    history = TrainHistory()
    for epoch in range(epochs):
        order = make_rng(seed, 1, epoch).permutation(n)
        tot = rec = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            clean = frames[idx]
            noisy = augment_batch(clean, policy, seed=derive_seed(seed, 2, epoch, b)) if policy else clean
            opt.zero_grad()
            recon_loss = ops.mse_loss(ae(ae.standardize(noisy)), target_all[idx])
            loss = ops.add(recon_loss, ops.mul(ae.encoder_l1(), l1)) if l1 > 0 else recon_loss
            backward(loss)
            opt.step()
            tot += loss.item() * len(idx)
            rec += recon_loss.item() * len(idx)
        history.total.append(tot / n)
        history.reconstruction.append(rec / n)
        if not np.isfinite(history.total[-1]):
            raise TrainingError(f"loss diverged at epoch {epoch}")
    return ae, history


def encode_latent(ae: Autoencoder, x) -> np.ndarray:
    """Latent code for one sequence (``T x D``) or a batch (``[B, T, D]``)."""
    frames = x.frames if isinstance(x, SkeletalSequence) else np.asarray(x, dtype=np.float64)
    single = frames.ndim == 2
    if single:
        frames = frames[None]
    with no_grad():
        z = ae.encode(ae.standardize(frames)).data
    return z[0] if single else z


def reconstruction_error(ae: Autoencoder, inputs, targets) -> float:
    """Mean squared error in standardised space between ``g(f(inputs))`` and ``targets``."""
    inputs, targets = _as_frames(inputs), _as_frames(targets)
    with no_grad():
        return ops.mse_loss(ae(ae.standardize(inputs)), ae.standardize(targets)).item()
