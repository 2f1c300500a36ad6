"""Skeletal data augmentation: variable pace, joint occlusion, movement masking.

All operators are pure functions of (input, parameters, seed) and never
return a view of their input.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from mqa.errors import ConfigurationError, ParameterError
from mqa.rng import make_rng
from mqa.skeldata import SkeletalSequence, resample_frames

KINDS = ("pace", "occlusion", "masking")
OCCLUSION_MODES = ("zero", "repeat_first")
DEFAULT_PACE_RANGE = (0.75, 1.33)


@dataclass(frozen=True)
class AugmentationSpec:
    """One augmentation and its parameters; only the fields of ``kind`` are used.

    For ``pace``, a ``pace_range`` makes each application draw its factor
    uniformly from that interval instead of using ``pace_factor``.
    """

    kind: str
    pace_factor: float = 1.0
    pace_range: tuple[float, float] | None = None
    h: int = 10
    n: int = 2
    p: float = 0.2
    occlusion_mode: str = "zero"
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown augmentation kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "pace":
            lo, hi = self.pace_range if self.pace_range is not None else (self.pace_factor, self.pace_factor)
            if lo <= 0 or hi < lo:
                raise ParameterError(f"pace factor(s) must be positive, got {self.pace_range or self.pace_factor}")
        else:
            if self.h < 1:
                raise ParameterError(f"window length h must be >= 1, got {self.h}")
        if self.kind == "occlusion":
            if self.n < 0:
                raise ParameterError(f"joint count n must be >= 0, got {self.n}")
            if self.occlusion_mode not in OCCLUSION_MODES:
                raise ParameterError(f"occlusion_mode must be one of {OCCLUSION_MODES}")
        if self.kind == "masking" and not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"masking probability must lie in [0, 1], got {self.p}")

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentationSpec":
        data = dict(data)
        if data.get("pace_range") is not None:
            data["pace_range"] = tuple(float(v) for v in data["pace_range"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown augmentation keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["pace_range"] is not None:
            d["pace_range"] = list(d["pace_range"])
        return d


def default_policy() -> list[AugmentationSpec]:
    return [
        AugmentationSpec("pace", pace_range=DEFAULT_PACE_RANGE),
        AugmentationSpec("occlusion", h=10, n=2),
        AugmentationSpec("masking", h=10, p=0.2),
    ]


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, SkeletalSequence) else np.asarray(x, dtype=np.float64)


def _wrap(x, frames: np.ndarray):
    return x.with_frames(frames) if isinstance(x, SkeletalSequence) else frames


def _check_h(h: int, T: int) -> None:
    if not 1 <= h <= T:
        raise ParameterError(f"window length h={h} must satisfy 1 <= h <= T={T}")


def pace_length(T: int, factor: float) -> int:
    return max(2, math.floor(T / factor + 0.5))


def augment_pace(x, factor: float):
    """Speed up (``factor > 1``) or slow down (``factor < 1``) the movement.

    Speed-up keeps frames ``round(i * factor)``; slow-down linearly
    interpolates onto the longer grid.
    """
    if not factor > 0:
        raise ParameterError(f"pace factor must be > 0, got {factor}")
    frames = _frames(x)
    T = frames.shape[0]
    new_T = pace_length(T, factor)
    if factor > 1.0 and new_T < T:
        idx = np.minimum(np.floor(np.arange(new_T) * factor + 0.5).astype(int), T - 1)
        out = frames[idx].copy()
    else:
        out = resample_frames(frames, new_T)
    return _wrap(x, out)


def augment_joint_occlusion(x, h: int, n: int, mode: str = "zero", seed: int = 0):
    """In each ``h``-frame window, blank ``n`` randomly chosen joints.

    ``mode="zero"`` writes 0.0 to their three angle columns; ``"repeat_first"``
    freezes them at the window's first frame.
    """
    frames = _frames(x)
    T, D = frames.shape
    M = D // 3
    _check_h(h, T)
    if not 0 <= n <= M:
        raise ParameterError(f"cannot occlude n={n} joints of M={M}")
    if mode not in OCCLUSION_MODES:
        raise ParameterError(f"occlusion mode must be one of {OCCLUSION_MODES}, got {mode!r}")
    rng = np.random.default_rng(seed)
    out = frames.copy()
    for start in range(0, T, h):
        joints = rng.choice(M, size=n, replace=False)
        cols = (3 * joints[:, None] + np.arange(3)).ravel()
        if mode == "zero":
            out[start : start + h, cols] = 0.0
        else:
            out[start : start + h, cols] = frames[start, cols]
    return _wrap(x, out)


def augment_masking(x, h: int, p: float, seed: int = 0):
    """Zero every feature of each ``h``-frame window with probability ``p``."""
    frames = _frames(x)
    T = frames.shape[0]
    _check_h(h, T)
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"masking probability must lie in [0, 1], got {p}")
    out = frames.copy()
    starts = range(0, T, h)
    masked = np.random.default_rng(seed).random(len(starts)) < p
    for start, hit in zip(starts, masked):
        if hit:
            out[start : start + h] = 0.0
    return _wrap(x, out)


def apply_spec(x, spec: AugmentationSpec, seed: int):
    rng = np.random.default_rng(seed)
    if spec.kind == "pace":
        factor = spec.pace_factor if spec.pace_range is None else float(rng.uniform(*spec.pace_range))
        return augment_pace(x, factor)
    if spec.kind == "occlusion":
        T = _frames(x).shape[0]
        return augment_joint_occlusion(x, min(spec.h, T), spec.n, spec.occlusion_mode, int(rng.integers(2**32)))
    T = _frames(x).shape[0]
    return augment_masking(x, min(spec.h, T), spec.p, int(rng.integers(2**32)))


def policy_choices(batch_size: int, n_specs: int, seed: int) -> list[tuple[int, int]]:
    """``(spec index, operator seed)`` for each batch member, from ``(seed, index)`` only."""
    out = []
    for i in range(batch_size):
        rng = make_rng(seed, i)
        out.append((int(rng.integers(n_specs)), int(rng.integers(2**32))))
    return out


def augment_batch(batch: Sequence, policy: Sequence[AugmentationSpec], seed: int, canonical_T: int | None = None):
    """Augment every member with one uniformly drawn spec from ``policy``.

    ``batch`` is a list of sequences or a ``[B, T, D]`` array; the output has
    the same form. Members whose length changed are resampled back to
    ``canonical_T`` (default: the member's own input length).
    """
    if not policy:
        raise ConfigurationError("augmentation policy is empty")
    as_array = isinstance(batch, np.ndarray)
    out = []
    for member, (k, op_seed) in zip(batch, policy_choices(len(batch), len(policy), seed)):
        target = canonical_T or _frames(member).shape[0]
        aug = apply_spec(member, policy[k], op_seed)
        frames = _frames(aug)
        if frames.shape[0] != target:
            aug = _wrap(aug, resample_frames(frames, target))
        elif frames is _frames(member):
            aug = _wrap(aug, frames.copy())
        out.append(aug)
    return np.stack(out) if as_array else out
