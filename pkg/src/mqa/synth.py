"""Synthetic exercise repetitions with known quality, for tests and demos.

Each joint angle follows one sinusoidal cycle per repetition. A quality
value ``q`` in [0, 1] scales the movement amplitude of the exercise's
active joints; correct repetitions have high ``q``, incorrect ones low.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mqa.rng import make_rng
from mqa.skeldata import SkeletalSequence

# 10-joint layout used by synthetic data: two joints per body part
SYNTH_JOINTS = 10
SYNTH_PARTS = {
    "trunk_head": [0, 1],
    "left_arm": [2, 3],
    "right_arm": [4, 5],
    "left_leg": [6, 7],
    "right_leg": [8, 9],
}
UPPER_BODY = ("trunk_head", "left_arm", "right_arm")


@dataclass
class SynthConfig:
    exercises: int = 1
    subjects: int = 4
    correct_per_subject: int = 6
    incorrect_per_subject: int = 6
    joints: int = SYNTH_JOINTS
    min_frames: int = 60
    max_frames: int = 90
    noise_deg: float = 0.5
    upper_body_only: bool = False
    correct_quality: tuple[float, float] = (0.85, 1.0)
    incorrect_quality: tuple[float, float] = (0.0, 0.5)


def _active_joints(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.upper_body_only and cfg.joints == SYNTH_JOINTS:
        return np.array(SYNTH_PARTS["left_arm"] + SYNTH_PARTS["right_arm"])
    k = max(1, cfg.joints // 2)
    return np.sort(rng.choice(cfg.joints, size=k, replace=False))


def repetition(
    rng: np.random.Generator, T: int, amplitude: np.ndarray, phase: np.ndarray, offset: np.ndarray,
    quality: float, active: np.ndarray, noise_deg: float, idle_noise: np.ndarray,
) -> np.ndarray:
    """One ``T x D`` repetition; ``active`` joints' amplitudes scale with ``quality``."""
    D = amplitude.size
    t = np.linspace(0.0, 1.0, T)[:, None]
    scale = np.ones(D)
    cols = (3 * active[:, None] + np.arange(3)).ravel()
    scale[cols] = 0.3 + 0.7 * quality
    frames = offset + scale * amplitude * np.sin(2 * np.pi * t + phase)
    frames += rng.normal(0.0, noise_deg, size=frames.shape)
    frames += rng.normal(0.0, 1.0, size=frames.shape) * idle_noise
    return frames


def generate(cfg: SynthConfig | None = None, seed: int = 0) -> list[SkeletalSequence]:
    """Labelled repetitions for ``cfg.exercises`` exercises.

    ``clinical_score`` carries ``50 * q`` so the quality can be recovered the
    same way KIMORE clinical scores are (divide by 50).
    """
    cfg = cfg or SynthConfig()
    D = 3 * cfg.joints
    out: list[SkeletalSequence] = []
    for e in range(cfg.exercises):
        erng = make_rng(seed, 100 + e)
        active = _active_joints(cfg, erng)
        amplitude = erng.uniform(10.0, 40.0, size=D)
        phase = erng.uniform(0.0, 2 * np.pi, size=D)
        offset = erng.uniform(-60.0, 60.0, size=D)
        idle_noise = np.zeros(D)
        if cfg.upper_body_only and cfg.joints == SYNTH_JOINTS:
            # legs carry no movement signal, only tracking noise
            legs = np.array(SYNTH_PARTS["left_leg"] + SYNTH_PARTS["right_leg"])
            leg_cols = (3 * legs[:, None] + np.arange(3)).ravel()
            amplitude[leg_cols] = 0.0
            idle_noise[leg_cols] = 8.0
        for s in range(cfg.subjects):
            srng = make_rng(seed, 200 + e, s)
            subj_offset = offset + srng.normal(0.0, 2.0, size=D)
            subj_amp = amplitude * srng.uniform(0.95, 1.05, size=D)
            plan = [("correct", cfg.correct_quality)] * cfg.correct_per_subject + [
                ("incorrect", cfg.incorrect_quality)
            ] * cfg.incorrect_per_subject
            for r, (label, (qlo, qhi)) in enumerate(plan):
                rrng = make_rng(seed, 300 + e, s, r)
                q = float(rrng.uniform(qlo, qhi))
                T = int(rrng.integers(cfg.min_frames, cfg.max_frames + 1))
                frames = repetition(rrng, T, subj_amp, phase, subj_offset, q, active, cfg.noise_deg, idle_noise)
                suffix = "_inc" if label == "incorrect" else ""
                out.append(SkeletalSequence(
                    frames,
                    frame_rate=30.0,
                    device="kinect",
                    label=label,
                    clinical_score=round(50.0 * q, 6),
                    seq_id=f"m{e + 1:02d}_s{s + 1:02d}_e{r + 1:02d}{suffix}",
                    exercise=f"E{e + 1}",
                    subject=f"S{s + 1}",
                ))
    return out


def quality(seq: SkeletalSequence) -> float:
    return float(seq.clinical_score) / 50.0
