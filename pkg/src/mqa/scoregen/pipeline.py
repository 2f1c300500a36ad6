"""End-to-end score generation for one exercise: autoencoder -> GMM -> scores."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mqa.augment import AugmentationSpec
from mqa.errors import DataError, MQAError
from mqa.numcore import load_checkpoint, save_checkpoint
from mqa.scoregen.autoencoder import Autoencoder, AutoencoderConfig, encode_latent, train_denoising_autoencoder
from mqa.scoregen.gmm import ExerciseModel, fit_gmm_em, performance_metric, select_by_bic
from mqa.scoregen.scoring import (
    DEFAULT_MEAN_SCORE, ScoringCalibration, calibrate_scoring, score_from_metric, separation_degree,
)
from mqa.skeldata import SkeletalSequence, resample_sequence


@dataclass
class ScoreGenConfig:
    canonical_T: int = 240
    latent_dim: int = 8
    hidden: tuple[int, ...] = (256, 64)
    l1: float = 1e-4
    lr: float = 5e-4
    epochs: int = 200
    batch_size: int = 8
    components: int | str = "bic"
    max_components: int = 6
    gmm_max_iters: int = 200
    gmm_tol: float = 1e-6
    mean_score: float = DEFAULT_MEAN_SCORE
    sd_folds: int = 5
    policy: list[AugmentationSpec] = field(default_factory=list)


@dataclass
class ScoreModel:
    ae: Autoencoder
    gmm: ExerciseModel
    calibration: ScoringCalibration
    canonical_T: int

    def save(self, stem) -> tuple[Path, Path]:
        """Autoencoder checkpoint at ``<stem>.ckpt`` plus JSON sidecar ``<stem>.json``."""
        stem = Path(stem)
        ckpt = save_checkpoint(stem.with_suffix(".ckpt"), self.ae.state(), {"autoencoder": self.ae.cfg.to_dict()})
        sidecar = stem.with_suffix(".json")
        sidecar.write_text(json.dumps(
            {"canonical_T": self.canonical_T, "gmm": self.gmm.to_dict(), "calibration": self.calibration.to_dict()},
            indent=2, sort_keys=True,
        ) + "\n")
        return ckpt, sidecar

    @classmethod
    def load(cls, stem) -> "ScoreModel":
        stem = Path(stem)
        state, hyper = load_checkpoint(stem.with_suffix(".ckpt"))
        ae = Autoencoder.from_state(AutoencoderConfig.from_dict(hyper["autoencoder"]), state)
        side = json.loads(stem.with_suffix(".json").read_text())
        return cls(ae, ExerciseModel.from_dict(side["gmm"]), ScoringCalibration.from_dict(side["calibration"]),
                   int(side["canonical_T"]))


def _aligned(sequences: Sequence[SkeletalSequence], T: int) -> np.ndarray:
    return np.stack([resample_sequence(s, T).frames for s in sequences])


def fit_score_model(sequences: Sequence[SkeletalSequence], cfg: ScoreGenConfig, seed: int = 0) -> ScoreModel:
    """Train the autoencoder on all repetitions; fit GMM and calibration on the correct ones."""
    correct = [s for s in sequences if s.label == "correct"]
    if not correct:
        raise DataError("score generation needs at least one correct repetition")
    frames = _aligned(sequences, cfg.canonical_T)
    ae, _ = train_denoising_autoencoder(
        frames, cfg.policy or None, l1=cfg.l1, epochs=cfg.epochs, seed=seed, latent_dim=cfg.latent_dim,
        hidden=cfg.hidden, lr=cfg.lr, batch_size=cfg.batch_size,
    )
    z = encode_latent(ae, _aligned(correct, cfg.canonical_T))
    if cfg.components == "bic":
        gmm = select_by_bic(z, cfg.max_components, seed=seed, max_iters=cfg.gmm_max_iters, tol=cfg.gmm_tol)
    else:
        gmm = fit_gmm_em(z, int(cfg.components), seed=seed, max_iters=cfg.gmm_max_iters, tol=cfg.gmm_tol)
    cal = calibrate_scoring(performance_metric(gmm, z), cfg.mean_score)
    return ScoreModel(ae, gmm, cal, cfg.canonical_T)


def sequence_metrics(model: ScoreModel, sequences: Sequence[SkeletalSequence]) -> np.ndarray:
    if not sequences:
        return np.zeros(0)
    return np.atleast_1d(performance_metric(model.gmm, encode_latent(model.ae, _aligned(sequences, model.canonical_T))))


def generate_labels(
    ae: Autoencoder, gmm: ExerciseModel, cal: ScoringCalibration, sequences: Sequence[SkeletalSequence],
    canonical_T: int | None = None,
) -> list[tuple[str, float]]:
    """Encode, measure, and score every sequence; ``(seq_id, score)`` in input order."""
    T = canonical_T or ae.cfg.T
    out = []
    for seq in sequences:
        try:
            z = encode_latent(ae, resample_sequence(seq, T))
            out.append((seq.seq_id, float(score_from_metric(cal, performance_metric(gmm, z)))))
        except MQAError as exc:
            raise type(exc)(f"sequence {seq.seq_id!r}: {exc}") from exc
    return out


def format_label_csv(labels: Sequence[tuple[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sequence_id", "score"])
    for seq_id, score in labels:
        writer.writerow([seq_id, f"{score:.6f}"])
    return buf.getvalue()


def write_label_file(labels: Sequence[tuple[str, float]], path) -> Path:
    path = Path(path)
    path.write_text(format_label_csv(labels))
    return path


def read_label_file(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"sequence_id", "score"} - set(reader.fieldnames):
            raise DataError(f"{path}: label file needs a 'sequence_id,score' header")
        return {row["sequence_id"]: float(row["score"]) for row in reader}


@dataclass
class SeparationReport:
    exercise: str
    within_subject: float
    between_subject: float | None
    fold_values: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "exercise": self.exercise,
            "within_subject": self.within_subject,
            "between_subject": self.between_subject,
            "between_subject_folds": self.fold_values,
        }


def subject_folds(subjects: Sequence[str], k: int) -> list[list[str]]:
    unique = sorted(set(subjects))
    k = max(1, min(k, len(unique)))
    return [unique[i::k] for i in range(k)]


def separation_report(
    exercise: str, sequences: Sequence[SkeletalSequence], cfg: ScoreGenConfig, seed: int = 0,
    model: ScoreModel | None = None,
) -> SeparationReport:
    """Within-subject SD on the full fit; between-subject SD averaged over subject-grouped folds.

    Each fold fits on the remaining subjects and measures SD on the held-out
    subjects' correct vs incorrect repetitions.
    """
    model = model or fit_score_model(sequences, cfg, seed)
    correct = [s for s in sequences if s.label == "correct"]
    incorrect = [s for s in sequences if s.label == "incorrect"]
    if not incorrect:
        raise DataError(f"exercise {exercise!r} has no incorrect repetitions to separate")
    within = separation_degree(sequence_metrics(model, correct), sequence_metrics(model, incorrect))
    folds = []
    if cfg.sd_folds > 1 and len({s.subject for s in sequences}) > 1:
        for i, held in enumerate(subject_folds([s.subject for s in sequences], cfg.sd_folds)):
            train = [s for s in sequences if s.subject not in held]
            test_c = [s for s in correct if s.subject in held]
            test_i = [s for s in incorrect if s.subject in held]
            if not test_c or not test_i or not any(s.label == "correct" for s in train):
                continue
            fold_model = fit_score_model(train, cfg, seed=seed + 1 + i)
            folds.append(separation_degree(sequence_metrics(fold_model, test_c), sequence_metrics(fold_model, test_i)))
    between = float(np.mean(folds)) if folds else None
    return SeparationReport(exercise, within, between, folds)
