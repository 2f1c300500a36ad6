"""Training, evaluation and multi-run experiments for the transformer scorer."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from mqa.augment import AugmentationSpec, augment_batch, default_policy
from mqa.errors import ConfigurationError, DataError, EvaluationError, MQAError
from mqa.mqaformer import KINDS, EmbedderConfig, ScorerConfig, ScorerModel, canonical_frames, predict_score
from mqa.numcore import Adam, backward, ops
from mqa.rng import derive_seed, make_rng
from mqa.skeldata import SkeletalSequence, group_by_exercise, normalized_clinical_score, split_dataset


class Labeled(NamedTuple):
    seq: SkeletalSequence
    score: float


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 8
    max_epochs: int = 2000
    patience: int = 100
    split_ratio: float = 0.8
    runs: int = 5
    seed: int = 0
    augment: bool = True
    augment_policy: list[AugmentationSpec] = field(default_factory=default_policy)
    embedder: str = "hfe_a"
    W: int = 40
    K: int = 256
    heads: int = 4
    blocks: int = 2
    canonical_T: int = 240
    ff_dim: int | None = None
    head_hidden: tuple[int, int] = (128, 32)
    K_part: int = 64
    hfe_attention_heads: int = 5
    hfe_channels: int = 32
    hfe_kernel: int = 3
    mlp_hidden: tuple[int, int] = (256, 256)
    cnn_channels: tuple[int, int] = (64, 64)
    cnn_kernels: tuple[int, int] = (5, 5)
    body_parts: dict[str, list[int]] | None = None
    target_mae: float | None = None  # also stop once validation MAE reaches this
    workers: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigurationError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.patience < 1 or self.runs < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("patience, runs, batch_size and max_epochs must all be >= 1")
        if self.embedder not in KINDS:
            raise ConfigurationError(f"unknown embedder {self.embedder!r}; expected one of {KINDS}")

    def scorer_config(self, D: int) -> ScorerConfig:
        emb = EmbedderConfig(
            kind=self.embedder, K=self.K, W=self.W, D=D, body_parts=self.body_parts,
            hfe_attention_heads=self.hfe_attention_heads, K_part=self.K_part, mlp_hidden=tuple(self.mlp_hidden),
            cnn_channels=tuple(self.cnn_channels), cnn_kernels=tuple(self.cnn_kernels),
            hfe_channels=self.hfe_channels, hfe_kernel=self.hfe_kernel,
        )
        return ScorerConfig(emb, canonical_T=self.canonical_T, heads=self.heads, blocks=self.blocks,
                            ff_dim=self.ff_dim, head_hidden=tuple(self.head_hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment_policy"] = [s.to_dict() for s in self.augment_policy]
        for key in ("head_hidden", "mlp_hidden", "cnn_channels", "cnn_kernels"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown training keys: {sorted(unknown)}")
        if "augment_policy" in d:
            d["augment_policy"] = [s if isinstance(s, AugmentationSpec) else AugmentationSpec.from_dict(s)
                                   for s in d["augment_policy"]]
        for key in ("head_hidden", "mlp_hidden", "cnn_channels", "cnn_kernels"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------

def attach_labels(sequences: Sequence[SkeletalSequence], labels: dict[str, float]) -> list[Labeled]:
    """Pair each sequence with its score from ``labels`` (keyed by ``seq_id``)."""
    out = []
    for seq in sequences:
        if seq.seq_id not in labels:
            raise DataError(f"sequence {seq.seq_id!r} has no quality score")
        out.append(Labeled(seq, float(labels[seq.seq_id])))
    return out


def clinical_labels(sequences: Sequence[SkeletalSequence]) -> list[Labeled]:
    """Labels from clinical scores (0..50 scale), as shipped with KIMORE."""
    out = []
    for seq in sequences:
        if seq.clinical_score is None:
            raise DataError(f"sequence {seq.seq_id!r} has no clinical score")
        out.append(Labeled(seq, normalized_clinical_score(seq.clinical_score)))
    return out


def _check_labeled(data: Sequence) -> list[Labeled]:
    out = []
    for item in data:
        seq, score = item
        if score is None or not 0.0 <= float(score) <= 1.0 or math.isnan(float(score)):
            raise DataError(f"sequence {seq.seq_id!r} needs a quality score in [0, 1], got {score}")
        out.append(Labeled(seq, float(score)))
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainingLog:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int = 0
    batch_seconds: list[float] = field(default_factory=list)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    @property
    def best_val_mae(self) -> float:
        return self.val_mae[self.best_epoch - 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_mae"])
        for row in zip(self.epochs, self.train_loss, self.val_loss, self.val_mae):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return buf.getvalue()


def predict_labeled(model: ScorerModel, data: Sequence[Labeled]) -> np.ndarray:
    """One forward pass per sequence, so a prediction never depends on its batch mates."""
    return np.array([predict_score(model, item.seq)[0] for item in data])


def mean_absolute_error(pred, target) -> float:
    # fsum keeps the result independent of element order
    return math.fsum(abs(p - t) for p, t in zip(np.asarray(pred).tolist(), np.asarray(target).tolist())) / len(pred)


def _bce(pred: np.ndarray, target: np.ndarray) -> float:
    p = np.clip(pred, ops.BCE_EPS, 1.0 - ops.BCE_EPS)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def train_scorer(
    cfg: TrainConfig, data: Sequence, validation: Sequence | None = None, seed: int | None = None,
) -> tuple[ScorerModel, TrainingLog]:
    """Fit a scorer with Adam on binary cross-entropy and early stopping.

    Without an explicit ``validation`` set, ``data`` is split by
    ``cfg.split_ratio``. The returned model carries the parameters of the
    epoch with the lowest validation loss.
    """
    seed = cfg.seed if seed is None else seed
    data = _check_labeled(data)
    if validation is None:
        split = split_dataset(data, cfg.split_ratio, seed)
        data, validation = split.train, split.validation
    validation = _check_labeled(validation)
    if not data or not validation:
        raise DataError("training and validation sets must both be non-empty")
    T = cfg.canonical_T
    frames = np.stack([canonical_frames(item.seq, T) for item in data])
    targets = np.array([item.score for item in data])
    val_targets = np.array([item.score for item in validation])

    model = ScorerModel(cfg.scorer_config(frames.shape[2]), make_rng(seed, 0))
    model.fit_normalization(frames)
    opt = Adam(model.parameters(), lr=cfg.lr)
    log = TrainingLog()
    best_loss, best_state, stale = math.inf, model.state_dict(), 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = make_rng(seed, 1, epoch).permutation(len(frames))
        losses = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            tic = time.perf_counter()
            idx = order[start : start + cfg.batch_size]
            batch = frames[idx]
            if cfg.augment and cfg.augment_policy:
                batch = augment_batch(batch, cfg.augment_policy, derive_seed(seed, 2, epoch, b), canonical_T=T)
            opt.zero_grad()
            pred, _ = model(batch)
            loss = ops.bce_loss(pred, targets[idx])
            backward(loss)
            opt.step()
            losses.append(loss.item())
            log.batch_seconds.append(time.perf_counter() - tic)
        val_pred = predict_labeled(model, validation)
        val_loss = _bce(val_pred, val_targets)
        val_mae = mean_absolute_error(val_pred, val_targets)
        log.epochs.append(epoch)
        log.train_loss.append(float(np.mean(losses)))
        log.val_loss.append(val_loss)
        log.val_mae.append(val_mae)
        if val_loss < best_loss:
            best_loss, best_state, stale = val_loss, model.state_dict(), 0
            log.best_epoch = epoch
            if cfg.target_mae is not None and val_mae <= cfg.target_mae:
                break
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return model, log


def evaluate_mae(model: ScorerModel, data: Sequence) -> float:
    """Mean absolute deviation between predicted and reference scores."""
    data = _check_labeled(data)
    if not data:
        raise EvaluationError("cannot evaluate on an empty set")
    return mean_absolute_error(predict_labeled(model, data), [item.score for item in data])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    run: int
    seed: int
    exercise: str
    mae: float | None
    best_epoch: int = 0
    epochs: int = 0
    error: str | None = None
    seconds_per_batch: float | None = None  # wall clock, kept out of the deterministic report


@dataclass
class EvalReport:
    embedder: str
    run_maes: list[float]
    mean_mae: float | None
    per_exercise: dict[str, dict]
    failures: list[dict] = field(default_factory=list)
    ms_per_batch: float | None = None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "embedder": self.embedder,
            "run_maes": self.run_maes,
            "mean_mae": self.mean_mae,
            "per_exercise": self.per_exercise,
            "failures": self.failures,
        }
        if include_timing:
            d["ms_per_batch"] = self.ms_per_batch
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["exercise", "run", "mae"])
        for ex, info in self.per_exercise.items():
            for run, mae in enumerate(info["run_maes"]):
                w.writerow([ex, run, "" if mae is None else f"{mae:.6f}"])
        w.writerow(["all", "mean", "" if self.mean_mae is None else f"{self.mean_mae:.6f}"])
        return buf.getvalue()


def _one_run(args) -> RunResult:
    cfg, data, exercise, run = args
    seed = cfg.seed + run
    try:
        split = split_dataset(data, cfg.split_ratio, seed)
        model, log = train_scorer(cfg, split.train, split.validation, seed=seed)
        mae = evaluate_mae(model, split.validation)
        spb = float(np.mean(log.batch_seconds)) if log.batch_seconds else None
        return RunResult(run, seed, exercise, mae, log.best_epoch, len(log.epochs), None, spb)
    except MQAError as exc:
        return RunResult(run, seed, exercise, None, error=f"{type(exc).__name__}: {exc}")


def run_experiment(cfg: TrainConfig, dataset: Sequence) -> EvalReport:
    """``cfg.runs`` seeded split/train/evaluate cycles per exercise.

    Run ``i`` uses seed ``cfg.seed + i`` for both the split and the weights.
    A failing run is recorded and the remaining runs continue.
    """
    data = _check_labeled(dataset)
    if not data:
        raise DataError("experiment dataset is empty")
    groups: dict[str, list[Labeled]] = {}
    for ex, seqs in group_by_exercise([item.seq for item in data]).items():
        ids = {s.seq_id for s in seqs}
        groups[ex] = [item for item in data if item.seq.seq_id in ids]
    jobs = [(cfg, items, ex, run) for ex, items in groups.items() for run in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(job) for job in jobs]

    per_exercise = {}
    for ex in groups:
        maes = [r.mae for r in results if r.exercise == ex]
        ok = [m for m in maes if m is not None]
        per_exercise[ex] = {"run_maes": maes, "mean_mae": float(np.mean(ok)) if ok else None}
    run_maes = []
    for run in range(cfg.runs):
        ok = [r.mae for r in results if r.run == run and r.mae is not None]
        if ok:
            run_maes.append(float(np.mean(ok)))
    timings = [r.seconds_per_batch for r in results if r.seconds_per_batch is not None]
    return EvalReport(
        embedder=cfg.embedder,
        run_maes=run_maes,
        mean_mae=float(np.mean(run_maes)) if run_maes else None,
        per_exercise=per_exercise,
        failures=[{"exercise": r.exercise, "run": r.run, "error": r.error} for r in results if r.error],
        ms_per_batch=1000.0 * float(np.mean(timings)) if timings else None,
    )


def run_ablation(cfg: TrainConfig, dataset: Sequence, kinds: Sequence[str] = KINDS) -> list[EvalReport]:
    """The same experiment once per embedder kind."""
    reports = []
    for kind in kinds:
        d = cfg.to_dict()
        d["embedder"] = kind
        reports.append(run_experiment(TrainConfig.from_dict(d), dataset))
    return reports


def ablation_csv(reports: Sequence[EvalReport], include_timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["embedder", "mean_mae"] + (["ms_per_batch"] if include_timing else []))
    for r in reports:
        row = [r.embedder, "" if r.mean_mae is None else f"{r.mean_mae:.6f}"]
        if include_timing:
            row.append("" if r.ms_per_batch is None else f"{r.ms_per_batch:.3f}")
        w.writerow(row)
    return buf.getvalue()
