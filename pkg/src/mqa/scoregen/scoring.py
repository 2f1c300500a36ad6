"""Mapping performance metrics to [0, 1] quality scores, and separation degree."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mqa.errors import CalibrationError, MetricError

DEFAULT_MEAN_SCORE = 0.95
MIDPOINT_STDS = 3.0


@dataclass(frozen=True)
class ScoringCalibration:
    alpha: float  # steepness, per NLL unit
    delta: float  # NLL that maps to 0.5

    def __post_init__(self):
        if not self.alpha > 0:
            raise CalibrationError(f"steepness must be positive, got {self.alpha}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "delta": self.delta}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoringCalibration":
        return cls(float(d["alpha"]), float(d["delta"]))


def calibrate_scoring(metrics_correct, mean_score: float = DEFAULT_MEAN_SCORE) -> ScoringCalibration:
    """Fit a logistic score curve to the correct repetitions' metrics.

    The midpoint sits three standard deviations above their mean, and the
    steepness makes the mean itself score ``mean_score``:
    ``alpha = logit(mean_score) / (3 * std)``.
    """
    m = np.asarray(metrics_correct, dtype=np.float64)
    if len(np.unique(m)) < 2:
        raise CalibrationError("correct-repetition metrics have zero variance; more (distinct) data is needed")
    if not 0.5 < mean_score < 1.0:
        raise CalibrationError(f"mean_score must lie in (0.5, 1), got {mean_score}")
    mu, sd = float(m.mean()), float(m.std())
    # the 1e-12 nudge keeps score(mean) from rounding to just below mean_score
    return ScoringCalibration(
        alpha=math.log(mean_score / (1.0 - mean_score)) / (MIDPOINT_STDS * sd) * (1.0 + 1e-12),
        delta=mu + MIDPOINT_STDS * sd,
    )


def score_from_metric(cal: ScoringCalibration, d):
    """``1 / (1 + exp(alpha * (d - delta)))``, evaluated without overflow."""
    z = cal.alpha * (np.asarray(d, dtype=np.float64) - cal.delta)
    out = np.where(z >= 0, np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))), 1.0 / (1.0 + np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


def normalized_mean_difference(values_correct, values_incorrect) -> float:
    """``(mean_inc - mean_cor) / (mean_inc + mean_cor)``; 0 when both means are 0."""
    mc = float(np.mean(values_correct))
    mi = float(np.mean(values_incorrect))
    denom = mi + mc
    return 0.0 if denom == 0.0 else (mi - mc) / denom


def separation_degree(metrics_correct, metrics_incorrect) -> float:
    """Normalised mean difference after shifting all metrics so the global minimum is 0.

    Invariant to adding a constant to, or positively rescaling, every metric.
    """
    cor = np.asarray(metrics_correct, dtype=np.float64).ravel()
    inc = np.asarray(metrics_incorrect, dtype=np.float64).ravel()
    if cor.size == 0 or inc.size == 0:
        raise MetricError("separation degree needs both correct and incorrect metrics")
    floor = min(cor.min(), inc.min())
    return normalized_mean_difference(cor - floor, inc - floor)
