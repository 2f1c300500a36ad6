"""Movement-quality label generation: denoising autoencoder, GMM exercise model, scoring."""

from mqa.scoregen.autoencoder import (
    Autoencoder, AutoencoderConfig, encode_latent, reconstruction_error, train_denoising_autoencoder,
)
from mqa.scoregen.gmm import ExerciseModel, fit_gmm_em, performance_metric, select_by_bic
from mqa.scoregen.pipeline import (
    ScoreGenConfig, ScoreModel, SeparationReport, fit_score_model, generate_labels, read_label_file,
    separation_report, write_label_file,
)
from mqa.scoregen.scoring import (
    ScoringCalibration, calibrate_scoring, normalized_mean_difference, score_from_metric, separation_degree,
)

__all__ = [
    "Autoencoder", "AutoencoderConfig", "ExerciseModel", "ScoreGenConfig", "ScoreModel", "ScoringCalibration",
    "SeparationReport", "calibrate_scoring", "encode_latent", "fit_gmm_em", "fit_score_model", "generate_labels",
    "normalized_mean_difference", "performance_metric", "read_label_file", "reconstruction_error",
    "score_from_metric", "select_by_bic", "separation_degree", "separation_report",
    "train_denoising_autoencoder", "write_label_file",
]
