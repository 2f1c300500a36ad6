"""Transformer scorer for windowed skeletal sequences, with four window embedders."""

from mqa.mqaformer.attention import (
    Encoder, EncoderBlock, MultiHeadAttention, add_positional, encoder_forward, sinusoidal_table,
)
from mqa.mqaformer.bodyparts import PART_NAMES, PRESETS, UPPER_BODY_PARTS, check_partition, default_parts, preset
from mqa.mqaformer.embedders import (
    KINDS, CNNEmbedder, EmbedderConfig, HFEAEmbedder, HFEEmbedder, MLPEmbedder, build_embedder,
)
from mqa.mqaformer.model import (
    AttentionRecord, ScorerConfig, ScorerModel, canonical_frames, predict_score, predict_scores,
)

__all__ = [
    "AttentionRecord", "CNNEmbedder", "EmbedderConfig", "Encoder", "EncoderBlock", "HFEAEmbedder", "HFEEmbedder",
    "KINDS", "MLPEmbedder", "MultiHeadAttention", "PART_NAMES", "PRESETS", "ScorerConfig", "ScorerModel",
    "UPPER_BODY_PARTS", "add_positional", "build_embedder", "canonical_frames", "check_partition", "default_parts",
    "encoder_forward", "predict_score", "predict_scores", "preset", "sinusoidal_table",
]
