"""Confidence scoring and covered-DER evaluation for speaker diarization."""
from .confidence import ConfidenceAnnotation, Method, score_conversation
from .core import Diarization, Embedding, EmbeddingTrack, Segment, TimeInterval, Timeline
from .metrics import DerBreakdown, ScoringConfig, compute_cder, compute_der, partition_by_confidence
from .spectral import SpectralParams, spectral_diarize

__all__ = [
    "ConfidenceAnnotation", "Method", "score_conversation",
    "Diarization", "Embedding", "EmbeddingTrack", "Segment", "TimeInterval", "Timeline",
    "DerBreakdown", "ScoringConfig", "compute_cder", "compute_der", "partition_by_confidence",
    "SpectralParams", "spectral_diarize",
]

__version__ = "0.1.0"
