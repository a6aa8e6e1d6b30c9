"""Confidence-gated model cascades for rubric scoring: statistics, analysis and a routing gateway."""

from .dataset import DecisionSet, ModelOutput, ScoringDecision, load_decisions, save_decisions
from .synth import ConfidenceProfile, SynthConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "ConfidenceProfile",
    "DecisionSet",
    "ModelOutput",
    "ScoringDecision",
    "SynthConfig",
    "generate_synthetic",
    "load_decisions",
    "save_decisions",
]
