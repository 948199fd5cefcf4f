"""
Models package for the CDF toolkit.

This package contains the data models for audio features, network
descriptions, factor streams, corpora, evaluation results and run settings.
"""

from .audio import AudioBuffer, FeatureKind, FeatureMatrix, FrameConfig
from .network import LayerKind, LayerSpec, NetworkSpec, ParamStore, TrainConfig, TrainLog
from .factors import CascadeModelSet, FactorDims, FactorKind, FactorStream, Network, ReconModel, ReconReport
from .corpus import CorpusManifest, GenConfig, Templates, UtteranceRecord
from .evaluation import ConfusionMatrix, DVector, TrialCondition
from .config import RunConfig

__all__ = [
    # Audio
    "AudioBuffer",
    "FeatureKind",
    "FeatureMatrix",
    "FrameConfig",
    # Networks
    "LayerKind",
    "LayerSpec",
    "NetworkSpec",
    "ParamStore",
    "TrainConfig",
    "TrainLog",
    # Factors
    "CascadeModelSet",
    "FactorDims",
    "FactorKind",
    "FactorStream",
    "Network",
    "ReconModel",
    "ReconReport",
    # Corpus
    "CorpusManifest",
    "GenConfig",
    "Templates",
    "UtteranceRecord",
    # Evaluation
    "ConfusionMatrix",
    "DVector",
    "TrialCondition",
    # Configuration
    "RunConfig",
]
