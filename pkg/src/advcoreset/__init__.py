"""Adversarial coreset selection for efficient robust training.

Subpackages: model (dense classifier kernel), attacks (inner maximization),
features (per-unit adversarial gradients), solvers (greedy coreset
selection), trainer (warm-start training loop), verifier (convergence-bound
checks), data/config/cli (I/O surface).
"""

from .attacks import AdvBatch, AttackConfig
from .features import GradientFeatures, ObjectiveKind
from .model import Dataset, ForwardCache, ModelParams
from .solvers import Coreset, SolverConfig
from .trainer import MetricsRecord, TrainConfig, TrainState
from .verifier import BoundReport, GammaTrace

__all__ = [
    "AdvBatch",
    "AttackConfig",
    "BoundReport",
    "Coreset",
    "Dataset",
    "ForwardCache",
    "GammaTrace",
    "GradientFeatures",
    "MetricsRecord",
    "ModelParams",
    "ObjectiveKind",
    "SolverConfig",
    "TrainConfig",
    "TrainState",
]

__version__ = "0.1.0"
