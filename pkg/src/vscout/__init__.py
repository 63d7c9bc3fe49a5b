"""VSCOUT: retrospective anomaly detection in high-dimensional process data.

The package trains an ARD variational autoencoder, screens the relevant latent
space with an outlier ensemble and PELT changepoints, refines the model on the
retained inliers and labels observations by a 2-of-4 consensus rule.
"""

__version__ = "0.1.0"

from .ardvae import ARDVAE, LatentSummary, TrainConfig, VaeState
from .changepoint import PeltConfig, Segmentation, pelt_segment
from .detectors import EnsembleConfig, LatentEnsemble
from .metrics import MetricsReport, auroc, score_labels
from .pipeline import VSCOUT, PipelineConfig, VscoutResult, calibrate_alphas, run_vscout
from .simgen import ScenarioSpec, generate

__all__ = [
    "ARDVAE",
    "VSCOUT",
    "EnsembleConfig",
    "LatentEnsemble",
    "LatentSummary",
    "MetricsReport",
    "PeltConfig",
    "PipelineConfig",
    "ScenarioSpec",
    "Segmentation",
    "TrainConfig",
    "VaeState",
    "VscoutResult",
    "auroc",
    "calibrate_alphas",
    "generate",
    "pelt_segment",
    "run_vscout",
    "score_labels",
]
