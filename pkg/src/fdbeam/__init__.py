"""Learned pilots, vector-quantized channel feedback, and hybrid beamforming
for FDD massive MIMO-OFDM, with classical baselines and a benchmark harness.
"""

from .config import (
    ConfigError,
    SystemConfig,
    dbm_to_mw,
    feedback_bits,
    mw_to_dbm,
    noise_power_from_psd,
    validate,
)
from .channel import ClusterParams, generate_clustered_channel, generate_dataset, load_dataset, save_dataset
from .estimator import HybridBeamformingEstimator
from .gnn import HybridBeamformer, HybridCombiner
from .objective import RateReport, spectral_efficiency, total_loss
from .trainer import JointPipeline, evaluate, evaluate_baseline, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "SystemConfig",
    "validate",
    "noise_power_from_psd",
    "feedback_bits",
    "dbm_to_mw",
    "mw_to_dbm",
    "ClusterParams",
    "generate_clustered_channel",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "HybridBeamformingEstimator",
    "HybridBeamformer",
    "HybridCombiner",
    "RateReport",
    "spectral_efficiency",
    "total_loss",
    "JointPipeline",
    "train",
    "evaluate",
    "evaluate_baseline",
    "__version__",
]
