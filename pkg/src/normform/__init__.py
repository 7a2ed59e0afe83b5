"""Learn normal-form coordinates for bifurcating dynamical systems with autoencoders."""

from .analysis import (ValidationReport, amplitude_vs_parameter, dominant_period,
                       ensemble_mismatch, validation_report)
from .autoencoder import (LossReport, LossWeights, NfAutoencoder, NormalFormAutoencoder,
                          build_model, compute_losses, decode, encode, estimate_tau,
                          latent_derivative, train)
from .dataset import Batch, SamplingSpec, TrajectorySet, batches, build_set
from .exceptions import (ConfigError, DatasetConstructionError, IntegrationBlowupError,
                         NoOscillationError, NormformError, OptimizerError, RankDeficiencyError,
                         TrainingDivergenceError)
from .integrate import TimeGrid, Trajectory, integrate, integrate_many
from .normal_forms import NormalForm, NormalFormKind, eval_rhs, eval_rhs_scaled, simulate_ensemble
from .pod import (PODTransformer, PodBasis, ReducedSeries, SnapshotSet, make_unitary_gamma,
                  pod_decompose, reconstruct)
from .systems import make_system

__version__ = "0.1.0"

__all__ = [
    "Batch", "ConfigError", "DatasetConstructionError", "IntegrationBlowupError", "LossReport",
    "LossWeights", "NfAutoencoder", "NoOscillationError", "NormalForm", "NormalFormAutoencoder",
    "NormalFormKind", "NormformError", "OptimizerError", "PODTransformer", "PodBasis",
    "RankDeficiencyError", "ReducedSeries", "SamplingSpec", "SnapshotSet", "TimeGrid",
    "TrainingDivergenceError", "Trajectory", "TrajectorySet", "ValidationReport",
    "amplitude_vs_parameter", "batches", "build_model", "build_set", "compute_losses", "decode",
    "dominant_period", "encode", "ensemble_mismatch", "estimate_tau", "eval_rhs",
    "eval_rhs_scaled", "integrate", "integrate_many", "latent_derivative", "make_system",
    "make_unitary_gamma", "pod_decompose", "reconstruct", "simulate_ensemble", "train",
    "validation_report",
]
