"""Differentially private empirical risk minimization for linear and kernel classifiers."""

from dperm.erm import (
    Dataset,
    Example,
    PrivacyParams,
    TrainedModel,
    compute_slack,
    predict,
    predict_labels,
    train,
    train_nonprivate,
    train_objective_perturbed,
    train_output_perturbed,
)
from dperm.errors import ConvergenceError, PreconditionError
from dperm.kernel import RandomFeatureMap, sample_gaussian_features, train_kernel_private
from dperm.losses import LossSpec
from dperm.noise import NoiseParams, sample_noise
from dperm.tuning import TuningConfig, tune

__all__ = [
    "ConvergenceError",
    "Dataset",
    "Example",
    "LossSpec",
    "NoiseParams",
    "PreconditionError",
    "PrivacyParams",
    "RandomFeatureMap",
    "TrainedModel",
    "TuningConfig",
    "compute_slack",
    "predict",
    "predict_labels",
    "sample_gaussian_features",
    "sample_noise",
    "train",
    "train_kernel_private",
    "train_nonprivate",
    "train_objective_perturbed",
    "train_output_perturbed",
    "tune",
]
