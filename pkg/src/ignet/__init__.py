"""Inducing Gaussian process networks.

A neural feature map, inducing points living in feature space, an affine
pseudo-label head, the kernel bandwidth and the observation noise are
trained jointly on the batch marginal likelihood (Laplace-approximated for
probit classification).
"""

from .classification import OneVsAll, laplace_log_marginal, newton_mode, one_vs_all, predict_proba
from .datasets import Dataset, Normalizer, load_delimited, split
from .estimators import IGNClassifier, IGNRegressor
from .exceptions import (ContractError, DimensionError, IgnError, NotPositiveDefiniteError,
                         NumericalFailure, SchemaError, TrainingDiverged)
from .kernels import KernelSpec
from .metrics import ablate, accuracy, mean_variance_scatter, nearest_exemplars, rmse
from .model import IgnParameters, ModelConfig, init_parameters, initialize
from .persistence import ModelFile, load_model, save_model
from .regression import PredictiveDistribution, nll_loss, predict
from .trainer import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "ContractError", "Dataset", "DimensionError", "IGNClassifier", "IGNRegressor", "IgnError",
    "IgnParameters", "KernelSpec", "ModelConfig", "ModelFile", "Normalizer",
    "NotPositiveDefiniteError", "NumericalFailure", "OneVsAll", "PredictiveDistribution",
    "SchemaError", "TrainConfig", "TrainReport", "TrainingDiverged", "ablate", "accuracy",
    "init_parameters", "initialize", "laplace_log_marginal", "load_delimited", "load_model",
    "mean_variance_scatter", "nearest_exemplars", "newton_mode", "nll_loss", "one_vs_all",
    "predict", "predict_proba", "rmse", "save_model", "split", "train",
]
