"""Modular one-way causal attention: treatment effect estimation with a
transformer treatment/outcome pair, classical baselines, and a seeded
simulation benchmark."""

from .autodiff import Tensor, constant, no_grad, param
from .baselines import aipw_ate, fit_logistic, fit_ols, ipw_ate, x_learner
from .datasets import Dataset, load_dw, load_ihdp, load_real
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    MocaError,
    NumericError,
    SchemaError,
    UsageError,
)
from .harness import ExperimentConfig, run_benchmark, run_real
from .metrics import ReplicateRecord, rubin_pool, within_run_variance
from .model import EstimateResult, MocaConfig, MocaModel, fit, load_model, save_model
from .repnets import RepConfig, fit_dragonnet, fit_tarnet
from .simgen import SCENARIO_IDS, generate, mc_ate, true_ate

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "param",
    "constant",
    "no_grad",
    "Dataset",
    "load_ihdp",
    "load_dw",
    "load_real",
    "MocaConfig",
    "MocaModel",
    "EstimateResult",
    "fit",
    "save_model",
    "load_model",
    "RepConfig",
    "fit_tarnet",
    "fit_dragonnet",
    "ipw_ate",
    "aipw_ate",
    "x_learner",
    "fit_ols",
    "fit_logistic",
    "generate",
    "mc_ate",
    "true_ate",
    "SCENARIO_IDS",
    "rubin_pool",
    "within_run_variance",
    "ReplicateRecord",
    "ExperimentConfig",
    "run_benchmark",
    "run_real",
    "MocaError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "DomainError",
    "NumericError",
    "SchemaError",
    "UsageError",
]
