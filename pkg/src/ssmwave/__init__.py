"""Stable state-space sequence models with multi-scale waveform generation."""

from .hippo import HippoSpec, build_hippo, dplr, nplr_decompose, verify_decomposition
from .model import GenState, ModelConfig, MultiScaleModel, PoolConfig, build_model
from .sampling import GenSession, generate, rejection_filter, sequence_loglik
from .ssm import DiscreteSsm, DivergenceError, SsmParams
from .tensor import NonFiniteError, Rng, Tape, Tensor, categorical_sample, softmax
from .training import (QuantSpec, TrainConfig, Trainer, evaluate_nll, grad_check,
                       make_synthetic, nll_bits)

__version__ = "0.1.0"

__all__ = [
    "HippoSpec", "build_hippo", "dplr", "nplr_decompose", "verify_decomposition",
    "GenState", "ModelConfig", "MultiScaleModel", "PoolConfig", "build_model",
    "GenSession", "generate", "rejection_filter", "sequence_loglik",
    "DiscreteSsm", "DivergenceError", "SsmParams",
    "NonFiniteError", "Rng", "Tape", "Tensor", "categorical_sample", "softmax",
    "QuantSpec", "TrainConfig", "Trainer", "evaluate_nll", "grad_check",
    "make_synthetic", "nll_bits",
    "__version__",
]
