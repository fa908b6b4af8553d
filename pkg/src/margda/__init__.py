"""Marginalized denoising for domain adaptation.

Closed-form linear denoisers learned under feature dropout, optionally
regularized toward domain invariance, plus joint denoiser/classifier
training via Sylvester equations and an experiment harness.
"""

from .classify import accuracy, dscm_classify, nn_classify, predict_linear
from .data import Dataset, build_scenario, load_dense, load_sparse, synth_shift
from .linalg import schur_decompose, solve_sylvester
from .marginalize import CorruptionLaw, expected_coupled_Q, expected_P, expected_Q
from .models import MODELS, FitResult, ModelSpec, fit_model

__version__ = "0.1.0"

__all__ = [
    "CorruptionLaw", "Dataset", "FitResult", "MODELS", "ModelSpec",
    "accuracy", "build_scenario", "dscm_classify", "expected_P", "expected_Q",
    "expected_coupled_Q", "fit_model", "load_dense", "load_sparse", "nn_classify",
    "predict_linear", "schur_decompose", "solve_sylvester", "synth_shift",
]
