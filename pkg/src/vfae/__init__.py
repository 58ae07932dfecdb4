"""Variational fair autoencoders in numpy: invariant representations via a
semi-supervised VAE with an MMD penalty."""

from .data import SyntheticSpec, TabularDataset, generate_synthetic, load_csv
from .evaluation import (
    EmbeddingSet,
    discrimination,
    discrimination_prob,
    evaluate_model,
    fit_linear_probe,
    fit_nonlinear_probe,
    pad_from_error,
    proxy_a_distance,
)
from .mmd import RffProjection, mmd_exact, mmd_penalty, mmd_rff
from .models import VFAE, Batch, ModelConfig, Objective, embed, predict, vfae_loss
from .training import TrainConfig, select_beta, train

__all__ = [
    "VFAE", "Batch", "EmbeddingSet", "ModelConfig", "Objective", "RffProjection", "SyntheticSpec",
    "TabularDataset", "TrainConfig", "discrimination", "discrimination_prob", "embed", "evaluate_model",
    "fit_linear_probe", "fit_nonlinear_probe", "generate_synthetic", "load_csv", "mmd_exact", "mmd_penalty",
    "mmd_rff", "pad_from_error", "predict", "proxy_a_distance", "select_beta", "train", "vfae_loss",
]
