"""Optimizers and reconstruction engines."""
from .engines import (
    DivergenceError,
    RunResult,
    ScoreBackendMissing,
    build_model,
    reconstruct,
    run_em,
    run_map,
    run_reddiff,
    run_vi,
    vi_loss_and_grads,
)
from .optim import Adam, AdamState, adam_step, cosine_lr, entropy_gaussian
from .state import ReconstructionConfig, VariationalState

__all__ = [
    "Adam",
    "AdamState",
    "DivergenceError",
    "ReconstructionConfig",
    "RunResult",
    "ScoreBackendMissing",
    "VariationalState",
    "adam_step",
    "build_model",
    "cosine_lr",
    "entropy_gaussian",
    "reconstruct",
    "run_em",
    "run_map",
    "run_reddiff",
    "run_vi",
    "vi_loss_and_grads",
]
