"""Adam, learning-rate schedules and Gaussian entropies."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_step", "Adam", "cosine_lr", "entropy_gaussian"]


@dataclass
class AdamState:
    """Moment accumulators of one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        # complex parameters are optimized as (re, im) pairs
        shape = np.shape(params) + ((2,) if np.iscomplexobj(params) else ())
        return cls(np.zeros(shape), np.zeros(shape), **kw)


def _as_float(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return np.stack([a.real, a.imag], axis=-1)
    return a.astype(float)


def adam_step(state: AdamState, params, grad, lr: float):
    """One bias-corrected Adam update; returns the new parameters.

    ``state`` is updated in place. Complex ``params``/``grad`` are treated as
    independent real and imaginary parts.
    """
    g = _as_float(grad)
    if g.shape != state.m.shape:
        raise ValueError(f"gradient shape {np.shape(grad)} does not match optimizer state")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1 - b1) * g
    state.v = b2 * state.v + (1 - b2) * g * g
    mhat = state.m / (1 - b1 ** state.step)
    vhat = state.v / (1 - b2 ** state.step)
    upd = lr * mhat / (np.sqrt(vhat) + state.eps)
    if np.iscomplexobj(params):
        return params - (upd[..., 0] + 1j * upd[..., 1])
    return params - upd


@dataclass
class Adam:
    """Adam over a dict of named parameter arrays."""

    params: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, p in self.params.items():
            self.states[k] = AdamState.zeros_like(p, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def step(self, grads: dict, lrs: dict):
        for k, g in grads.items():
            self.params[k] = adam_step(self.states[k], self.params[k], g, lrs[k])
        return self.params


def cosine_lr(step, start_step: int = 4000, end_step: int = 6000, lr_hi: float = 0.1, lr_lo: float = 0.001) -> float:
    """Falling half-cosine from ``lr_hi`` to ``lr_lo`` between two steps; flat outside."""
    if start_step >= end_step:
        raise ValueError("start_step must be smaller than end_step")
    if step <= start_step:
        return lr_hi
    if step >= end_step:
        return lr_lo
    frac = (step - start_step) / (end_step - start_step)
    return lr_lo + 0.5 * (lr_hi - lr_lo) * (1 + np.cos(np.pi * frac))


def entropy_gaussian(log_sigma) -> float:
    """Entropy of isotropic 2-D Gaussians, one per entry of ``log_sigma``.

    Each entry contributes ``log(2 pi e sigma^2)``; this covers a complex
    pixel (re/im sharing sigma) and a 2-D scan position alike.
    """
    ls = np.asarray(log_sigma, dtype=float)
    return float(np.sum(np.log(2 * np.pi * np.e) + 2 * ls))
