"""Synthetic ground-truth transmission objects."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

__all__ = [
    "OpticalProfile",
    "DegenerateInputError",
    "transmission_from_profile",
    "generate_phantom",
    "rescale_weak_phase",
    "WEAK_PHASE_MAX",
]

WEAK_PHASE_MAX = 1e-3


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class OpticalProfile:
    """Refractive-index decrement ``delta`` and absorption ``beta`` maps."""

    delta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        if self.delta.shape != self.beta.shape or self.delta.ndim != 2:
            raise ValueError("delta and beta must be 2-D arrays of equal shape")
        if not (np.all(np.isfinite(self.delta)) and np.all(np.isfinite(self.beta))):
            raise ValueError("profile contains non-finite values")
        if np.any(self.beta < 0):
            raise ValueError("beta must be non-negative")

    @property
    def shape(self):
        return self.delta.shape


def transmission_from_profile(prof: OpticalProfile):
    """x = exp(i (n - 1)) with n = 1 - delta + i beta (unit wavenumber and thickness)."""
    n_minus_1 = -prof.delta + 1j * prof.beta
    return np.exp(1j * n_minus_1)


def _value_noise(rng, size, cell):
    coarse = rng.random((size // cell + 2, size // cell + 2))
    up = ndimage.zoom(coarse, cell, order=3, mode="nearest")
    return up[:size, :size]


def _texture(rng, size):
    """Piecewise-smooth map in [0, 1]: blobs, polygons, and multi-scale noise."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = np.zeros((size, size))
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.random(2) * size
        sy, sx = (0.08 + 0.25 * rng.random(2)) * size
        th = rng.random() * np.pi
        dy, dx = yy - cy, xx - cx
        u = (dy * np.cos(th) + dx * np.sin(th)) / sy
        v = (-dy * np.sin(th) + dx * np.cos(th)) / sx
        img += (0.3 + 0.7 * rng.random()) * np.exp(-0.5 * (u * u + v * v))
    for _ in range(rng.integers(2, 5)):
        # convex polygon as intersection of half-planes around a random center
        c = rng.random(2) * size
        rad = (0.1 + 0.2 * rng.random()) * size
        inside = np.ones((size, size), dtype=bool)
        n_sides = rng.integers(3, 7)
        phase0 = rng.random() * 2 * np.pi
        for k in range(n_sides):
            a = phase0 + 2 * np.pi * k / n_sides
            inside &= (yy - c[0]) * np.sin(a) + (xx - c[1]) * np.cos(a) <= rad
        img += (0.2 + 0.6 * rng.random()) * inside
    lo = max(2, size // 8)
    img += 0.6 * _value_noise(rng, size, lo) + 0.25 * _value_noise(rng, size, max(1, size // 32 or 1))
    img -= img.min()
    return img / img.max()


def generate_phantom(size: int, mode: str = "full", seed: int = 0) -> OpticalProfile:
    """Generate a seeded random optical profile.

    Parameters
    ----------
    size : int
        Side length in pixels (>= 8).
    mode : {"full", "phase_only", "weak_phase"}
        ``full`` yields absorption and phase; ``phase_only`` sets ``beta = 0``;
        ``weak_phase`` additionally rescales ``delta`` to ``[0, 1e-3]``.
    seed : int
    """
    if size < 8:
        raise ValueError("phantom size must be at least 8")
    if mode not in ("full", "phase_only", "weak_phase"):
        raise ValueError(f"unknown phantom mode {mode!r}")
    rng = np.random.default_rng(seed)
    phase_tex = _texture(rng, size)
    amp_tex = ndimage.gaussian_filter(_texture(rng, size), sigma=max(size / 64, 0.5))
    amp_tex = (amp_tex - amp_tex.min()) / max(np.ptp(amp_tex), 1e-12)
    # phase range 4*pi*s with s ~ Beta(3, 10)
    scale = rng.beta(3.0, 10.0)
    delta = 4 * np.pi * scale * phase_tex
    if mode == "full":
        # magnitudes in [m_lo, 1], m_lo in [0.3, 0.7]
        m_lo = 0.3 + 0.4 * rng.random()
        mag = m_lo + (1.0 - m_lo) * amp_tex
        beta = -np.log(mag)
        beta = np.maximum(beta, 0.0)
        return OpticalProfile(delta=delta, beta=beta)
    prof = OpticalProfile(delta=delta, beta=np.zeros_like(delta))
    if mode == "weak_phase":
        prof = rescale_weak_phase(prof, WEAK_PHASE_MAX)
    return prof


def rescale_weak_phase(prof: OpticalProfile, max_delta: float = WEAK_PHASE_MAX) -> OpticalProfile:
    """Affinely map ``delta`` onto ``[0, max_delta]``; ``beta`` is left unchanged."""
    lo, hi = prof.delta.min(), prof.delta.max()
    if hi <= lo:
        raise DegenerateInputError("cannot rescale a constant phase profile")
    delta = (prof.delta - lo) * (max_delta / (hi - lo))
    return replace(prof, delta=delta)
