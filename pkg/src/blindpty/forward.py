"""Position-dependent ptychographic forward operator and measurement simulation.

Conventions
-----------
* Scan positions are ``(K, 2)`` float arrays of ``(dy, dx)`` in object pixels.
  Position ``r`` places the probe center on object pixel ``r``.
* The object (H x H) is embedded in free space of size ``N = H + Hp`` and the
  shift operator is periodic with period ``N``.
* Detector patterns use the centered layout (zero frequency at ``Hp // 2``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .field import FieldSizeError, fft2, ifft2, pad_embed
from .optics import Probe

__all__ = [
    "Geometry",
    "NoiseSpec",
    "MeasurementSet",
    "round_positions",
    "translate",
    "shift",
    "forward_amplitude",
    "forward_intensity",
    "sample_positions",
    "simulate_measurements",
    "measurement_snr_db",
    "sigma_for_snr",
]


def round_positions(r):
    """Nearest integer, ties toward +inf."""
    return np.floor(np.asarray(r, dtype=float) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class Geometry:
    """Array sizes and offsets shared by the forward model and its adjoints."""

    object_size: int
    probe_size: int

    def __post_init__(self):
        if self.object_size < 1 or self.probe_size < 1:
            raise FieldSizeError("sizes must be positive")

    @property
    def padded_size(self) -> int:
        return self.object_size + self.probe_size

    @property
    def object_origin(self) -> int:
        return (self.padded_size - self.object_size) // 2

    @property
    def crop_origin(self) -> int:
        return (self.padded_size - self.probe_size) // 2

    @property
    def probe_center(self) -> int:
        return self.probe_size // 2

    def translation(self, r):
        """Circular translation ``t`` that puts the probe center on object pixel ``r``."""
        return self.crop_origin + self.probe_center - self.object_origin - np.asarray(r, dtype=float)

    def window_start(self, r_int):
        """First padded index of the probe window for integer positions."""
        return self.object_origin - self.probe_center + np.asarray(r_int)

    def frequencies(self):
        f = sfft.fftfreq(self.padded_size)
        return f[:, None], f[None, :]

    def ramp(self, r):
        """DFT phase ramp(s) realizing the translation for position(s) ``r``.

        ``r`` may be ``(2,)`` or ``(K, 2)``; returns ``(N, N)`` or ``(K, N, N)``.
        """
        r = np.asarray(r, dtype=float)
        t = self.translation(r)
        fy, fx = sfft.fftfreq(self.padded_size), sfft.fftfreq(self.padded_size)
        ey = np.exp(-2j * np.pi * fy * t[..., 0, None])
        ex = np.exp(-2j * np.pi * fx * t[..., 1, None])
        return ey[..., :, None] * ex[..., None, :]

    def window_indices(self, r_int):
        """Row and column index arrays ``(K, Hp)`` of each probe window."""
        start = self.window_start(r_int)
        j = np.arange(self.probe_size)
        n = self.padded_size
        rows = (start[..., 0, None] + j) % n
        cols = (start[..., 1, None] + j) % n
        return rows, cols


def translate(padded, t):
    """Circular translation of a square field by ``t = (ty, tx)`` pixels through
    the DFT phase ramp ``exp(-2 pi i (fy ty + fx tx))``. Fractional ``t`` allowed."""
    padded = np.asarray(padded)
    n0, n1 = padded.shape
    if n0 != n1:
        raise FieldSizeError("shift requires a square field")
    fy = sfft.fftfreq(n0)[:, None]
    fx = sfft.fftfreq(n1)[None, :]
    ramp = np.exp(-2j * np.pi * (fy * t[0] + fx * t[1]))
    return ifft2(fft2(padded) * ramp)


def shift(padded, r, object_size: int, probe_size: int | None = None, rounding: bool = True):
    """Shift operator: translate the padded object so the probe center sees pixel ``r``.

    Parameters
    ----------
    padded : ndarray (N, N)
    r : (dy, dx)
    object_size : int
    probe_size : int, optional
        Defaults to ``N - object_size``.
    rounding : bool
        Round ``r`` to the nearest integer first (as in forward evaluation).
    """
    n = np.asarray(padded).shape[0]
    probe_size = n - object_size if probe_size is None else probe_size
    geom = Geometry(object_size, probe_size)
    if geom.padded_size != n:
        raise FieldSizeError("padded size must equal object size + probe size")
    r = np.asarray(r, dtype=float)
    if rounding:
        r = round_positions(r).astype(float)
    return translate(padded, geom.translation(r))


def _detector(exit_wave):
    return sfft.fftshift(fft2(exit_wave), axes=(-2, -1))


def forward_amplitude(r, x, probe, rounding: bool = True):
    """Far-field amplitude(s) ``F(p * Crop(S(r, Pad(x))))``.

    ``r`` is ``(2,)`` or ``(K, 2)``; returns ``(Hp, Hp)`` or ``(K, Hp, Hp)``.
    With ``rounding=True`` positions are rounded and the window is extracted by
    exact circular indexing; otherwise the fractional phase-ramp shift is used.
    """
    p = probe.field if isinstance(probe, Probe) else np.asarray(probe)
    x = np.asarray(x)
    h, hp = x.shape[0], p.shape[0]
    if x.shape != (h, h) or p.shape != (hp, hp):
        raise FieldSizeError("object and probe must be square")
    geom = Geometry(h, hp)
    r = np.asarray(r, dtype=float)
    single = r.ndim == 1
    rr = np.atleast_2d(r)
    padded = pad_embed(x, geom.padded_size)
    if rounding:
        rows, cols = geom.window_indices(round_positions(rr))
        crops = padded[rows[:, :, None], cols[:, None, :]]
    else:
        spec = fft2(padded)
        c0 = geom.crop_origin
        shifted = ifft2(spec[None] * geom.ramp(rr))
        crops = shifted[:, c0:c0 + hp, c0:c0 + hp]
    amp = _detector(p * crops)
    return amp[0] if single else amp


def forward_intensity(r, x, probe, rounding: bool = True):
    return np.abs(forward_amplitude(r, x, probe, rounding)) ** 2


def sample_positions(K: int, H: int, seed: int = 0, W: int | None = None):
    """I.i.d. uniform positions on ``[0, H) x [0, W)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    W = H if W is None else W
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0.0, H, K), rng.uniform(0.0, W, K)])


@dataclass(frozen=True)
class NoiseSpec:
    """``kind='gaussian'`` with standard deviation ``sigma`` or ``kind='poisson'``
    with photon count ``n_phot`` (the probe must be scaled accordingly).

    The default ``sigma`` corresponds to a noise variance of 0.005.
    """

    kind: str = "gaussian"
    sigma: float = float(np.sqrt(0.005))
    n_phot: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def to_dict(self):
        return {"kind": self.kind, "sigma": self.sigma, "n_phot": self.n_phot}


@dataclass
class MeasurementSet:
    """Diffraction patterns with noise descriptor and detector mask.

    ``patterns`` has shape ``(K, Hp, Hp)``; masked pixels (``detector_mask``
    False) are stored but excluded from likelihoods.
    """

    patterns: np.ndarray
    noise: NoiseSpec
    detector_mask: np.ndarray
    truth: np.ndarray | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.patterns.shape[0]

    @property
    def pattern_size(self) -> int:
        return self.patterns.shape[-1]


def simulate_measurements(x, probe: Probe, positions, noise: NoiseSpec,
                          detector_mask=None, seed: int = 0) -> MeasurementSet:
    """Simulate ``y_k = |A(r_k, x)|^2`` plus Gaussian or Poisson noise.

    Measurement ``k`` draws from its own stream ``default_rng(seed + k)``.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    hp = probe.size
    if noise.kind == "gaussian" and noise.sigma < 0:
        raise ValueError("sigma must be non-negative")
    if noise.kind == "poisson" and probe.photon_scale is None:
        raise ValueError("Poisson noise requires a photon-scaled probe (scale_probe_photons)")
    clean = forward_intensity(positions, x, probe)
    patterns = np.empty_like(clean)
    for k in range(clean.shape[0]):
        rng = np.random.default_rng(seed + k)
        if noise.kind == "gaussian":
            if noise.sigma == 0:
                patterns[k] = clean[k]
            else:
                patterns[k] = clean[k] + noise.sigma * rng.standard_normal(clean[k].shape)
        else:
            patterns[k] = rng.poisson(clean[k]).astype(float)
    if detector_mask is None:
        detector_mask = np.ones((hp, hp), dtype=bool)
    return MeasurementSet(patterns=patterns, noise=noise, detector_mask=np.asarray(detector_mask, bool),
                          truth=positions.copy(), seed=seed)


def measurement_snr_db(clean, sigma: float) -> float:
    """Measurement SNR: mean signal power over noise power, in dB."""
    return float(10 * np.log10(np.mean(np.asarray(clean) ** 2) / sigma ** 2))


def sigma_for_snr(clean, snr_db: float) -> float:
    """Gaussian noise level giving the requested :func:`measurement_snr_db`."""
    return float(np.sqrt(np.mean(np.asarray(clean) ** 2) / 10 ** (snr_db / 10)))
