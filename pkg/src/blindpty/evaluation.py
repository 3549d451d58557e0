"""Registration, image and position metrics, loss landscapes, uncertainty maps."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .forward import forward_intensity, round_positions

__all__ = [
    "MetricReport",
    "REGISTRATION_RANGE",
    "register",
    "apsnr",
    "assim",
    "crms",
    "pos_correct",
    "evaluate",
    "landscape_scan",
    "local_minima",
    "landscape_to_rgb",
    "render_landscape",
    "population_std",
]

REGISTRATION_RANGE = 20
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    apsnr: float
    assim: float
    crms: float
    pos_correct: int | None
    applied_shift: tuple
    K: int | None = None

    @property
    def pos_correct_pct(self):
        if self.pos_correct is None or not self.K:
            return None
        return 100.0 * self.pos_correct / self.K

    def to_dict(self):
        d = asdict(self)
        d["applied_shift"] = [int(s) for s in self.applied_shift]
        d["pos_correct_pct"] = self.pos_correct_pct
        return d

    def to_json(self) -> str:
        # +inf aPSNR is written as the string "inf" to stay valid JSON
        d = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in self.to_dict().items()}
        return json.dumps(d, indent=2, sort_keys=True)

    def write_json(self, path):
        with open(os.fspath(path), "w") as fh:
            fh.write(self.to_json() + "\n")


def _clipped_mag(x):
    return np.minimum(np.abs(x), 1.0)


def register(x_hat, x, r_hat=None, max_shift: int = REGISTRATION_RANGE):
    """Align ``x_hat`` to ``x`` by the best circular integer shift.

    Every shift in ``[-max_shift, max_shift]^2`` is tried; the one minimizing
    the mean squared error between the clipped magnitudes of the shifted
    ``x_hat`` and ``|x|`` wins (ties go to the smallest shift). ``r_hat`` is
    translated by the same shift.

    Returns
    -------
    x_reg, r_reg, shift
    """
    x_hat = np.asarray(x_hat)
    x = np.asarray(x)
    if x_hat.shape != x.shape:
        raise ValueError("x_hat and x must have the same shape")
    a = _clipped_mag(x_hat)
    b = np.abs(x)
    best, best_key = None, None
    for dy in range(-max_shift, max_shift + 1):
        ay = np.roll(a, dy, axis=0)
        for dx in range(-max_shift, max_shift + 1):
            err = float(np.mean((np.roll(ay, dx, axis=1) - b) ** 2))
            key = (err, dy * dy + dx * dx, dy, dx)
            if best_key is None or key < best_key:
                best_key, best = key, (dy, dx)
    shift = best
    x_reg = np.roll(x_hat, shift, axis=(0, 1))
    r_reg = None
    if r_hat is not None:
        r_reg = np.asarray(r_hat, dtype=float) + np.asarray(shift, dtype=float)
    return x_reg, r_reg, shift


def apsnr(x_hat, x) -> float:
    """PSNR (peak 1) between clipped estimated magnitudes and true magnitudes."""
    mse = float(np.mean((_clipped_mag(x_hat) - np.abs(x)) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gauss(img):
    return ndimage.gaussian_filter(img, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")


def assim(x_hat, x) -> float:
    """Mean SSIM of clipped estimated vs. true magnitudes.

    Gaussian 11x11 window (std 1.5), ``k1 = 0.01``, ``k2 = 0.03``, data range
    1, population covariances; a 5-pixel border is excluded from the mean.
    """
    a = _clipped_mag(x_hat).astype(float)
    b = np.abs(x).astype(float)
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    ma, mb = _gauss(a), _gauss(b)
    vaa = _gauss(a * a) - ma * ma
    vbb = _gauss(b * b) - mb * mb
    vab = _gauss(a * b) - ma * mb
    s = ((2 * ma * mb + c1) * (2 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2))
    pad = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    return float(np.mean(s[pad:-pad, pad:-pad]))


def crms(x_hat, x) -> float:
    """Scale- and phase-corrected normalized squared error.

    ``sum |x - g x_hat|^2 / sum |x|^2`` with ``g = sum x conj(x_hat) / sum |x_hat|^2``.
    """
    x_hat = np.asarray(x_hat)
    x = np.asarray(x)
    nx = float(np.sum(np.abs(x) ** 2))
    if nx == 0:
        raise ValueError("cRMS undefined for an all-zero ground truth")
    nh = float(np.sum(np.abs(x_hat) ** 2))
    g = np.sum(x * np.conj(x_hat)) / nh if nh > 0 else 0.0
    return float(np.sum(np.abs(x - g * x_hat) ** 2) / nx)


def pos_correct(r_hat, r_true) -> int:
    """Number of positions whose rounded error lies within the 3x3-pixel box."""
    r_hat = np.asarray(r_hat, dtype=float)
    r_true = np.asarray(r_true, dtype=float)
    if r_hat.shape != r_true.shape:
        raise ValueError("position arrays must have the same shape")
    d = np.abs(round_positions(r_hat - r_true))
    return int(np.sum(np.all(d <= 1, axis=-1)))


def evaluate(x_hat, x, r_hat=None, r_true=None, max_shift: int = REGISTRATION_RANGE) -> MetricReport:
    """Register, then compute all metrics."""
    x_reg, r_reg, shift = register(x_hat, x, r_hat, max_shift)
    pc, K = None, None
    if r_hat is not None and r_true is not None:
        pc, K = pos_correct(r_reg, r_true), int(np.shape(r_true)[0])
    return MetricReport(apsnr=apsnr(x_reg, x), assim=assim(x_reg, x), crms=crms(x_reg, x),
                        pos_correct=pc, applied_shift=tuple(int(s) for s in shift), K=K)


def landscape_scan(x, probe, r_true, grid=None):
    """Position loss landscape around the true positions.

    ``loss(dy, dx) = sum_k || |A(r_k, x)|^2 - |A(r_k + (dy, dx), x)|^2 ||^2``
    over noiseless intensities.

    Parameters
    ----------
    x : complex ndarray (H, H)
    probe : Probe or ndarray
    r_true : ndarray (2,) or (K, 2)
    grid : int or (offsets_y, offsets_x)
        An int ``R`` scans integer offsets ``-R..R`` on both axes.

    Returns
    -------
    ndarray (len(offsets_y), len(offsets_x))
    """
    if grid is None:
        grid = 10
    if np.isscalar(grid):
        oy = ox = np.arange(-int(grid), int(grid) + 1)
    else:
        oy, ox = (np.asarray(g, dtype=float) for g in grid)
    r = np.atleast_2d(np.asarray(r_true, dtype=float))
    ref = forward_intensity(r, x, probe)
    out = np.empty((len(oy), len(ox)))
    for i, dy in enumerate(oy):
        for j, dx in enumerate(ox):
            inten = forward_intensity(r + np.array([dy, dx], dtype=float), x, probe)
            out[i, j] = np.sum((ref - inten) ** 2)
    return out


def local_minima(landscape, threshold=None):
    """Indices of strict 8-neighborhood local minima (optionally below ``threshold``)."""
    L = np.asarray(landscape, dtype=float)
    padded = np.pad(L, 1, mode="constant", constant_values=np.inf)
    is_min = np.ones(L.shape, dtype=bool)
    h, w = L.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            is_min &= L < padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    if threshold is not None:
        is_min &= L < threshold
    return np.argwhere(is_min)


def landscape_to_rgb(landscape):
    """Grayscale heat map, linear from 0 (black) to the maximum (white)."""
    L = np.asarray(landscape, dtype=float)
    top = float(L.max())
    g = L / top if top > 0 else np.zeros_like(L)
    g = np.clip(np.round(g * 255.0), 0, 255).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=-1)


def render_landscape(landscape, path):
    from PIL import Image

    Image.fromarray(landscape_to_rgb(landscape), mode="RGB").save(os.fspath(path), format="PNG")


def population_std(runs):
    """Per-pixel sample standard deviation (ddof 1) across registered complex runs.

    The real and imaginary variances are averaged before the square root.
    """
    runs = np.asarray(runs)
    if runs.ndim < 3 or runs.shape[0] < 2:
        raise ValueError("population_std needs at least two runs")
    v = (np.var(runs.real, axis=0, ddof=1) + np.var(runs.imag, axis=0, ddof=1)) / 2.0
    return np.sqrt(v)
