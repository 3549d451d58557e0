"""Negative log-likelihoods and their exact gradients.

Both noise models reduce to a weighted least-squares misfit

    NLL(x, r) = sum_k sum_j w_kj (y_kj - |A(r_k, x)_j|^2)^2

with ``w = mask / (2 sigma^2)`` (Gaussian) or ``w = mask / (2 max(y, floor))``
(Gaussian approximation to Poisson). Constants are dropped.

Gradient convention: for a complex argument ``z`` the reported gradient is
``dL/dRe(z) + i dL/dIm(z)`` (twice the Wirtinger derivative w.r.t. conj(z)),
so a descent step on the real/imaginary stacking is ``z - lr * grad``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .field import extract_block
from .forward import Geometry, MeasurementSet, round_positions
from .optics import Probe

__all__ = [
    "LikelihoodSpec",
    "PtychoModel",
    "nll",
    "nll_gaussian",
    "nll_poisson",
    "grad_nll_x",
    "grad_nll_r",
    "fd_check",
]


@dataclass(frozen=True)
class LikelihoodSpec:
    """Noise model of the likelihood.

    Parameters
    ----------
    kind : {"gaussian", "poisson_approx"}
    sigma_eps : float
        Gaussian noise standard deviation (Gaussian only).
    detector_mask : ndarray of bool, optional
        False marks excluded detector pixels. ``None`` uses every pixel.
    clamp_floor : float
        Lower clamp of the measured counts in the Poisson weights.
    """

    kind: str = "gaussian"
    sigma_eps: float | None = None
    detector_mask: np.ndarray | None = None
    clamp_floor: float = 1.0

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.sigma_eps is None or self.sigma_eps <= 0:
                raise ValueError("gaussian likelihood requires sigma_eps > 0")
        elif self.kind == "poisson_approx":
            if self.clamp_floor < 1:
                raise ValueError("clamp_floor must be >= 1")
        else:
            raise ValueError(f"unknown likelihood kind {self.kind!r}")

    @classmethod
    def for_measurements(cls, meas: MeasurementSet, sigma_eps: float | None = None):
        """Match the likelihood to the simulated noise model."""
        if meas.noise.kind == "poisson":
            return cls(kind="poisson_approx", detector_mask=meas.detector_mask)
        sigma = sigma_eps if sigma_eps is not None else meas.noise.sigma
        return cls(kind="gaussian", sigma_eps=sigma, detector_mask=meas.detector_mask)

    def weights(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "gaussian":
            w = np.full(y.shape, 1.0 / (2.0 * self.sigma_eps ** 2))
        else:
            if np.any(y < 0):
                raise ValueError("Poisson counts must be non-negative")
            w = 1.0 / (2.0 * np.maximum(y, self.clamp_floor))
        if self.detector_mask is not None:
            w = w * np.asarray(self.detector_mask, dtype=bool)
        return w


def _patterns(y):
    return y.patterns if isinstance(y, MeasurementSet) else np.asarray(y, dtype=float)


class PtychoModel:
    """Fused forward model, misfit, and adjoint for one measurement set.

    Data are stored internally in the unshifted DFT layout so no per-pattern
    ``fftshift`` is needed. ``precision="single"`` runs the FFTs in complex64,
    which the reconstruction engines may use for speed.
    """

    def __init__(self, probe, patterns, spec: LikelihoodSpec, object_size: int,
                 precision: str = "double"):
        p = probe.field if isinstance(probe, Probe) else np.asarray(probe)
        y = _patterns(patterns)
        self.geom = Geometry(object_size, p.shape[0])
        self.spec = spec
        self.ctype = np.complex64 if precision == "single" else np.complex128
        self.rtype = np.float32 if precision == "single" else np.float64
        axes = (-2, -1)
        self.probe = p.astype(self.ctype)
        self._probe_conj = np.conj(self.probe)
        self.y = sfft.ifftshift(y, axes=axes).astype(self.rtype)
        self.w = sfft.ifftshift(spec.weights(y), axes=axes).astype(self.rtype)
        fy, fx = self.geom.frequencies()
        self._dy = (2j * np.pi * fy).astype(np.complex128)
        self._dx = (2j * np.pi * fx).astype(np.complex128)
        self._dyx = np.stack(np.broadcast_arrays(self._dy, self._dx))

    @property
    def K(self):
        return self.y.shape[0]

    def _fft(self, a):
        return sfft.fft2(a, axes=(-2, -1), norm="ortho")

    def _ifft(self, a):
        return sfft.ifft2(a, axes=(-2, -1), norm="ortho")

    def _gather_index(self, r):
        g = self.geom
        rows, cols = g.window_indices(round_positions(r))
        return rows[:, :, None] * g.padded_size + cols[:, None, :]

    def _crops(self, padded, r, rounding):
        g = self.geom
        hp = g.probe_size
        if rounding:
            idx = self._gather_index(r)
            return padded.ravel().take(idx), idx
        spec = sfft.fft2(padded, norm="ortho")
        ramps = g.ramp(r)
        c0 = g.crop_origin
        shifted = sfft.ifft2(spec[None] * ramps, axes=(-2, -1), norm="ortho")
        return shifted[:, c0:c0 + hp, c0:c0 + hp], (spec, ramps)

    def _pad(self, x):
        g = self.geom
        out = np.ones((g.padded_size, g.padded_size), dtype=self.ctype)
        o = g.object_origin
        h = g.object_size
        out[o:o + h, o:o + h] = x
        return out

    def evaluate(self, x, r, grad_x: bool = True, grad_r: bool = False,
                 rounding: bool = True, r_mode: str = "straight_through", per_pattern: bool = False):
        """Misfit value and requested gradients.

        Parameters
        ----------
        x : ndarray (H, H) complex
        r : ndarray (K, 2)
        grad_x, grad_r : bool
            Which gradients to return (``None`` in place of the others).
        rounding : bool
            Evaluate the forward model at rounded positions (the reported loss)
            or at the fractional positions (continuous operator).
        r_mode : {"straight_through", "continuous"}
            Position derivative of the continuous shift evaluated at the
            rounded position (cheap, matches the values actually used) or at
            the unrounded one. With ``rounding=False`` both coincide.
        per_pattern : bool
            Return the per-measurement losses instead of their sum.
        """
        g = self.geom
        hp = g.probe_size
        r = np.asarray(r, dtype=float).reshape(-1, 2)
        x = np.asarray(x)
        if x.shape != (g.object_size, g.object_size):
            raise ValueError(f"object must have shape {(g.object_size, g.object_size)}")
        padded = self._pad(x)
        crops, aux = self._crops(padded, r, rounding)
        crops *= self.probe
        a = self._fft(crops)
        res = a.real * a.real
        res += a.imag * a.imag
        np.subtract(self.y, res, out=res)
        wres = self.w * res
        k = res.shape[0]
        losses = np.einsum("kn,kn->k", wres.reshape(k, -1), res.reshape(k, -1)).astype(np.float64)
        loss = losses if per_pattern else float(np.sum(losses))
        if not (grad_x or grad_r):
            return loss, None, None
        wres *= -4.0
        a *= wres
        gcrop = self._ifft(a)
        gcrop *= self._probe_conj
        gx = gr = None
        if grad_x:
            gx = self._adjoint_x(gcrop, r, aux, rounding)
        if grad_r:
            gr = self._grad_r(padded, gcrop, r, aux, rounding, r_mode)
        return loss, gx, gr

    def _adjoint_x(self, gcrop, r, aux, rounding):
        g = self.geom
        n, hp, h = g.padded_size, g.probe_size, g.object_size
        if rounding:
            # transpose of the window gather: scatter-add onto the padded grid
            idx = aux.ravel()
            gf = gcrop.ravel()
            gpad = (np.bincount(idx, weights=gf.real, minlength=n * n)
                    + 1j * np.bincount(idx, weights=gf.imag, minlength=n * n)).reshape(n, n)
            return extract_block(gpad, (h, h)).copy()
        _, ramps = aux
        c0 = g.crop_origin
        embedded = np.zeros((gcrop.shape[0], n, n), dtype=np.complex128)
        embedded[:, c0:c0 + hp, c0:c0 + hp] = gcrop
        spec = np.sum(sfft.fft2(embedded, axes=(-2, -1), norm="ortho") * np.conj(ramps), axis=0)
        gpad = sfft.ifft2(spec, norm="ortho")
        return extract_block(gpad, (h, h)).copy()

    def _grad_r(self, padded, gcrop, r, aux, rounding, r_mode):
        g = self.geom
        hp = g.probe_size
        spec = sfft.fft2(padded.astype(np.complex128), norm="ortho")
        if rounding and r_mode == "straight_through":
            idx = aux
            n2 = g.padded_size ** 2
            both = sfft.ifft2(spec[None] * self._dyx, axes=(-2, -1), norm="ortho").astype(self.ctype)
            c = both.reshape(2, n2).take(idx, axis=1)
        else:
            if rounding:
                # continuous derivative at the unrounded position, applied to
                # the residual of the rounded forward evaluation
                ramps = g.ramp(r)
            else:
                ramps = aux[1]
            c0 = g.crop_origin
            sh = spec[None] * ramps
            c = np.stack([
                sfft.ifft2(sh * d, axes=(-2, -1), norm="ortho")[:, c0:c0 + hp, c0:c0 + hp]
                for d in (self._dy, self._dx)
            ])
        k = gcrop.shape[0]
        # Re(conj(g) c) summed per pattern, via the interleaved real view
        gf = np.ascontiguousarray(gcrop).view(gcrop.real.dtype).reshape(k, -1)
        cf = np.ascontiguousarray(c).view(c.real.dtype).reshape(2, k, -1)
        return np.einsum("kn,dkn->kd", gf, cf).astype(np.float64)

def _model(y, probe, spec, x):
    return PtychoModel(probe, y, spec, np.asarray(x).shape[0])


def nll(y, x, r, spec: LikelihoodSpec, probe, rounding: bool = True) -> float:
    """Negative log-likelihood for the noise model named in ``spec``."""
    return _model(y, probe, spec, x).evaluate(x, r, grad_x=False, rounding=rounding)[0]


def nll_gaussian(y, x, r, spec: LikelihoodSpec, probe, rounding: bool = True) -> float:
    if spec.kind != "gaussian":
        raise ValueError("spec is not a Gaussian likelihood")
    return nll(y, x, r, spec, probe, rounding)


def nll_poisson(y, x, r, spec: LikelihoodSpec, probe, rounding: bool = True) -> float:
    if spec.kind != "poisson_approx":
        raise ValueError("spec is not a Poisson-approximate likelihood")
    return nll(y, x, r, spec, probe, rounding)


def grad_nll_x(y, x, r, spec: LikelihoodSpec, probe, rounding: bool = True):
    """Gradient of the NLL w.r.t. the object (real/imaginary stacking convention)."""
    return _model(y, probe, spec, x).evaluate(x, r, grad_x=True, rounding=rounding)[1]


def grad_nll_r(y, x, r, spec: LikelihoodSpec, probe, mode: str = "continuous"):
    """Gradient of the NLL w.r.t. the positions, shape ``(K, 2)``.

    ``mode="continuous"`` differentiates the continuous-shift loss at the
    unrounded ``r``. ``mode="straight_through"`` returns the same derivative
    evaluated at the rounded positions, i.e. the gradient the reconstruction
    engines pass through the rounding.
    """
    m = _model(y, probe, spec, x)
    if mode == "continuous":
        return m.evaluate(x, r, grad_x=False, grad_r=True, rounding=False)[2]
    if mode == "straight_through":
        return m.evaluate(x, r, grad_x=False, grad_r=True, rounding=True)[2]
    raise ValueError(f"unknown mode {mode!r}")


def fd_check(loss, point, grad, directions=None, step: float = 1e-5, n_random: int = 6, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference directional derivatives.

    Parameters
    ----------
    loss : callable
        Scalar function of an array shaped like ``point``.
    point : ndarray (real or complex)
    grad : ndarray
        Analytic gradient at ``point`` (stacking convention for complex).
    directions : sequence of ndarray, optional
        Perturbation directions; defaults to ``n_random`` random unit
        directions (complex directions for complex points).
    step : float
    """
    point = np.asarray(point)
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = []
        for _ in range(n_random):
            d = rng.standard_normal(point.shape)
            if np.iscomplexobj(point):
                d = d + 1j * rng.standard_normal(point.shape)
            directions.append(d / np.linalg.norm(d))
    worst = 0.0
    for d in directions:
        fd = (loss(point + step * d) - loss(point - step * d)) / (2 * step)
        an = float(np.sum((np.conj(grad) * d).real))
        denom = max(abs(fd), abs(an), 1e-300)
        worst = max(worst, abs(fd - an) / denom)
    return worst
