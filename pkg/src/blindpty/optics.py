"""Probe synthesis: apertures with Zernike aberrations and block-random phase
masks, photon-flux scaling and beamstop detector masks."""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import factorial

import numpy as np

from .field import cfft2

__all__ = [
    "ApertureSpec",
    "Probe",
    "DegenerateProbeError",
    "noll_to_nm",
    "zernike",
    "random_zernike_coeffs",
    "zernike_phase",
    "aperture_support",
    "make_aperture",
    "probe_from_aperture",
    "make_probe",
    "scale_probe_photons",
    "beamstop_mask",
    "NOLL_RANGE",
]

#: Noll indices drawn for random aberrations (radial order 2..4; piston/tilt excluded).
NOLL_RANGE = tuple(range(4, 16))
ZERNIKE_STD = 0.5


class DegenerateProbeError(ValueError):
    pass


def noll_to_nm(j: int):
    """Convert a Noll index (1-based) to radial order ``n`` and signed azimuthal ``m``."""
    if j < 1:
        raise ValueError("Noll indices start at 1")
    n = 0
    j1 = j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * ((j1 + ((n + 1) % 2)) // 2))
    return n, m


def _radial(n, m, rho):
    m = abs(m)
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        c = (-1) ** k * factorial(n - k) / (
            factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k)
        )
        out += c * rho ** (n - 2 * k)
    return out


def zernike(j: int, rho, theta):
    """Noll-indexed Zernike polynomial, orthonormal over the unit disk
    (unit RMS), evaluated without masking."""
    n, m = noll_to_nm(j)
    if m == 0:
        return np.sqrt(n + 1) * _radial(n, 0, rho)
    norm = np.sqrt(2 * (n + 1))
    if m > 0:
        return norm * _radial(n, m, rho) * np.cos(m * theta)
    return norm * _radial(n, m, rho) * np.sin(-m * theta)


def random_zernike_coeffs(seed: int, std: float = ZERNIKE_STD):
    """Draw i.i.d. normal coefficients (radians RMS) for Noll 4..15."""
    rng = np.random.default_rng([seed, 0])
    return dict(zip(NOLL_RANGE, rng.normal(0.0, std, len(NOLL_RANGE))))


@dataclass(frozen=True)
class ApertureSpec:
    """Aperture description.

    Parameters
    ----------
    array_size : int
        Probe array size in pixels.
    d_ap : float
        Aperture diameter as a fraction of ``array_size``, in (0, 1/2].
    zernike_coeffs : dict[int, float] or None
        Noll index -> coefficient in radians. ``None`` draws random
        coefficients from ``seed``.
    mask_block : int
        Block size of the random phase mask; 0 disables the mask.
    seed : int
    """

    array_size: int
    d_ap: float = 0.5
    zernike_coeffs: dict | None = None
    mask_block: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.d_ap <= 0.5:
            raise ValueError("d_ap must lie in (0, 1/2]")
        if self.mask_block < 0:
            raise ValueError("mask_block must be >= 0")
        if self.zernike_coeffs is not None:
            for j, c in self.zernike_coeffs.items():
                if j < 4 and c != 0:
                    raise ValueError("piston and tilt coefficients must be zero")

    def coefficients(self) -> dict:
        if self.zernike_coeffs is None:
            return random_zernike_coeffs(self.seed)
        return dict(self.zernike_coeffs)


@dataclass(frozen=True)
class Probe:
    """Complex probe wavefield at the object plane.

    ``photon_scale`` is the photon count the probe was scaled to, or ``None``
    for an unscaled probe.
    """

    field: np.ndarray
    spec: ApertureSpec | None = None
    photon_scale: float | None = None

    @property
    def size(self) -> int:
        return self.field.shape[0]

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.field) ** 2))


def _polar_grid(size, radius):
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    dy, dx = yy - c, xx - c
    return np.hypot(dy, dx) / radius, np.arctan2(dy, dx)


def aperture_support(size: int, d_ap: float):
    """Boolean disk of diameter ``d_ap * size`` centered on the array."""
    rho, _ = _polar_grid(size, d_ap * size / 2.0)
    return rho <= 1.0


def zernike_phase(spec: ApertureSpec):
    """Aberration phase map over the aperture disk; zero outside it."""
    rho, theta = _polar_grid(spec.array_size, spec.d_ap * spec.array_size / 2.0)
    inside = rho <= 1.0
    phase = np.zeros((spec.array_size, spec.array_size))
    for j, c in sorted(spec.coefficients().items()):
        if c != 0.0:
            phase += c * zernike(j, rho, theta)
    phase[~inside] = 0.0
    return phase


def _mask_phase(spec: ApertureSpec):
    b = spec.mask_block
    n = spec.array_size
    nb = -(-n // b)
    rng = np.random.default_rng([spec.seed, 1])
    blocks = rng.uniform(0.0, 2 * np.pi, size=(nb, nb))
    idx = np.arange(n) // b
    return blocks[idx[:, None], idx[None, :]]


def make_aperture(spec: ApertureSpec):
    """Unit-magnitude disk with Zernike phase and optional block-random phase mask."""
    support = aperture_support(spec.array_size, spec.d_ap)
    phase = zernike_phase(spec)
    if spec.mask_block > 0:
        phase = phase + _mask_phase(spec)
    return np.where(support, np.exp(1j * phase), 0.0 + 0.0j)


def probe_from_aperture(aperture, spec: ApertureSpec | None = None) -> Probe:
    """Propagate an aperture to focus with a centered unitary DFT."""
    aperture = np.asarray(aperture, dtype=complex)
    if not np.any(aperture != 0):
        raise DegenerateProbeError("aperture is identically zero")
    return Probe(field=cfft2(aperture), spec=spec)


def make_probe(spec: ApertureSpec, n_phot: float | None = None) -> Probe:
    probe = probe_from_aperture(make_aperture(spec), spec)
    if n_phot is not None:
        probe = scale_probe_photons(probe, n_phot)
    return probe


def scale_probe_photons(probe: Probe, n_phot: float) -> Probe:
    """Scale the probe so a non-absorbing object diffracts ``n_phot`` photons in total."""
    if n_phot <= 0:
        raise ValueError("n_phot must be positive")
    energy = probe.energy
    if energy <= 0:
        raise DegenerateProbeError("probe has zero energy")
    return replace(probe, field=probe.field * np.sqrt(n_phot / energy), photon_scale=float(n_phot))


def beamstop_mask(d_ap: float, detector_size: int):
    """Detector mask (True = usable) excluding a disk of radius
    ``1 + d_ap / 2 * detector_size`` around the zero-frequency pixel.

    The detector uses the centered layout, zero frequency at ``size // 2``.
    """
    radius = 1.0 + d_ap / 2.0 * detector_size
    c = detector_size // 2
    yy, xx = np.mgrid[0:detector_size, 0:detector_size]
    return (yy - c) ** 2 + (xx - c) ** 2 > radius ** 2
