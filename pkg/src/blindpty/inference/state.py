"""Variational state and reconstruction settings."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

__all__ = ["VariationalState", "ReconstructionConfig", "METHODS", "IMAGE_PRIORS"]

METHODS = ("vi", "em", "map", "reddiff")
IMAGE_PRIORS = ("none", "htv", "ssp")


@dataclass
class VariationalState:
    """Mean-field Gaussian posterior over image and positions.

    Attributes
    ----------
    mu_x : complex ndarray (H, W)
    log_sigma_x : ndarray (H, W)
        Log std shared by the real and imaginary part of each pixel.
    mu_r : ndarray (K, 2)
    log_sigma_r : ndarray (K,)
        Log std shared by both components of each position. ``-inf`` marks
        point-mass positions (EM, MAP).
    """

    mu_x: np.ndarray
    log_sigma_x: np.ndarray
    mu_r: np.ndarray
    log_sigma_r: np.ndarray

    def __post_init__(self):
        if self.log_sigma_x.shape != self.mu_x.shape:
            raise ValueError("log_sigma_x must match mu_x")
        if self.mu_r.ndim != 2 or self.mu_r.shape[1] != 2:
            raise ValueError("mu_r must have shape (K, 2)")
        if self.log_sigma_r.shape != (self.mu_r.shape[0],):
            raise ValueError("log_sigma_r must have shape (K,)")

    @property
    def sigma_x(self):
        return np.exp(self.log_sigma_x)

    @property
    def sigma_r(self):
        return np.exp(self.log_sigma_r)

    @classmethod
    def initial(cls, H: int, K: int, rng, sigma_x: float = 0.1, sigma_r: float | None = None,
                positions=None):
        """Free-space image mean, uniform random position means on ``[0, H)^2``
        (or ``positions`` if given), and broad position spread ``H / 4``."""
        sigma_r = H / 4.0 if sigma_r is None else sigma_r
        if positions is None:
            mu_r = rng.uniform(0.0, H, size=(K, 2))
        else:
            mu_r = np.array(positions, dtype=float)
        return cls(
            mu_x=np.ones((H, H), dtype=complex),
            log_sigma_x=np.full((H, H), np.log(sigma_x)),
            mu_r=mu_r,
            log_sigma_r=np.full(K, np.log(sigma_r) if sigma_r > 0 else -np.inf),
        )

    def copy(self):
        return VariationalState(self.mu_x.copy(), self.log_sigma_x.copy(), self.mu_r.copy(), self.log_sigma_r.copy())


@dataclass(frozen=True)
class ReconstructionConfig:
    """Settings shared by all reconstruction engines.

    The image learning rate follows :func:`~blindpty.inference.optim.cosine_lr`
    with ``lr_img_hi -> lr_img_lo`` between ``lr_decay_start`` and
    ``lr_decay_end`` outer steps.
    """

    method: str = "vi"
    n_outer: int = 10000
    n_img: int = 1
    n_pos: int = 10
    batch: int = 4
    lr_img_hi: float = 0.1
    lr_img_lo: float = 0.001
    lr_decay_start: int = 4000
    lr_decay_end: int = 6000
    lr_pos_mu: float = 10.0
    lr_pos_logstd: float = 0.01
    init_sigma_x: float = 0.1
    init_sigma_r: float | None = None
    image_prior: str = "none"
    htv_lambda: float = 5.0
    htv_alpha: float = 1e-5
    ssp_samples: int = 1
    lambda_rd: float = 20.0
    barrier_lambda: float = 0.0
    barrier_margin: float = 20.0
    blind: bool = True
    rounding: bool = True
    seed: int = 0
    precision: str = "double"
    divergence_factor: float = 1e6
    log_every: int = 10
    trajectory_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.image_prior not in IMAGE_PRIORS:
            raise ValueError(f"unknown image prior {self.image_prior!r}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.n_outer < 0 or self.n_img < 0 or self.n_pos < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.lr_decay_start >= self.lr_decay_end:
            raise ValueError("lr_decay_start must precede lr_decay_end")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")
        if self.lambda_rd < 0 or self.htv_lambda < 0 or self.barrier_lambda < 0:
            raise ValueError("prior weights must be non-negative")

    def scaled(self, n_outer: int):
        """Shorter run with the learning-rate decay window scaled proportionally."""
        f = n_outer / self.n_outer
        start = int(round(self.lr_decay_start * f))
        end = max(int(round(self.lr_decay_end * f)), start + 1)
        return replace(self, n_outer=n_outer, lr_decay_start=start, lr_decay_end=end)

    def to_dict(self):
        return asdict(self)
