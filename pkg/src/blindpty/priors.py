"""Image and position priors.

* Huber total variation on complex images.
* Log-barrier keeping scan positions inside an extended object box.
* Score-based diffusion priors: the SDE evidence lower bound and the
  RED-Diff regularizer, with a score backend behind :class:`ScoreModel`.

Complex images enter the diffusion prior as real stacks of shape
``(2, H, W)`` (real plane, imaginary plane), so the dimension is ``d = 2HW``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "huber",
    "huber_tv",
    "grad_huber_tv",
    "log_barrier",
    "grad_log_barrier",
    "DiffusionSchedule",
    "vp_schedule",
    "ve_schedule",
    "ScoreModel",
    "AnalyticGaussianScore",
    "stack_complex",
    "unstack_complex",
    "elbo_sde",
    "elbo_sde_samples",
    "grad_elbo_sde",
    "reddiff_weight",
    "reddiff_reg_grad",
    "HUBER_ALPHA",
]

HUBER_ALPHA = 1e-5


# ---------------------------------------------------------------- Huber-TV

def huber(t, alpha: float = HUBER_ALPHA):
    t = np.asarray(t, dtype=float)
    return np.where(t <= alpha, t * t / (2 * alpha), t - alpha / 2)


def _forward_diffs(x):
    # replicate boundary: the difference past the last row/column is zero
    dr = np.zeros_like(x)
    dd = np.zeros_like(x)
    dr[:, :-1] = x[:, :-1] - x[:, 1:]
    dd[:-1, :] = x[:-1, :] - x[1:, :]
    return dr, dd


def huber_tv(x, alpha: float = HUBER_ALPHA) -> float:
    """Isotropic Huber total variation of a 2-D (complex) image.

    ``sum_{h,w} huber(sqrt(|x[h,w]-x[h,w+1]|^2 + |x[h,w]-x[h+1,w]|^2))``.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("huber_tv expects a 2-D image")
    dr, dd = _forward_diffs(x)
    n = np.sqrt(np.abs(dr) ** 2 + np.abs(dd) ** 2)
    return float(np.sum(huber(n, alpha)))


def grad_huber_tv(x, alpha: float = HUBER_ALPHA):
    """Gradient of :func:`huber_tv` (real/imaginary stacking for complex ``x``)."""
    x = np.asarray(x)
    dr, dd = _forward_diffs(x)
    n = np.sqrt(np.abs(dr) ** 2 + np.abs(dd) ** 2)
    # huber'(n) / n, finite at n = 0
    c = np.where(n > alpha, 1.0 / np.maximum(n, alpha), 1.0 / alpha)
    cr, cd = c * dr, c * dd
    g = cr + cd
    g[:, 1:] -= cr[:, :-1]
    g[1:, :] -= cd[:-1, :]
    return g


# ---------------------------------------------------------------- barrier

def _barrier_coords(r, H: int, loosening: float):
    half = (H + 2.0 * loosening) / 2.0
    return (np.asarray(r, dtype=float) - H / 2.0) / half, half


def log_barrier(r, H: int, loosening: float = 20.0, lam: float = 1.0, eps: float = 1e-6) -> float:
    """Log-barrier on positions in ``[-l, H + l]^2``.

    ``lam * sum_k [-log(1 - s_y^2) - log(1 - s_x^2)]`` with ``s`` the position
    mapped affinely onto [-1, 1] and clipped to ``[-1 + eps, 1 - eps]``.
    """
    s, _ = _barrier_coords(r, H, loosening)
    s = np.clip(s, -1 + eps, 1 - eps)
    return float(lam * np.sum(-np.log1p(-s * s)))


def grad_log_barrier(r, H: int, loosening: float = 20.0, lam: float = 1.0, eps: float = 1e-6):
    """Gradient of :func:`log_barrier`; outside the box it is evaluated at
    the clipped point, which always pushes positions back inside."""
    s, half = _barrier_coords(r, H, loosening)
    s = np.clip(s, -1 + eps, 1 - eps)
    return lam * (2 * s / (1 - s * s)) / half


# ---------------------------------------------------------------- diffusion

@dataclass(frozen=True)
class DiffusionSchedule:
    """Forward SDE ``dx = -beta(t)/2 x dt + g dW`` (``vp``) or ``dx = g dW`` (``ve``).

    ``alpha(t)`` and ``sigma(t)`` give the perturbation kernel
    ``x_t = alpha x_0 + sigma eps``.
    """

    kind: str = "vp"
    beta_min: float = 0.01
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    t_eps: float = 1e-3
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in ("vp", "ve"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.t_eps < self.T:
            raise ValueError("need 0 < t_eps < T")
        if self.kind == "vp" and not 0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")
        if self.kind == "ve" and not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")

    def beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * np.asarray(t, dtype=float)

    def int_beta(self, t):
        t = np.asarray(t, dtype=float)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def alpha(self, t):
        if self.kind == "ve":
            return np.ones_like(np.asarray(t, dtype=float))
        return np.exp(-0.5 * self.int_beta(t))

    def sigma(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "ve":
            return self.sigma_min * (self.sigma_max / self.sigma_min) ** t
        return np.sqrt(-np.expm1(-self.int_beta(t)))

    def g2(self, t):
        """Squared diffusion coefficient."""
        if self.kind == "ve":
            return 2.0 * self.sigma(t) ** 2 * np.log(self.sigma_max / self.sigma_min)
        return self.beta(t)

    def div_drift(self, t, d: int):
        """Divergence of the drift ``f(x, t)`` in ``d`` dimensions."""
        if self.kind == "ve":
            return np.zeros_like(np.asarray(t, dtype=float))
        return -0.5 * self.beta(t) * d

    def terminal_log_prob(self, x_t):
        """Log density of the terminal reference ``N(0, sigma_T^2 I)``
        (``sigma_T = 1`` for ``vp``)."""
        s2 = 1.0 if self.kind == "vp" else float(self.sigma(self.T)) ** 2
        x_t = np.asarray(x_t, dtype=float)
        d = x_t.size
        return -0.5 * d * np.log(2 * np.pi * s2) - 0.5 * np.sum(x_t * x_t) / s2


def vp_schedule(beta_min: float = 0.01, beta_max: float = 20.0, t_eps: float = 1e-3):
    return DiffusionSchedule("vp", beta_min=beta_min, beta_max=beta_max, t_eps=t_eps)


def ve_schedule(sigma_min: float = 0.01, sigma_max: float = 50.0, t_eps: float = 1e-3):
    return DiffusionSchedule("ve", sigma_min=sigma_min, sigma_max=sigma_max, t_eps=t_eps)


def stack_complex(x):
    x = np.asarray(x)
    return np.stack([x.real, x.imag])


def unstack_complex(s):
    return s[0] + 1j * s[1]


class ScoreModel:
    """Score backend interface: ``evaluate(x, t)`` returns ``grad log p_t(x)``.

    ``x`` is a real array (normally the ``(2, H, W)`` stack of a complex
    image) and the output has the same shape. ``vjp`` returns the product of
    the score Jacobian with ``v``; the default uses a central finite
    difference, which is exact for symmetric Jacobians (true scores).
    """

    fd_step = 1e-4

    def evaluate(self, x, t):
        raise NotImplementedError

    def vjp(self, x, t, v):
        v = np.asarray(v, dtype=float)
        nv = float(np.linalg.norm(v))
        if nv == 0:
            return np.zeros_like(v)
        h = self.fd_step * max(1.0, float(np.linalg.norm(x))) / nv
        return (self.evaluate(x + h * v, t) - self.evaluate(x - h * v, t)) / (2 * h)

    def __call__(self, x, t):
        return self.evaluate(x, t)


class AnalyticGaussianScore(ScoreModel):
    """Exact score of ``p_t`` when the data follow ``N(mean, diag(var))``.

    The perturbed density is ``N(alpha mean, diag(alpha^2 var + sigma^2))``.
    ``mean`` and ``var`` are scalars or arrays broadcastable to the data.
    """

    def __init__(self, schedule: DiffusionSchedule, mean=0.0, var=1.0):
        var = np.asarray(var, dtype=float)
        if np.any(var < 0):
            raise ValueError("var must be non-negative")
        self.schedule = schedule
        self.mean = np.asarray(mean, dtype=float)
        self.var = var

    def _moments(self, t):
        a = float(self.schedule.alpha(t))
        s = float(self.schedule.sigma(t))
        return a, a * a * self.var + s * s

    def evaluate(self, x, t):
        a, v = self._moments(t)
        return -(np.asarray(x, dtype=float) - a * self.mean) / v

    def vjp(self, x, t, v):
        return -np.asarray(v, dtype=float) / self._moments(t)[1]

    def log_density(self, x, t: float = 0.0) -> float:
        """Closed-form ``log p_t(x)`` (``t = 0`` gives the data density)."""
        a, v = self._moments(t) if t > 0 else (1.0, self.var)
        x = np.asarray(x, dtype=float)
        v = np.broadcast_to(v, x.shape)
        return float(-0.5 * np.sum(np.log(2 * np.pi * v)) - 0.5 * np.sum((x - a * self.mean) ** 2 / v))

    @classmethod
    def fit(cls, schedule: DiffusionSchedule, samples):
        """Moment-match a diagonal Gaussian to training samples ``(n, ...)``."""
        samples = np.asarray(samples, dtype=float)
        mean = samples.mean(axis=0)
        return cls(schedule, mean=mean, var=samples.var(axis=0))


def _as_real(x):
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return stack_complex(x), True
    return x.astype(float), False


def _elbo_terms(score: ScoreModel, x, schedule, rng, need_grad):
    t = rng.uniform(schedule.t_eps, schedule.T)
    eps = rng.standard_normal(x.shape)
    a, s = float(schedule.alpha(t)), float(schedule.sigma(t))
    g2 = float(schedule.g2(t))
    xt = a * x + s * eps
    sc = score.evaluate(xt, t)
    u = sc + eps / s
    h = np.sum(u * u) - np.sum(eps * eps) / s ** 2 - (2.0 / g2) * float(schedule.div_drift(t, x.size))
    span = schedule.T - schedule.t_eps
    val = -0.5 * span * g2 * h
    grad = None
    if need_grad:
        grad = -span * g2 * a * score.vjp(xt, t, u)
    return val, grad


def _terminal_expectation(x, schedule):
    # E_eps[log pi(alpha_T x + sigma_T eps)] in closed form
    aT, sT = float(schedule.alpha(schedule.T)), float(schedule.sigma(schedule.T))
    s2 = 1.0 if schedule.kind == "vp" else sT ** 2
    d = x.size
    val = -0.5 * d * np.log(2 * np.pi * s2) - 0.5 * (aT * aT * np.sum(x * x) + d * sT * sT) / s2
    return val, -(aT * aT / s2) * x


def elbo_sde_samples(score: ScoreModel, x, schedule: DiffusionSchedule, n_samples: int = 1, rng=None):
    """Per-sample Monte-Carlo values of the SDE evidence lower bound of ``log p(x)``.

    Each value is an unbiased estimate (``t ~ U[t_eps, T]``, ``eps ~ N(0, I)``).
    """
    rng = np.random.default_rng(rng)
    xr, _ = _as_real(x)
    base, _ = _terminal_expectation(xr, schedule)
    return np.array([base + _elbo_terms(score, xr, schedule, rng, False)[0] for _ in range(n_samples)])


def elbo_sde(score: ScoreModel, x, schedule: DiffusionSchedule, n_samples: int = 1, rng=None) -> float:
    """Monte-Carlo estimate of the SDE evidence lower bound ``b(x) <= log p(x)``."""
    return float(np.mean(elbo_sde_samples(score, x, schedule, n_samples, rng)))


def grad_elbo_sde(score: ScoreModel, x, schedule: DiffusionSchedule, n_samples: int = 1, rng=None):
    """Value and gradient (w.r.t. ``x``) of the Monte-Carlo ELBO estimate.

    For complex ``x`` the gradient is returned as a complex array in the
    real/imaginary stacking convention.
    """
    rng = np.random.default_rng(rng)
    xr, was_complex = _as_real(x)
    base, gbase = _terminal_expectation(xr, schedule)
    vals, grad = [], np.zeros_like(xr)
    for _ in range(n_samples):
        v, g = _elbo_terms(score, xr, schedule, rng, True)
        vals.append(v)
        grad += g
    grad = grad / n_samples + gbase
    value = base + float(np.mean(vals))
    return value, (unstack_complex(grad) if was_complex else grad)


def reddiff_weight(t, schedule: DiffusionSchedule, lam: float = 1.0):
    """SNR-based weight ``lam * sigma(t) / alpha(t)``."""
    return lam * schedule.sigma(t) / schedule.alpha(t)


def reddiff_reg_grad(score: ScoreModel, x, schedule: DiffusionSchedule, lam: float, rng=None):
    """Stochastic RED-Diff regularizer gradient.

    Draws ``t ~ U[t_eps, T]`` and ``eps``, forms ``x_t = alpha x + sigma eps``
    and returns ``-(T - t_eps) w(t) (s(x_t, t) + eps / sigma)``, to be added to
    the data-fidelity gradient before a descent step. For ``lam == 0`` the
    result is zero and no random numbers are drawn.
    """
    xr, was_complex = _as_real(x)
    if lam == 0:
        out = np.zeros_like(xr)
    else:
        rng = np.random.default_rng(rng)
        t = rng.uniform(schedule.t_eps, schedule.T)
        eps = rng.standard_normal(xr.shape)
        a, s = float(schedule.alpha(t)), float(schedule.sigma(t))
        sc = score.evaluate(a * xr + s * eps, t)
        w = float(reddiff_weight(t, schedule, lam))
        out = -(schedule.T - schedule.t_eps) * w * (sc + eps / s)
    return unstack_complex(out) if was_complex else out
