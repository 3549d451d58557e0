"""Reconstruction engines.

All engines alternate ``n_img`` image updates with ``n_pos`` position updates
per outer iteration, using Adam for both blocks.

* :func:`run_vi` fits mean-field Gaussians over image and positions with
  reparametrized Monte-Carlo gradients and analytic entropies.
* :func:`run_em` shares the image block of :func:`run_vi` but keeps point
  (delta) positions.
* :func:`run_map` and :func:`run_reddiff` optimize point estimates; RED-Diff
  adds the stochastic denoising regularizer to the image gradient.

Forward evaluations use rounded positions; position gradients are the
continuous-shift derivatives evaluated at the rounded positions
(``config.rounding=False`` switches to the fully continuous operator).
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ..forward import MeasurementSet
from ..likelihood import LikelihoodSpec, PtychoModel
from ..priors import (
    DiffusionSchedule,
    ScoreModel,
    grad_elbo_sde,
    grad_huber_tv,
    grad_log_barrier,
    huber_tv,
    log_barrier,
    reddiff_reg_grad,
)
from .optim import AdamState, adam_step, cosine_lr, entropy_gaussian
from .state import ReconstructionConfig, VariationalState

__all__ = [
    "DivergenceError",
    "ScoreBackendMissing",
    "RunResult",
    "build_model",
    "vi_loss_and_grads",
    "run_vi",
    "run_em",
    "run_map",
    "run_reddiff",
    "reconstruct",
]


class DivergenceError(RuntimeError):
    """Loss became non-finite or grew beyond the divergence threshold."""

    def __init__(self, step, loss, diagnostics):
        super().__init__(f"reconstruction diverged at outer step {step} (loss={loss!r})")
        self.step = step
        self.loss = loss
        self.diagnostics = diagnostics


class ScoreBackendMissing(ValueError):
    """A diffusion prior was requested without a score model."""


@dataclass
class RunResult:
    """Final state, per-step diagnostics and (optional) position trajectory."""

    state: VariationalState
    method: str
    config: ReconstructionConfig
    diagnostics: list = field(default_factory=list)
    trajectory: dict = field(default_factory=lambda: {"step": [], "mu_r": [], "mu_x": []})

    @property
    def x(self):
        return self.state.mu_x

    @property
    def r(self):
        return self.state.mu_r

    def write_diagnostics_csv(self, path):
        if not self.diagnostics:
            keys = ["step"]
        else:
            keys = list(self.diagnostics[0].keys())
        with open(os.fspath(path), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for row in self.diagnostics:
                w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


def build_model(measurements, probe, object_size: int, lik_spec: LikelihoodSpec | None = None,
                precision: str = "double") -> PtychoModel:
    if lik_spec is None:
        if not isinstance(measurements, MeasurementSet):
            raise ValueError("lik_spec is required for raw pattern arrays")
        lik_spec = LikelihoodSpec.for_measurements(measurements)
    return PtychoModel(probe, measurements, lik_spec, object_size, precision=precision)


def _image_prior(x, config, score, schedule, rng, need_grad):
    if config.image_prior == "htv":
        v = config.htv_lambda * huber_tv(x, config.htv_alpha)
        g = config.htv_lambda * grad_huber_tv(x, config.htv_alpha) if need_grad else None
        return v, g
    if config.image_prior == "ssp":
        val, g = grad_elbo_sde(score, x, schedule, config.ssp_samples, rng)
        return -val, (-g if need_grad else None)
    return 0.0, (np.zeros_like(x) if need_grad else None)


def _pos_prior(r, H, config, need_grad):
    if config.barrier_lambda == 0:
        return 0.0, (np.zeros_like(r) if need_grad else None)
    lam, l = config.barrier_lambda, config.barrier_margin
    v = log_barrier(r, H, l, lam)
    return v, (grad_log_barrier(r, H, l, lam) if need_grad else None)


def vi_loss_and_grads(state: VariationalState, model: PtychoModel, config: ReconstructionConfig, rng,
                      score: ScoreModel | None = None, schedule: DiffusionSchedule | None = None,
                      blocks=("image", "position")):
    """Monte-Carlo estimate of the blind variational objective and its gradients.

    Draws ``config.batch`` joint samples ``x = mu_x + sigma_x (e_re + i e_im)``,
    ``r = mu_r + sigma_r e_r`` and returns the batch mean of
    ``NLL + image prior + position prior`` minus both entropies, with
    reparametrized gradients for the requested ``blocks``. Positions with
    ``log_sigma_r = -inf`` are point masses (no sampling, no entropy).

    Returns
    -------
    loss : float
    grads : dict
        Keys ``mu_x``, ``log_sigma_x`` (image block) and ``mu_r``,
        ``log_sigma_r`` (position block; the latter only for random positions).
    """
    B = config.batch
    if B < 1:
        raise ValueError("batch must be >= 1")
    H = state.mu_x.shape[0]
    need_x = "image" in blocks
    need_r = "position" in blocks
    point_r = not np.all(np.isfinite(state.log_sigma_r))
    sx = state.sigma_x
    sr = state.sigma_r
    gmx = np.zeros_like(state.mu_x)
    glsx = np.zeros(state.mu_x.shape)
    gmr = np.zeros_like(state.mu_r)
    glsr = np.zeros(state.mu_r.shape[0])
    total = 0.0
    for _ in range(B):
        ex = rng.standard_normal((2,) + state.mu_x.shape)
        ecx = ex[0] + 1j * ex[1]
        x = state.mu_x + sx * ecx
        if point_r:
            r = state.mu_r
        else:
            er = rng.standard_normal(state.mu_r.shape)
            r = state.mu_r + sr[:, None] * er
        nll, gx, gr = model.evaluate(x, r, grad_x=need_x, grad_r=need_r,
                                     rounding=config.rounding, r_mode="straight_through")
        pv, pg = _image_prior(x, config, score, schedule, rng, need_x)
        bv, bg = _pos_prior(r, H, config, need_r)
        total += nll + pv + bv
        if need_x:
            g = gx + pg
            gmx += g
            glsx += sx * (g.real * ex[0] + g.imag * ex[1])
        if need_r:
            g = gr + bg
            gmr += g
            if not point_r:
                glsr += sr * np.sum(g * er, axis=1)
    loss = total / B - entropy_gaussian(state.log_sigma_x)
    if not point_r:
        loss -= entropy_gaussian(state.log_sigma_r)
    grads = {}
    if need_x:
        grads["mu_x"] = gmx / B
        grads["log_sigma_x"] = glsx / B - 2.0
    if need_r:
        grads["mu_r"] = gmr / B
        if not point_r:
            grads["log_sigma_r"] = glsr / B - 2.0
    return float(loss), grads


def _check_divergence(loss, init, config, step, diagnostics):
    if not np.isfinite(loss):
        raise DivergenceError(step, loss, diagnostics)
    if init is not None and abs(loss) > config.divergence_factor * max(abs(init), 1e-300):
        raise DivergenceError(step, loss, diagnostics)


def _record(result, step, config, state, extra):
    if config.log_every and step % config.log_every == 0:
        row = {"step": step}
        row.update(extra)
        result.diagnostics.append(row)
    if config.trajectory_every and step % config.trajectory_every == 0:
        result.trajectory["step"].append(step)
        result.trajectory["mu_r"].append(state.mu_r.copy())
        result.trajectory["mu_x"].append(state.mu_x.copy())


def _setup(config, measurements, probe, init_positions, lik_spec, object_size):
    H = object_size
    if H is None:
        if isinstance(measurements, MeasurementSet) and measurements.meta.get("object_size"):
            H = int(measurements.meta["object_size"])
        else:
            H = probe_size(probe) // 2
    model = build_model(measurements, probe, H, lik_spec, config.precision)
    rng = np.random.default_rng(config.seed)
    if not config.blind and init_positions is None:
        raise ValueError("non-blind reconstruction needs the (true) positions")
    return H, model, rng


def probe_size(probe):
    f = getattr(probe, "field", probe)
    return np.asarray(f).shape[0]


def _run_variational(config, measurements, probe, score, schedule, init_positions, lik_spec,
                     object_size, point_positions, checkpoint):
    if config.image_prior == "ssp" and score is None:
        raise ScoreBackendMissing("image_prior='ssp' needs a score model")
    schedule = schedule or DiffusionSchedule()
    H, model, rng = _setup(config, measurements, probe, init_positions, lik_spec, object_size)
    sigma_r = 0.0 if (point_positions or not config.blind) else config.init_sigma_r
    state = VariationalState.initial(H, model.K, rng, config.init_sigma_x, sigma_r, init_positions)
    opt = {k: AdamState.zeros_like(getattr(state, k)) for k in ("mu_x", "log_sigma_x", "mu_r", "log_sigma_r")}
    result = RunResult(state=state, method=config.method, config=config)
    init_loss = None
    for it in range(config.n_outer):
        lr = cosine_lr(it, config.lr_decay_start, config.lr_decay_end, config.lr_img_hi, config.lr_img_lo)
        loss = np.nan
        for _ in range(config.n_img):
            loss, g = vi_loss_and_grads(state, model, config, rng, score, schedule, ("image",))
            state.mu_x = adam_step(opt["mu_x"], state.mu_x, g["mu_x"], lr)
            state.log_sigma_x = adam_step(opt["log_sigma_x"], state.log_sigma_x, g["log_sigma_x"], lr)
        if config.n_img:
            _check_divergence(loss, init_loss, config, it, result.diagnostics)
            init_loss = loss if init_loss is None else init_loss
        pos_loss = np.nan
        if config.blind:
            for _ in range(config.n_pos):
                pos_loss, g = vi_loss_and_grads(state, model, config, rng, score, schedule, ("position",))
                state.mu_r = adam_step(opt["mu_r"], state.mu_r, g["mu_r"], config.lr_pos_mu)
                if "log_sigma_r" in g:
                    state.log_sigma_r = adam_step(opt["log_sigma_r"], state.log_sigma_r, g["log_sigma_r"],
                                                  config.lr_pos_logstd)
        _record(result, it, config, state, {
            "loss": float(loss), "position_loss": float(pos_loss), "lr_img": float(lr),
            "sigma_x_mean": float(np.mean(state.sigma_x)),
            "sigma_r_mean": float(np.mean(state.sigma_r)),
        })
        if checkpoint is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            checkpoint(it + 1, state.copy())
    return result


def run_vi(config: ReconstructionConfig, measurements, probe, score: ScoreModel | None = None,
           schedule: DiffusionSchedule | None = None, init_positions=None, lik_spec=None,
           object_size: int | None = None, checkpoint=None) -> RunResult:
    """Blind mean-field variational reconstruction.

    Parameters
    ----------
    config : ReconstructionConfig
    measurements : MeasurementSet or ndarray (K, Hp, Hp)
    probe : Probe or ndarray
    score : ScoreModel, optional
        Required for ``image_prior='ssp'``.
    schedule : DiffusionSchedule, optional
        Defaults to the VP schedule.
    init_positions : ndarray (K, 2), optional
        Position means at start (for ``blind=False`` they stay fixed).
    lik_spec : LikelihoodSpec, optional
        Derived from ``measurements`` when omitted.
    object_size : int, optional
        Defaults to half the probe size.
    checkpoint : callable(step, VariationalState), optional
        Called every ``config.checkpoint_every`` outer steps.
    """
    return _run_variational(config, measurements, probe, score, schedule, init_positions, lik_spec,
                            object_size, False, checkpoint)


def run_em(config: ReconstructionConfig, measurements, probe, score: ScoreModel | None = None,
           schedule: DiffusionSchedule | None = None, init_positions=None, lik_spec=None,
           object_size: int | None = None, checkpoint=None) -> RunResult:
    """Variational image block with point-estimate (delta) positions."""
    return _run_variational(config, measurements, probe, score, schedule, init_positions, lik_spec,
                            object_size, True, checkpoint)


def _run_point(config, measurements, probe, score, schedule, lambda_rd, init_positions, lik_spec,
               object_size, checkpoint):
    if config.image_prior == "ssp":
        raise ValueError("point-estimate engines support image_prior 'none' or 'htv'")
    if lambda_rd > 0 and score is None:
        raise ScoreBackendMissing("RED-Diff with lambda_rd > 0 needs a score model")
    schedule = schedule or DiffusionSchedule()
    H, model, rng = _setup(config, measurements, probe, init_positions, lik_spec, object_size)
    reg_rng = np.random.default_rng([config.seed, 1])
    state = VariationalState.initial(H, model.K, rng, config.init_sigma_x, 0.0, init_positions)
    state.log_sigma_x[:] = -np.inf
    ox = AdamState.zeros_like(state.mu_x)
    orr = AdamState.zeros_like(state.mu_r)
    result = RunResult(state=state, method=config.method, config=config)
    init_loss = None
    for it in range(config.n_outer):
        lr = cosine_lr(it, config.lr_decay_start, config.lr_decay_end, config.lr_img_hi, config.lr_img_lo)
        loss = np.nan
        for _ in range(config.n_img):
            nll, gx, _ = model.evaluate(state.mu_x, state.mu_r, grad_x=True, rounding=config.rounding)
            pv, pg = _image_prior(state.mu_x, config, None, None, None, True)
            bv, _ = _pos_prior(state.mu_r, H, config, False)
            loss = nll + pv + bv
            g = gx + pg
            if lambda_rd > 0:
                g = g + reddiff_reg_grad(score, state.mu_x, schedule, lambda_rd, reg_rng)
            state.mu_x = adam_step(ox, state.mu_x, g, lr)
        if config.n_img:
            _check_divergence(loss, init_loss, config, it, result.diagnostics)
            init_loss = loss if init_loss is None else init_loss
        pos_loss = np.nan
        if config.blind:
            for _ in range(config.n_pos):
                nll, _, gr = model.evaluate(state.mu_x, state.mu_r, grad_x=False, grad_r=True,
                                            rounding=config.rounding, r_mode="straight_through")
                bv, bg = _pos_prior(state.mu_r, H, config, True)
                pos_loss = nll + bv
                state.mu_r = adam_step(orr, state.mu_r, gr + bg, config.lr_pos_mu)
        _record(result, it, config, state, {"loss": float(loss), "position_loss": float(pos_loss),
                                            "lr_img": float(lr)})
        if checkpoint is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            checkpoint(it + 1, state.copy())
    return result


def run_map(config: ReconstructionConfig, measurements, probe, init_positions=None, lik_spec=None,
            object_size: int | None = None, checkpoint=None) -> RunResult:
    """Joint point estimate of image and positions (Huber-TV and barrier priors optional)."""
    return _run_point(config, measurements, probe, None, None, 0.0, init_positions, lik_spec,
                      object_size, checkpoint)


def run_reddiff(config: ReconstructionConfig, measurements, probe, score: ScoreModel | None = None,
                schedule: DiffusionSchedule | None = None, lambda_rd: float | None = None,
                init_positions=None, lik_spec=None, object_size: int | None = None,
                checkpoint=None) -> RunResult:
    """Blind RED-Diff: point estimates with the denoising regularizer on the image.

    ``lambda_rd`` defaults to ``config.lambda_rd``. The regularizer draws from
    its own generator, so ``lambda_rd = 0`` reproduces :func:`run_map` exactly.
    """
    lam = config.lambda_rd if lambda_rd is None else lambda_rd
    return _run_point(config, measurements, probe, score, schedule, lam, init_positions, lik_spec,
                      object_size, checkpoint)


def reconstruct(config: ReconstructionConfig, measurements, probe, score=None, schedule=None, **kw) -> RunResult:
    """Dispatch on ``config.method``."""
    if config.method == "vi":
        return run_vi(config, measurements, probe, score, schedule, **kw)
    if config.method == "em":
        return run_em(config, measurements, probe, score, schedule, **kw)
    if config.method == "map":
        return run_map(config, measurements, probe, **kw)
    return run_reddiff(config, measurements, probe, score, schedule, **kw)
