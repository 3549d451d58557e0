"""Command-line interface: ``blindpty {simulate,reconstruct,landscape,evaluate,render}``.

Settings come from an INI file (``--config``) with sections ``object``,
``probe``, ``measurement``, ``reconstruction`` and ``output``; ``--set
section.key=value`` overrides single entries. The environment variables
``BLINDPTY_OUTPUT_DIR`` and ``BLINDPTY_SCORE_ENDPOINT`` override the output
directory and the remote score endpoint from the file.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import io as _io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as pio
from .evaluation import evaluate, landscape_scan, render_landscape
from .field import render_png
from .forward import NoiseSpec, forward_intensity, sample_positions, sigma_for_snr, simulate_measurements
from .forward import MeasurementSet, measurement_snr_db
from .inference import DivergenceError, ReconstructionConfig, reconstruct
from .optics import ApertureSpec, Probe, beamstop_mask, make_probe
from .phantom import generate_phantom, transmission_from_profile
from .priors import AnalyticGaussianScore, DiffusionSchedule

log = logging.getLogger("blindpty")

ENV_OUTPUT_DIR = "BLINDPTY_OUTPUT_DIR"
ENV_SCORE_ENDPOINT = "BLINDPTY_SCORE_ENDPOINT"

DEFAULTS = {
    "object": {"size": "256", "mode": "full", "seed": "0", "file": ""},
    "probe": {"d_ap": "0.5", "mask_block": "4", "seed": "0", "n_phot": ""},
    "measurement": {
        "K": "100", "noise": "gaussian", "sigma": repr(float(np.sqrt(0.005))), "snr_db": "",
        "beamstop": "false", "seed": "0", "position_seed": "",
    },
    "reconstruction": {
        "score": "none", "score_endpoint": "", "score_timeout": "30", "score_mean_re": "1.0",
        "score_mean_im": "0.0", "score_var": "0.1", "schedule": "vp",
    },
    "output": {"dir": "out"},
}
_RECON_FIELDS = {f.name: f for f in dataclasses.fields(ReconstructionConfig)}


class ConfigError(ValueError):
    pass


class ExperimentConfig:
    """Typed view on the INI configuration."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser

    @classmethod
    def load(cls, path=None, overrides=(), env=None):
        env = os.environ if env is None else env
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_dict(DEFAULTS)
        if path:
            if not cp.read(os.fspath(path)):
                raise ConfigError(f"cannot read config file {path}")
        if env.get(ENV_OUTPUT_DIR):
            cp["output"]["dir"] = env[ENV_OUTPUT_DIR]
        if env.get(ENV_SCORE_ENDPOINT):
            cp["reconstruction"]["score_endpoint"] = env[ENV_SCORE_ENDPOINT]
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.partition(".")
            if not sep or not dot:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            if not cp.has_section(section):
                cp.add_section(section)
            cp[section][name] = value
        cfg = cls(cp)
        cfg.validate()
        return cfg

    def get(self, section, key, conv=str):
        raw = self.parser[section].get(key, "")
        if conv is bool:
            return self.parser[section].getboolean(key)
        if raw == "":
            return None
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc

    def validate(self):
        for section in self.parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key in self.parser[section]:
                if key not in DEFAULTS[section] and not (section == "reconstruction" and key in _RECON_FIELDS):
                    raise ConfigError(f"unknown key {section}.{key}")
        self.reconstruction_config()

    @property
    def output_dir(self) -> Path:
        return Path(self.get("output", "dir"))

    def reconstruction_config(self) -> ReconstructionConfig:
        kw = {}
        for name, f in _RECON_FIELDS.items():
            raw = self.parser["reconstruction"].get(name, "")
            if raw == "":
                continue
            typ = f.type if isinstance(f.type, str) else f.type.__name__
            try:
                if typ.startswith("bool"):
                    kw[name] = self.parser["reconstruction"].getboolean(name)
                elif typ.startswith("int"):
                    kw[name] = int(raw)
                elif typ.startswith("float"):
                    kw[name] = float(raw)
                else:
                    kw[name] = raw
            except ValueError as exc:
                raise ConfigError(f"bad value for reconstruction.{name}: {raw!r}") from exc
        try:
            return ReconstructionConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_text(self) -> str:
        buf = _io.StringIO()
        self.parser.write(buf)
        return buf.getvalue()

    def to_dict(self):
        return {s: dict(self.parser[s]) for s in self.parser.sections()}


# ------------------------------------------------------------------ helpers

def _object(cfg: ExperimentConfig):
    path = cfg.get("object", "file")
    if path:
        return pio.read_ptyf(path).astype(complex), None
    prof = generate_phantom(cfg.get("object", "size", int), cfg.get("object", "mode"), cfg.get("object", "seed", int))
    return transmission_from_profile(prof), prof


def _probe(cfg: ExperimentConfig, H: int) -> Probe:
    spec = ApertureSpec(array_size=2 * H, d_ap=cfg.get("probe", "d_ap", float),
                        mask_block=cfg.get("probe", "mask_block", int), seed=cfg.get("probe", "seed", int))
    return make_probe(spec, cfg.get("probe", "n_phot", float))


def simulate(cfg: ExperimentConfig):
    """Build object, probe, positions and noisy patterns from a configuration."""
    x, prof = _object(cfg)
    H = x.shape[0]
    probe = _probe(cfg, H)
    K = cfg.get("measurement", "K", int)
    mseed = cfg.get("measurement", "seed", int)
    pseed = cfg.get("measurement", "position_seed", int)
    positions = sample_positions(K, H, mseed if pseed is None else pseed)
    kind = cfg.get("measurement", "noise")
    if kind == "poisson":
        if probe.photon_scale is None:
            raise ConfigError("Poisson noise needs probe.n_phot")
        noise = NoiseSpec("poisson", n_phot=probe.photon_scale)
    elif kind == "gaussian":
        snr = cfg.get("measurement", "snr_db", float)
        if snr is not None:
            sigma = sigma_for_snr(forward_intensity(positions, x, probe), snr)
        else:
            sigma = cfg.get("measurement", "sigma", float)
        noise = NoiseSpec("gaussian", sigma=sigma)
    else:
        raise ConfigError(f"unknown noise model {kind!r}")
    mask = None
    if cfg.get("measurement", "beamstop", bool):
        mask = beamstop_mask(cfg.get("probe", "d_ap", float), probe.size)
    meas = simulate_measurements(x, probe, positions, noise, mask, seed=mseed)
    meas.meta["object_size"] = H
    return x, prof, probe, meas


def _score(cfg: ExperimentConfig, rc: ReconstructionConfig, H: int):
    kind = cfg.get("reconstruction", "score")
    needs = rc.image_prior == "ssp" or (rc.method == "reddiff" and rc.lambda_rd > 0)
    schedule = DiffusionSchedule(cfg.get("reconstruction", "schedule"))
    if kind == "analytic":
        mean = np.stack([np.full((H, H), cfg.get("reconstruction", "score_mean_re", float)),
                         np.full((H, H), cfg.get("reconstruction", "score_mean_im", float))])
        return AnalyticGaussianScore(schedule, mean, cfg.get("reconstruction", "score_var", float)), schedule
    if kind == "remote":
        from .remote import RemoteScoreModel

        endpoint = cfg.get("reconstruction", "score_endpoint")
        if not endpoint:
            raise ConfigError("score=remote needs reconstruction.score_endpoint or $" + ENV_SCORE_ENDPOINT)
        return RemoteScoreModel(endpoint, cfg.get("reconstruction", "score_timeout", float)), schedule
    if kind != "none":
        raise ConfigError(f"unknown score backend {kind!r}")
    if needs:
        raise ConfigError(f"method={rc.method} with image_prior={rc.image_prior} needs a score backend "
                          "(reconstruction.score = analytic | remote)")
    return None, schedule


def load_measurements(sim_dir: Path):
    sim_dir = Path(sim_dir)
    side = pio.read_json(sim_dir / "simulation.json")
    noise = NoiseSpec(**side["noise"])
    patterns = pio.read_ptyf(sim_dir / "patterns.ptyf")
    mask = pio.read_ptyf(sim_dir / "mask.ptyf") > 0.5
    truth = pio.read_ptyf(sim_dir / "positions.ptyf") if (sim_dir / "positions.ptyf").exists() else None
    meas = MeasurementSet(patterns=patterns, noise=noise, detector_mask=mask, truth=truth,
                          seed=side.get("seed", 0), meta={"object_size": side["object_size"]})
    probe = Probe(pio.read_ptyf(sim_dir / "probe.ptyf"), photon_scale=side.get("photon_scale"))
    obj = pio.read_ptyf(sim_dir / "object.ptyf") if (sim_dir / "object.ptyf").exists() else None
    return meas, probe, obj


def _render_all(field, out: Path, stem: str):
    for mode in ("complex", "magnitude", "phase"):
        render_png(field, out / f"{stem}_{mode}.png", mode)


# ------------------------------------------------------------------ commands

def cmd_simulate(cfg: ExperimentConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    x, prof, probe, meas = simulate(cfg)
    pio.write_ptyf(out / "object.ptyf", x)
    if prof is not None:
        pio.write_ptyf(out / "delta.ptyf", prof.delta)
        pio.write_ptyf(out / "beta.ptyf", prof.beta)
    pio.write_ptyf(out / "probe.ptyf", probe.field)
    pio.write_ptyf(out / "positions.ptyf", meas.truth)
    pio.write_ptyf(out / "patterns.ptyf", meas.patterns)
    pio.write_ptyf(out / "mask.ptyf", meas.detector_mask)
    clean = forward_intensity(meas.truth, x, probe)
    side = {
        "object_size": x.shape[0], "probe_size": probe.size, "K": meas.K, "seed": meas.seed,
        "noise": meas.noise.to_dict(), "photon_scale": probe.photon_scale,
        "measurement_snr_db": measurement_snr_db(clean, meas.noise.sigma) if meas.noise.kind == "gaussian" else None,
        "masked_pixels": int(np.sum(~meas.detector_mask)), "config": cfg.to_dict(),
    }
    pio.write_json(out / "simulation.json", side)
    (out / "config.ini").write_text(cfg.to_text())
    log.info("simulated %d patterns of %dx%d into %s", meas.K, probe.size, probe.size, out)
    return meas


def _reconstruct_one(args):
    cfg_text, sim_dir, out, seed = args
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(cfg_text)
    cfg = ExperimentConfig(cp)
    rc = dataclasses.replace(cfg.reconstruction_config(), seed=seed)
    meas, probe, obj = load_measurements(sim_dir)
    H = meas.meta["object_size"]
    score, schedule = _score(cfg, rc, H)
    out.mkdir(parents=True, exist_ok=True)

    def checkpoint(step, state):
        d = out / "checkpoints" / f"step_{step:06d}"
        d.mkdir(parents=True, exist_ok=True)
        for name in ("mu_x", "log_sigma_x", "mu_r", "log_sigma_r"):
            pio.write_ptyf(d / f"{name}.ptyf", getattr(state, name))

    init = meas.truth if not rc.blind else None
    try:
        res = reconstruct(rc, meas, probe, score, schedule, init_positions=init, object_size=H,
                          checkpoint=checkpoint)
    except DivergenceError as exc:
        pio.write_json(out / "failure.json", {"error": str(exc), "step": exc.step})
        raise
    st = res.state
    for name in ("mu_x", "log_sigma_x", "mu_r", "log_sigma_r"):
        pio.write_ptyf(out / f"{name}.ptyf", getattr(st, name))
    res.write_diagnostics_csv(out / "diagnostics.csv")
    _render_all(st.mu_x, out, "mu_x")
    if np.all(np.isfinite(st.log_sigma_x)):
        render_png(st.sigma_x / max(float(st.sigma_x.max()), 1e-300), out / "sigma_x.png", "magnitude")
    report = None
    if obj is not None:
        report = evaluate(st.mu_x, obj, st.mu_r, meas.truth)
        report.write_json(out / "metrics.json")
    return report


def cmd_reconstruct(cfg: ExperimentConfig, sim_dir: Path, out: Path, repeats: int = 1, jobs: int = 1):
    rc = cfg.reconstruction_config()
    H = pio.read_json(Path(sim_dir) / "simulation.json")["object_size"]
    _score(cfg, rc, H)  # fail fast on configuration errors
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_text())
    text = cfg.to_text()
    if repeats <= 1:
        return [_reconstruct_one((text, sim_dir, out, rc.seed))]
    tasks = [(text, sim_dir, out / f"run_{i:03d}", rc.seed + i) for i in range(repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reports = list(ex.map(_reconstruct_one, tasks))
    else:
        reports = [_reconstruct_one(t) for t in tasks]
    if all(r is not None for r in reports):
        rows = [r.to_dict() for r in reports]
        summary = {}
        for key in ("apsnr", "assim", "crms", "pos_correct"):
            vals = np.array([row[key] for row in rows], dtype=float)
            summary[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals, ddof=1))}
        pio.write_json(out / "summary.json", {"runs": rows, "summary": summary})
    return reports


def cmd_landscape(sim_dir: Path, out: Path, radius: int = 10, index: int | None = None):
    _, probe, obj = load_measurements(sim_dir)
    if obj is None:
        raise ConfigError("landscape needs the ground-truth object (object.ptyf)")
    H = obj.shape[0]
    if index is None:
        r = np.array([H / 2.0, H / 2.0])
    else:
        r = pio.read_ptyf(Path(sim_dir) / "positions.ptyf")[index]
    L = landscape_scan(obj, probe, r, radius)
    out.mkdir(parents=True, exist_ok=True)
    pio.write_ptyf(out / "landscape.ptyf", L)
    render_landscape(L, out / "landscape.png")
    return L


def cmd_evaluate(sim_dir: Path, estimate: Path, positions: Path | None, out: Path):
    obj = pio.read_ptyf(Path(sim_dir) / "object.ptyf")
    x_hat = pio.read_ptyf(estimate)
    r_true = pio.read_ptyf(Path(sim_dir) / "positions.ptyf")
    r_hat = pio.read_ptyf(positions) if positions else None
    report = evaluate(x_hat, obj, r_hat, r_true if r_hat is not None else None)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "metrics.json")
    return report


def cmd_render(inputs, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        f = pio.read_ptyf(path)
        if f.ndim != 2:
            raise ConfigError(f"{path}: render expects a 2-D field")
        _render_all(f, out, Path(path).stem)


# ------------------------------------------------------------------ entry point

def build_parser():
    p = argparse.ArgumentParser(prog="blindpty", description="Position-blind ptychography toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration entry (repeatable)")
        sp.add_argument("--out", help="output directory (overrides config and environment)")

    sp = sub.add_parser("simulate", help="generate object, probe, positions and patterns")
    common(sp)
    sp = sub.add_parser("reconstruct", help="run a reconstruction engine on simulated data")
    common(sp)
    sp.add_argument("--data", required=True, help="directory written by 'simulate'")
    sp.add_argument("--repeats", type=int, default=1, help="independent runs with derived seeds")
    sp.add_argument("--jobs", type=int, default=1, help="parallel processes for repeats")
    sp = sub.add_parser("landscape", help="position loss landscape around one position")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--radius", type=int, default=10)
    sp.add_argument("--index", type=int, default=None, help="scan around this true position (default: center)")
    sp = sub.add_parser("evaluate", help="metrics of an estimate against the simulated truth")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--estimate", required=True, help="PTYF complex image")
    sp.add_argument("--positions", help="PTYF (K, 2) estimated positions")
    sp = sub.add_parser("render", help="render PTYF fields as PNG (complex, magnitude, phase)")
    common(sp)
    sp.add_argument("inputs", nargs="+")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.set)
        out = Path(args.out) if args.out else cfg.output_dir
        if args.command == "simulate":
            cmd_simulate(cfg, out)
        elif args.command == "reconstruct":
            reports = cmd_reconstruct(cfg, Path(args.data), out, args.repeats, args.jobs)
            for r in reports:
                if r is not None:
                    print(r.to_json())
        elif args.command == "landscape":
            cmd_landscape(Path(args.data), out, args.radius, args.index)
        elif args.command == "evaluate":
            print(cmd_evaluate(Path(args.data), Path(args.estimate), args.positions and Path(args.positions), out).to_json())
        elif args.command == "render":
            cmd_render(args.inputs, out)
    except (ConfigError, DivergenceError, OSError) as exc:
        print(f"blindpty: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
