"""Stage runners behind the command line: bounds, solve, expect, ssa, pipeline, validate.

Every artifact is written with sorted keys and ``repr`` floats so a rerun with
the same configuration and seed reproduces the files byte for byte. Wall-clock
timings go to ``run.log`` only.
"""
from __future__ import annotations

import csv
import fcntl
import json
import logging
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import bounds as bd
from . import expect, pde, ssa, validation
from .config import ConfigError, RunConfig

log = logging.getLogger("genebsde")

DEFAULT_TOL = 1e-3


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _floats(v) -> list[float]:
    return [float(x) for x in v]


@contextmanager
def output_lock(out: Path):
    """Exclusive per-directory lock; released automatically if the process dies."""
    out.mkdir(parents=True, exist_ok=True)
    fh = open(out / ".lock", "w")
    try:
        fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except BlockingIOError:
        fh.close()
        raise OSError(f"output directory {out} is in use by another run")
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    try:
        yield
    finally:
        log.removeHandler(handler)
        handler.close()
        fcntl.flock(fh, fcntl.LOCK_UN)
        fh.close()


@contextmanager
def _timed(stage: str):
    t0 = time.perf_counter()
    log.info("stage %s: start", stage)
    yield
    log.info("stage %s: done in %.3f s", stage, time.perf_counter() - t0)


# --- bounds ------------------------------------------------------------------


def _x_grid(spec: dict | None, env: bd.DensityEnvelope) -> np.ndarray:
    spec = spec or {}
    pts = int(spec.get("points", 401))
    if "lo" in spec:
        return np.linspace(float(spec["lo"]), float(spec["hi"]), pts)
    half = float(spec.get("sigmas", 4.0)) * math.sqrt(env.Lam)
    return np.linspace(env.mean - half, env.mean + half, pts)


def envelopes(cfg: RunConfig, fd: bd.GaussianFinalData, mean=None, abs_dev=None) -> tuple[list[bd.DensityEnvelope], dict | None]:
    """Per-gene envelopes (gene 1 sharpened when ``bounds.suppressed``) with moments filled in."""
    envs = bd.gene_envelopes(cfg.net, fd.derivative_bounds(), cfg.window)
    extra = None
    if cfg.bounds.get("suppressed", False):
        try:
            m_t, M_t, env1 = bd.suppressed_gene_envelope(cfg.net, fd, cfg.window)
        except bd.HypothesisError as exc:
            raise ConfigError(f"bounds.suppressed: {exc}") from None
        envs[0] = env1
        extra = {"m_t": m_t, "M_t": M_t, "lambda": env1.lam, "Lambda": env1.Lam}
    if mean is not None:
        ad = abs_dev if abs_dev is not None else [1.0] * cfg.n
        envs = [e.with_moments(m, a) for e, m, a in zip(envs, mean, ad)]
    return envs, extra


def run_bounds(cfg: RunConfig, out: Path, fd: bd.GaussianFinalData | None = None, moments: expect.MomentReport | None = None) -> dict:
    """Envelope curves, x_alpha table and positivity certificates."""
    fd = fd or cfg.final_data()
    if moments is not None:
        mean, abs_dev, source = moments.mean, moments.abs_dev, "pde"
    else:
        mean, abs_dev = cfg.bounds.get("mean"), cfg.bounds.get("abs_dev")
        source = "config" if mean is not None else "none"
    envs, supp = envelopes(cfg, fd, mean, abs_dev)
    alphas = [float(a) for a in cfg.bounds.get("alpha", [0.75, 0.95])]
    known = mean is not None

    records = []
    for i, env in enumerate(envs):
        rec = bd.certificate_record(env, alphas, mean_known=known)
        rec["gene"] = i + 1
        records.append(rec)
        bd.write_envelope_csv(out / f"envelope_gene{i + 1}.csv", env, _x_grid(cfg.bounds.get("x_grid"), env))
    bd.write_envelope_csv(out / "envelope.csv", envs[0], _x_grid(cfg.bounds.get("x_grid"), envs[0]))
    bd.write_certificates_json(out / "certificates.json", records)
    with open(out / "xalpha.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gene", "alpha", "x_alpha", "lo", "hi"])
        for rec in records:
            for row in rec["prediction"]:
                lo, hi = row.get("interval", ["", ""])
                w.writerow([rec["gene"], repr(row["alpha"]), repr(row["x_alpha"]), repr(lo) if known else "", repr(hi) if known else ""])
    summary = {"moments_source": source, "certificates": records}
    if supp is not None:
        _dump(out / "suppressed.json", supp)
        summary["suppressed"] = supp
    return summary


# --- pde / expect ---------------------------------------------------------


def grid_for(cfg: RunConfig, fd: bd.GaussianFinalData) -> pde.PdeGrid:
    spec = cfg.pde
    points = int(spec.get("points_per_axis", pde.DEFAULT_POINTS))
    dt = spec.get("dt")
    if "a" in spec:
        a, N = float(spec["a"]), float(spec["N"])
    else:
        tol = float(spec.get("tol", DEFAULT_TOL))
        a = expect.choose_inner_cube(cfg.net, fd, cfg.window, tol)
        N = pde.choose_margin(cfg.net, fd, cfg.window, tol)
    return pde.PdeGrid.aligned(a, N, points, dt)


def run_solve(cfg: RunConfig, fd: bd.GaussianFinalData | None = None, threads: int = 1) -> pde.ThetaField:
    fd = fd or cfg.final_data()
    if cfg.n > pde.MAX_DIMENSION:
        raise ConfigError(f"the PDE leg supports n <= {pde.MAX_DIMENSION}, got n = {cfg.n}")
    grid = grid_for(cfg, fd)
    log.info("pde grid %s", grid.to_dict())
    return pde.solve_final_value(cfg.net, fd, grid, cfg.window, threads=threads)


def run_expect(cfg: RunConfig, field: pde.ThetaField, fd: bd.GaussianFinalData | None = None) -> expect.MomentReport:
    fd = fd or cfg.final_data()
    return expect.gaussian_weight_integral(field, cfg.window.t, cfg.net, fd, cfg.window)


def moments_dict(rep: expect.MomentReport, grid: pde.PdeGrid) -> dict:
    return {
        "mean": _floats(rep.mean),
        "abs_dev": _floats(rep.abs_dev),
        "trunc_err_mean": _floats(rep.trunc_err_mean),
        "trunc_err_absdev": _floats(rep.trunc_err_absdev),
        "mass_deficit": float(rep.mass_deficit),
        "a": float(rep.a),
        "rule": rep.rule,
        "grid": grid.to_dict(),
    }


# --- ssa ------------------------------------------------------------------


def _ssa_setup(cfg: RunConfig):
    spec = cfg.ssa or {}
    init = spec.get("initial")
    if init is None:
        init = [int(round(v)) for v in cfg.final_data().b]
    T, t = cfg.window.T, cfg.window.t
    times = spec.get("sample_times") or sorted({t, T})
    sc = ssa.SsaConfig(cfg.net, init, T, int(spec.get("ensemble", 1000)), int(spec.get("seed", 0)))
    return sc, np.asarray(times, dtype=float)


def _bin_width(x: np.ndarray, spec: dict) -> float:
    if spec.get("bin_width") is not None:
        return float(spec["bin_width"])
    fd_width = np.diff(np.histogram_bin_edges(x, bins="fd")[:2])[0] if np.ptp(x) > 0 else 1.0
    return float(max(1, round(fd_width)))


def run_ssa(cfg: RunConfig, out: Path, threads: int = 1) -> dict:
    """Ensemble samples, the fitted final data and the gene-1 histogram at ``t``."""
    sc, times = _ssa_setup(cfg)
    samples = ssa.simulate_ensemble(sc, times, threads=threads)
    ssa.write_samples_csv(out / "samples.csv", samples, times)
    result = {"ensemble": sc.ensemble_size, "seed": sc.seed, "initial": sc.initial.tolist(), "sample_times": _floats(times)}
    if math.isclose(times[-1], sc.T):
        final = samples[:, -1, :]
        result["final_mean"] = _floats(final.mean(axis=0))
        result["final_std"] = _floats(final.std(axis=0, ddof=1))
        try:
            fit = ssa.fit_final_data(final, sc.T)
            result["fit"] = {"c": _floats(fit.c), "b": _floats(fit.b)}
        except ValueError as exc:
            result["fit"] = None
            result["fit_error"] = str(exc)
    hit = np.flatnonzero(np.isclose(times, cfg.window.t))
    hist = None
    if hit.size:
        x = samples[:, hit[0], 0]
        hist = ssa.histogram(x, bin_width=_bin_width(x, cfg.ssa or {}))
        hist.write_csv(out / "histogram.csv")
        result["histogram"] = {"gene": 1, "t": cfg.window.t, "bins": int(hist.counts.size), "bin_width": float(hist.widths[0])}
        result["t_mean"] = float(x.mean())
        result["t_std"] = float(x.std(ddof=1))
    _dump(out / "ssa.json", result)
    return {"summary": result, "histogram": hist}


# --- pipeline -----------------------------------------------------------------


def run_pipeline(cfg: RunConfig, out: Path, threads: int = 1, theta_out: Path | None = None) -> dict:
    """bounds -> pde -> expect -> ssa -> compare, with a manifest of what completed.

    When the final data is fitted from the SSA the ssa stage runs first.
    """
    manifest = {"schema": 1, "name": cfg.name, "config": cfg.to_dict(), "stages": [], "complete": False}
    state: dict = {}

    def stage(name, fn):
        try:
            with _timed(name):
                state[name] = fn()
        except ConfigError:
            raise
        except Exception as exc:
            manifest["stages"].append({"stage": name, "status": "failed", "error": str(exc)})
            _dump(out / "manifest.json", manifest)
            raise StageError(name, exc) from exc
        manifest["stages"].append({"stage": name, "status": "ok"})

    fitted = cfg.fit_from_ssa
    if fitted:
        stage("ssa", lambda: run_ssa(cfg, out, threads))
        f = state["ssa"]["summary"].get("fit")
        if not f:
            raise StageError("ssa", RuntimeError(state["ssa"]["summary"].get("fit_error", "no samples at T")))
        fd = bd.GaussianFinalData(c=f["c"], b=f["b"])
    else:
        fd = cfg.final_data()

    stage("pde", lambda: run_solve(cfg, fd, threads))
    field = state["pde"]
    if theta_out is not None:
        field.write_csv(theta_out)
    stage("expect", lambda: run_expect(cfg, field, fd))
    rep = state["expect"]
    _dump(out / "moments.json", moments_dict(rep, field.grid))
    stage("bounds", lambda: run_bounds(cfg, out, fd, rep))

    if cfg.ssa is not None and not fitted:
        stage("ssa", lambda: run_ssa(cfg, out, threads))
    if cfg.ssa is not None:
        hist = state["ssa"]["histogram"]
        if hist is not None:

            def compare():
                envs, _ = envelopes(cfg, fd, rep.mean, rep.abs_dev)
                cov = ssa.envelope_coverage(hist, envs[0])
                cov.update({"gene": 1, "t": cfg.window.t, "envelope": envs[0].to_dict()})
                _dump(out / "coverage.json", cov)
                return cov

            stage("compare", compare)
    manifest["complete"] = True
    manifest["artifacts"] = sorted(p.name for p in out.iterdir() if p.is_file() and p.name not in {".lock", "run.log", "manifest.json"})
    _dump(out / "manifest.json", manifest)
    return {"manifest": manifest, "moments": rep, "state": state}


def run_validate(out: Path, mc_samples: int = 10**6, seed: int = 0) -> dict:
    checks = validation.run_fixture_suite(mc_samples=mc_samples, seed=seed)
    report = {"passed": all(c["passed"] for c in checks), "checks": checks}
    _dump(out / "validation.json", report)
    return report

