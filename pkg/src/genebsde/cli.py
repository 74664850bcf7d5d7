"""Command line entry point: ``genebsde <subcommand> --config run.json``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import pipeline as pl
from .bounds import HypothesisError
from .config import ConfigError, RunConfig
from .pde import NumericalError
from .ssa import SsaError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _times(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated times") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (JSON, schema 1)")
    common.add_argument("--out", type=Path, help="output directory (default: config 'output' or out/<name>)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--seed", type=_u64, help="override ssa.seed")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="genebsde", description="Density bounds and simulations for gene regulatory networks.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("bounds", parents=[common], help="envelopes, prediction intervals and positivity certificates")
    p = sub.add_parser("solve", parents=[common], help="solve the final-value PDE on the truncated cube")
    p.add_argument("--theta-out", type=Path, help="theta CSV path (default: <out>/theta.csv)")
    sub.add_parser("expect", parents=[common], help="PDE solve followed by Gaussian-weighted moments")
    for name, text in (("ssa", "Gillespie ensemble, fitted final data and histogram"), ("pipeline", "all stages plus envelope coverage")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--ensemble", type=int, help="override ssa.ensemble")
        p.add_argument("--sample-times", type=_times, help="override ssa.sample_times, e.g. 2,4")
        if name == "pipeline":
            p.add_argument("--theta-out", type=Path, help="also write the theta grid to this CSV")
    p = sub.add_parser("validate", parents=[common], help="closed-form fixture suite")
    p.add_argument("--mc-samples", type=int, default=10**6)
    return ap


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out is not None:
        return args.out
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    return Path("out") / (cfg.name if cfg is not None else "validate")


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        text = args.config.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cfg = RunConfig.from_json(text)
    over = {"seed": args.seed, "ensemble": getattr(args, "ensemble", None), "sample_times": getattr(args, "sample_times", None)}
    if any(v is not None for v in over.values()):
        cfg = cfg.with_overrides(**over)
    return cfg


def _run(args) -> tuple[int, dict]:
    if args.command == "validate":
        cfg = None
        out = _out_dir(args, None)
        with pl.output_lock(out):
            rep = pl.run_validate(out, mc_samples=args.mc_samples, seed=args.seed or 0)
        return (EXIT_OK if rep["passed"] else EXIT_FAIL), {"passed": rep["passed"], "out": str(out)}

    cfg = _load(args)
    out = _out_dir(args, cfg)
    with pl.output_lock(out):
        if args.command == "bounds":
            res = pl.run_bounds(cfg, out)
        elif args.command == "solve":
            field = pl.run_solve(cfg, threads=args.threads)
            path = args.theta_out or out / "theta.csv"
            field.write_csv(path)
            res = {"theta": str(path), "grid": field.grid.to_dict(), "steps": field.steps}
        elif args.command == "expect":
            field = pl.run_solve(cfg, threads=args.threads)
            rep = pl.run_expect(cfg, field)
            res = pl.moments_dict(rep, field.grid)
            pl._dump(out / "moments.json", res)
        elif args.command == "ssa":
            res = pl.run_ssa(cfg, out, threads=args.threads)["summary"]
        else:
            r = pl.run_pipeline(cfg, out, threads=args.threads, theta_out=args.theta_out)
            res = {"complete": r["manifest"]["complete"], "stages": r["manifest"]["stages"]}
    res = dict(res)
    res["out"] = str(out)
    return EXIT_OK, res


def _classify(exc: BaseException) -> int:
    if isinstance(exc, pl.StageError):
        return _classify(exc.cause)
    if isinstance(exc, (ConfigError, HypothesisError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (NumericalError, SsaError, FloatingPointError, ArithmeticError, RuntimeError)):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    # numba falls back to another threading layer by itself; the notice is noise on the CLI
    warnings.filterwarnings("ignore", message=".*TBB.*")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code, res = _run(args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = _classify(exc)
        diag = {"error": type(exc.cause if isinstance(exc, pl.StageError) else exc).__name__, "message": str(exc), "exit_code": code}
        if isinstance(exc, pl.StageError):
            diag["stage"] = exc.stage
        print(json.dumps(diag, sort_keys=True), file=sys.stderr)
        return code
    print(json.dumps(res, sort_keys=True, default=float))
    return code


if __name__ == "__main__":
    sys.exit(main())
