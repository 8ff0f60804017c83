"""Command-line experiment runner.

    rfp-pen run <experiment> [--flags ...]
    rfp-pen converge ring --sweep {dt|mesh} [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 acceptance-threshold violation (with --check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import experiments as xp
from .errors import (ConfigurationError, ConservationParameterError,
                     ConvergenceError, DegenerateInputError, DomainError,
                     LinearSolverError, PositivityError)

CONFIG_ERRORS = (ConfigurationError, DomainError, DegenerateInputError)
SOLVER_ERRORS = (LinearSolverError, ConvergenceError, ConservationParameterError,
                 PositivityError)


def _out_root():
    return Path(os.environ.get("RFP_PEN_OUT", "runs"))


def build_parser():
    ap = argparse.ArgumentParser(prog="rfp-pen",
                                 description="Penalized RFP collision-operator experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named experiment")
    run.add_argument("experiment", choices=xp.EXPERIMENTS)
    run.add_argument("--config", help="JSON config file (flags override)")
    run.add_argument("--stepping", choices=xp.STEPPINGS)
    run.add_argument("--penalization", choices=("variable", "constant"))
    run.add_argument("--n-cfl", type=float, dest="n_cfl")
    run.add_argument("--t-end", type=float, dest="t_end")
    run.add_argument("--eps-aa", type=float, dest="eps_aa")
    run.add_argument("--eps-cc", type=float, dest="eps_cc")
    run.add_argument("--eps-pos", type=float, dest="eps_pos")
    run.add_argument("--lin-tol", type=float, dest="lin_tol")
    run.add_argument("--dt-max", type=float, dest="dt_max")
    run.add_argument("--n1", type=int)
    run.add_argument("--n2", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--snapshots", type=float, nargs="*", dest="snapshot_times")
    run.add_argument("--param", action="append", default=[],
                     help="experiment parameter override key=value")
    run.add_argument("--out", help="output directory")
    run.add_argument("--check", action="store_true",
                     help="exit 4 when conservation thresholds are violated")

    conv = sub.add_parser("converge", help="convergence study")
    conv.add_argument("experiment", choices=("ring",))
    conv.add_argument("--sweep", choices=("dt", "mesh"), required=True)
    conv.add_argument("--out", help="output directory")
    return ap


def _parse_params(pairs):
    params = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigurationError(f"--param needs key=value, got {item!r}")
        key, val = item.split("=", 1)
        try:
            params[key] = json.loads(val)
        except json.JSONDecodeError:
            params[key] = val
    return params


def _config_from_args(args):
    overrides = {}
    for key in ("stepping", "penalization", "n_cfl", "t_end", "eps_aa", "eps_cc",
                "eps_pos", "lin_tol", "dt_max", "n1", "n2", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.snapshot_times is not None:
        overrides["snapshot_times"] = tuple(args.snapshot_times)
    params = _parse_params(args.param)
    if args.config:
        cfg = xp.ExperimentConfig.from_json(args.config, experiment=args.experiment,
                                            **overrides)
        cfg.params.update(params)
    else:
        cfg = xp.ExperimentConfig(experiment=args.experiment, params=params, **overrides)
    return cfg


def _run(args):
    cfg = _config_from_args(args)
    outdir = Path(args.out) if args.out else _out_root() / cfg.experiment
    if cfg.experiment in ("band", "ring"):
        _, _, summary = xp.run_heat(cfg, outdir)
    elif cfg.experiment == "beam":
        records = xp.run_beam_rates(cfg, outdir)
        summary = dict(experiment="beam", rates=[r.__dict__ for r in records])
        print(f"wrote {outdir}/rates.csv")
    else:
        grid, f0, op = xp.build_kinetic(cfg)
        _, _, summary, _ = xp.run_kinetic(cfg, outdir, op, f0)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"},
                     indent=2, default=float))
    if args.check and cfg.experiment in ("isotropization", "bimax", "custom"):
        mass_ok = abs(summary["mass_drift"]) <= 1e-12 * max(1.0, abs(summary["mass_drift"]))
        mom_ok = summary["max_abs_momentum_drift"] <= 10.0 * cfg.eps_aa * summary["steps"]
        en_ok = summary["max_abs_energy_drift"] <= 10.0 * cfg.eps_aa * summary["steps"]
        if not (mass_ok and mom_ok and en_ok):
            print("conservation thresholds violated", file=sys.stderr)
            return 4
    return 0


def _converge(args):
    outdir = Path(args.out) if args.out else _out_root() / "converge"
    if args.sweep == "dt":
        rows, slope = xp.convergence_study_dt(outdir)
    else:
        rows, slope = xp.convergence_study_mesh(outdir)
    for xval, err in rows:
        print(f"{xval:.6e}  {err:.6e}")
    print(f"fitted slope: {slope:.3f}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        return _converge(args)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
