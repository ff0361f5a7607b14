"""Command-line entry point: ``ddbranch {validate,conjugacy,simulate,experiment}``.

All output is CSV, written atomically into the output directory
(``experiment.output_dir``, or ``--out``).  Exit status is 0 on success,
2 for a configuration error and 3 for a failure while running.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .config import RunConfig, load_config, render_config
from .conjugacy import build_table, semiconjugacy_residual
from .csvio import write_csv
from .errors import ConfigError, DdbranchError
from .experiments import rate_experiment, write_outputs
from .offspring import validate_assumptions
from .simulate import horizon, simulate_coupled

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONJUGACY_HEADER = ("x", "H", "H'", "H''", "residual")
SIMULATE_HEADER = ("replicate", "n", "Z", "Y", "Zbar", "Ybar")
VALIDATE_HEADER = ("check", "ok", "quantity", "value")


def _out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.experiment.output_dir)


def _say(line: str) -> None:
    print(line, flush=True)


def cmd_validate(cfg: RunConfig, write: bool = False) -> int:
    model = cfg.build_model()
    v = cfg.validate
    report = validate_assumptions(
        model, np.linspace(0.0, v.grid_max, v.grid_points), t_max=v.t_max
    )
    rows = report.rows()
    _say(f"model {model.spec()}  grid [0, {v.grid_max}] x {v.grid_points}  t <= {v.t_max}")
    width = max(len(q) for _, _, q, _ in rows)
    for check, ok, quantity, value in rows:
        _say(f"  {check}  {'ok ' if ok else 'FAIL'}  {quantity:<{width}}  {value:.6g}")
    _say(f"a1_ok={report.a1_ok} a3_ok={report.a3_ok}")
    if write:
        path = write_csv(_out_dir(cfg) / "validate.csv", VALIDATE_HEADER, rows)
        _say(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_conjugacy(cfg: RunConfig) -> int:
    model = cfg.build_model()
    c = cfg.conjugacy
    ev = build_table(model, x_max=c.x_max, step=c.step, tol=c.tol)
    residual = np.asarray(semiconjugacy_residual(model, ev.grid, c.tol))
    rows = zip(ev.grid, ev.h_values, ev.h_prime_values, ev.h_second_values, residual)
    path = write_csv(_out_dir(cfg) / "conjugacy.csv", CONJUGACY_HEADER,
                     ([float(v) for v in r] for r in rows))
    _say(
        f"wrote {path} ({len(ev.grid)} rows; max residual {ev.max_residual:.2e}, "
        f"depth {ev.n_depth}, invertible on [0, {ev.invertible_upper:g}])"
    )
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    model = cfg.build_model()
    s = cfg.simulate
    steps = s.steps if s.steps is not None else max(horizon(s.K, model.rho).n1, 1)
    rows = []
    for r in range(s.replicates):
        path = simulate_coupled(model, s.K, steps, s.seed, key=(s.K, r), z0=s.z0,
                                population_cap=s.population_cap)
        rows.extend(
            (r, n, int(z), int(y), z / s.K, y / s.K)
            for n, (z, y) in enumerate(zip(path.z, path.y))
        )
    out = write_csv(_out_dir(cfg) / "simulate.csv", SIMULATE_HEADER, rows)
    _say(f"wrote {out} ({s.replicates} replicates x {steps + 1} steps, K={s.K}, "
         f"kernel {kernels.BACKEND})")
    return EXIT_OK


def run_experiment(cfg: RunConfig, out_dir: Optional[Path] = None):
    """Run the configured rate experiment and write its CSVs; returns ``(report, paths)``."""
    model = cfg.build_model()
    c, e = cfg.conjugacy, cfg.experiment
    ev = build_table(model, x_max=c.x_max, step=c.step, tol=c.tol)
    report = rate_experiment(
        model, ev, e.k_grid, e.replicates, e.master_seed, e.quantile_levels,
        c=e.c, extra_generations=e.extra_generations, n_jobs=e.n_jobs,
    )
    out_dir = Path(out_dir) if out_dir is not None else _out_dir(cfg)
    paths = write_outputs(report, out_dir)
    (out_dir / "config.ini").write_text(render_config(cfg))
    return report, paths


def cmd_experiment(cfg: RunConfig) -> int:
    report, paths = run_experiment(cfg)
    _say(f"wrote {paths['errors']} ({len(report.samples)} samples)")
    _say(f"wrote {paths['rate_report']} ({len(report.rows)} rows)")
    _say(f"wrote {paths['histogram']}")
    for s in report.slopes:
        if s.level == 0.5 or len(report.quantile_levels) == 1:
            shown = f"{s.slope:+.3f} +/- {s.stderr:.3f}" if s.defined else s.status
            _say(f"slope {s.arm:<6} {s.conditioning:<9} q={s.level:g}: {shown}")
    return EXIT_OK


def run(subcommand: str, config: RunConfig, overrides: Sequence[str] = (), *,
        write_csv_report: bool = False) -> int:
    """Apply overrides, dispatch, and translate errors into exit codes."""
    try:
        cfg = config.with_overrides(overrides)
        if subcommand == "validate":
            return cmd_validate(cfg, write_csv_report)
        handler = {"conjugacy": cmd_conjugacy, "simulate": cmd_simulate,
                   "experiment": cmd_experiment}[subcommand]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DdbranchError, OSError, ValueError, ArithmeticError) as exc:
        print(f"{subcommand} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", type=int, metavar="N",
                        help="master seed (simulate.seed and experiment.master_seed)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key; repeatable")
    common.add_argument("--family", help="offspring family (model.family)")
    common.add_argument("--rho", help="mean offspring at zero density (model.rho)")

    parser = argparse.ArgumentParser(
        prog="ddbranch",
        description="Density-dependent branching processes: H, coupled simulation, rate experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", parents=[common], help="check the model assumptions")
    v.add_argument("--csv", action="store_true", help="also write validate.csv")
    sub.add_parser("conjugacy", parents=[common], help="tabulate H, H', H'' as CSV")
    s = sub.add_parser("simulate", parents=[common], help="coupled Z/Y trajectories as CSV")
    s.add_argument("-K", "--capacity", dest="K", help="carrying capacity (simulate.K)")
    s.add_argument("--steps", help="generations (simulate.steps; default n1)")
    s.add_argument("--replicates", help="number of paths (simulate.replicates)")
    e = sub.add_parser("experiment", parents=[common], help="Monte Carlo rate experiment")
    e.add_argument("--replicates", help="replicates per K (experiment.replicates)")
    e.add_argument("--jobs", help="parallel workers (experiment.n_jobs)")
    return parser


def _overrides(args) -> list[str]:
    out = []
    if args.seed is not None:
        out += [f"simulate.seed={args.seed}", f"experiment.master_seed={args.seed}"]
    if args.out is not None:
        out.append(f"experiment.output_dir={args.out}")
    for flag, key in (("family", "model.family"), ("rho", "model.rho")):
        if getattr(args, flag) is not None:
            out.append(f"{key}={getattr(args, flag)}")
    section = "simulate" if args.command == "simulate" else "experiment"
    for flag, key in (("K", "simulate.K"), ("steps", "simulate.steps"),
                      ("replicates", f"{section}.replicates"), ("jobs", "experiment.n_jobs")):
        if getattr(args, flag, None) is not None:
            out.append(f"{key}={getattr(args, flag)}")
    return out + list(args.set)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.command, config, _overrides(args), write_csv_report=getattr(args, "csv", False))


if __name__ == "__main__":
    sys.exit(main())
