"""Command-line entry point: ``run``, ``theory``, ``reference``, ``compare``.

Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage
error (schema errors name the offending field), 3 numeric abort (a
``diagnostics.json`` is left in the run directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config, preset_names
from .errors import ConfigError, UsageError
from .runner import (
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_NUMERIC,
    EXIT_OK,
    compare_run,
    execute_run,
    output_root,
    reference_table,
    write_csv,
)
from .swr import DomainError, cswr_contraction, optimize_robin_lambda, robin_contraction, superlinear_bound

log = logging.getLogger("swrpinn")

THEORY_COLUMNS = ("method", "eps", "lambda", "predicted_rate")


def _run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = Path(args.out) if args.out else output_root() / f"{cfg['name']}-seed{seed}"
    outcome = execute_run(cfg, out, seed=args.seed, threads=args.threads)
    if outcome.status == EXIT_NUMERIC:
        print(f"numeric abort: {outcome.message}; see {out / 'diagnostics.json'}", file=sys.stderr)
        return EXIT_NUMERIC
    conv = outcome.manifest["convergence"]
    print(f"run written to {out}")
    print(
        f"iterations={conv['iterations']} final_residual={conv['final_residual']} "
        f"converged_at={conv['converged_at']} plateau_at={conv['plateau_at']}"
    )
    return EXIT_OK


def theory_rows(a, nu, r, eps, lambdas=(), optimize=False, horizon=None, omega_max=1e3, omega_min=0.0) -> list[dict]:
    rows = [{"method": "cswr", "eps": eps, "lambda": "", "predicted_rate": cswr_contraction(a, nu, r, eps)}]
    if horizon is not None:
        rows.append({"method": "superlinear", "eps": eps, "lambda": "", "predicted_rate": superlinear_bound(eps, nu, horizon)})
    for lam in lambdas:
        rate = robin_contraction(a, nu, r, eps, lam, omega_max, omega_min)
        rows.append({"method": "robin", "eps": eps, "lambda": lam, "predicted_rate": rate})
    if optimize:
        lam = optimize_robin_lambda(a, nu, r, eps, omega_max, omega_min)
        rate = robin_contraction(a, nu, r, eps, lam, omega_max, omega_min)
        rows.append({"method": "robin-optimized", "eps": eps, "lambda": lam, "predicted_rate": rate})
    return rows


def _theory(args) -> int:
    if not args.nu > 0:
        print(
            f"error: nu={args.nu}: the contraction factors contain eps/nu and (z +- lambda) with "
            "z = sqrt(a^2 + 4 nu (r + i omega)); they are undefined for nu <= 0",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    if args.eps == 0:
        print("warning: eps = 0: classical SWR needs an overlap to contract (C_CSWR = 1)", file=sys.stderr)
    rows = theory_rows(args.a, args.nu, args.r, args.eps, args.lam or (), args.optimize, args.horizon, args.omega_max, args.omega_min)
    print(f"{'method':<16} {'eps':>10} {'lambda':>14} {'predicted_rate':>22}")
    for row in rows:
        lam = "" if row["lambda"] == "" else f"{row['lambda']:.6g}"
        print(f"{row['method']:<16} {row['eps']:>10.6g} {lam:>14} {row['predicted_rate']:>22.15g}")
    if args.csv:
        write_csv(Path(args.csv), THEORY_COLUMNS, rows)
    return EXIT_OK


def _reference(args) -> int:
    cfg = load_config(args.config)
    columns, rows = reference_table(cfg, args.method, args.refine)
    out = Path(args.out) if args.out else output_root() / f"{cfg['name']}-reference.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, columns, rows)
    print(f"reference written to {out} ({len(rows)} rows)")
    if "abs_err" in columns:
        print(f"max abs_err vs characteristics: {max(r['abs_err'] for r in rows):.6e}")
    return EXIT_OK


def _compare(args) -> int:
    metrics = compare_run(args.run_dir, args.reference)
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swrpinn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log Schwarz iterations")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file or preset")
    run.add_argument("--config", required=True, help=f"YAML file, run manifest, or preset ({', '.join(preset_names())})")
    run.add_argument("--out", help="run directory (default: $SWRPINN_OUT or ./runs, then <name>-seed<S>)")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--threads", type=int, default=1, help="worker threads for subdomain solves")
    run.set_defaults(fn=_run)

    th = sub.add_parser("theory", help="print predicted SWR contraction factors")
    th.add_argument("--a", type=float, required=True)
    th.add_argument("--nu", type=float, required=True)
    th.add_argument("--r", type=float, default=0.0)
    th.add_argument("--eps", type=float, required=True)
    th.add_argument("--lambda", dest="lam", type=float, action="append", help="Robin parameter (repeatable)")
    th.add_argument("--optimize", action="store_true", help="also report the optimized Robin parameter")
    th.add_argument("--horizon", type=float, help="final time T for the superlinear bound")
    th.add_argument("--omega-max", type=float, default=1e3)
    th.add_argument("--omega-min", type=float, default=0.0)
    th.add_argument("--csv", help="also write the table as CSV")
    th.set_defaults(fn=_theory)

    ref = sub.add_parser("reference", help="write a reference solution CSV on the prediction grid")
    ref.add_argument("--config", required=True)
    ref.add_argument("--method", choices=("characteristics", "fd"))
    ref.add_argument("--refine", type=int, default=0, help="halve dx and dt this many times")
    ref.add_argument("--out")
    ref.set_defaults(fn=_reference)

    cmp_ = sub.add_parser("compare", help="errors of a run against a reference CSV")
    cmp_.add_argument("run_dir")
    cmp_.add_argument("reference")
    cmp_.add_argument("--out", help="write metrics JSON here too")
    cmp_.set_defaults(fn=_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, UsageError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
