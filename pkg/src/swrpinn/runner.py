"""Run orchestration and the on-disk layout of a run directory.

A run directory holds exactly::

    manifest.json        resolved config, seed, timings, convergence, SHA-256 inventory
    residuals.csv        schwarz_iter, residual, wall_ms, converged
    training.csv         schwarz_iter, subdomain_id, step, loss terms
    snapshot_t<T>.csv    x[,y], t, u of the reconstructed solution
    sub<i>_k<k>.ckpt     network parameters of subdomain i after Schwarz
                         iteration k (PINN local solver only)
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import platform
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    build_archs,
    build_grid,
    build_problem,
    build_optimizer,
    build_sampler,
    build_schwarz,
    build_transmission,
    build_weights,
    prediction_points,
    resolve_config,
    setup,
)
from .errors import NumericError, UsageError
from .loss import TRAINING_COLUMNS
from .network import TrialNetwork, load_checkpoint, save_checkpoint
from .reference import FdLocalSolver, characteristics_solution, fd_solve
from .swr import GlobalSolution, LocalSolverError, NetworkSnapshot, build_pinn_solvers, residual_history_term, swr_run

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SWRPINN_OUT"
RESIDUAL_COLUMNS = ("schwarz_iter", "residual", "wall_ms", "converged")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v) -> str:
    # repr round-trips doubles exactly
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path: Path, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader]
    return header, np.array(data, dtype=np.float64).reshape(-1, len(header))


def snapshot_name(t: float) -> str:
    return f"snapshot_t{t:g}.csv"


def checkpoint_name(subdomain: int, k: int) -> str:
    return f"sub{subdomain}_k{k}.ckpt"


def snapshot_rows(points: np.ndarray, t: float, u: np.ndarray, extra: dict[str, np.ndarray] | None = None):
    coords = ("x", "y")[: points.shape[1]]
    columns = [*coords, "t", "u", *(extra or {})]
    rows = []
    for i in range(points.shape[0]):
        row = {c: points[i, d] for d, c in enumerate(coords)}
        row["t"], row["u"] = float(t), u[i]
        for k, v in (extra or {}).items():
            row[k] = v[i]
        rows.append(row)
    return columns, rows


@dataclass
class RunOutcome:
    status: int
    out_dir: Path
    manifest: dict | None = None
    message: str = ""


def _prepare_dir(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    leftovers = [p for p in out_dir.iterdir()]
    if not leftovers:
        return
    manifest = out_dir / "manifest.json"
    if not manifest.exists():
        raise UsageError(f"{out_dir} is not empty and holds no previous run")
    # replace a previous run
    old = json.loads(manifest.read_text())
    for name in [*old.get("files", {}), "manifest.json", "diagnostics.json"]:
        (out_dir / name).unlink(missing_ok=True)
    if any(out_dir.iterdir()):
        raise UsageError(f"{out_dir} holds files that do not belong to a run")


def build_solvers(cfg: dict, problem, decomp):
    transmission = build_transmission(cfg)
    if cfg["schwarz"]["local_solver"] == "fd":
        grid = build_grid(cfg)
        dx = (problem.domain.hi[0] - problem.domain.lo[0]) / (grid.nx + 1)
        return [FdLocalSolver(problem, sub, dx, grid.dt, transmission, grid.theta) for sub in decomp.subdomains]
    return build_pinn_solvers(
        problem,
        decomp,
        transmission,
        build_archs(cfg),
        build_sampler(cfg),
        build_optimizer(cfg),
        build_weights(cfg),
        cfg["ic_mode"],
        cfg["seed"],
    )


def execute_run(cfg: dict, out_dir: str | Path, seed: int | None = None, threads: int = 1) -> RunOutcome:
    """Run one experiment and write its artifacts; numeric failures give exit 3."""
    if seed is not None:
        cfg = resolve_config({**cfg, "seed": int(seed)})
    out_dir = Path(out_dir)
    _prepare_dir(out_dir)
    started = time.time()
    t0 = time.perf_counter()
    s = setup(cfg)
    solvers = build_solvers(cfg, s.problem, s.decomp)
    try:
        solution, history = swr_run(s.problem, s.decomp, build_schwarz(cfg, threads), solvers)
    except (LocalSolverError, NumericError) as exc:
        cause = exc.__cause__ if isinstance(exc, LocalSolverError) else exc
        if not isinstance(cause, NumericError):
            raise
        diag = {
            "error": str(exc),
            "subdomain": getattr(exc, "subdomain", None),
            "schwarz_iter": getattr(exc, "iteration", None),
            "last_good_step": getattr(cause, "last_good_step", None),
            "seed": cfg["seed"],
        }
        (out_dir / "diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n")
        return RunOutcome(EXIT_NUMERIC, out_dir, None, str(exc))
    wall = time.perf_counter() - t0

    files = []
    write_csv(out_dir / "residuals.csv", RESIDUAL_COLUMNS, history.rows())
    files.append("residuals.csv")
    curve = sorted(
        (row for solver in solvers for row in getattr(solver, "curve", [])),
        key=lambda r: (r["schwarz_iter"], r["subdomain_id"], r["step"]),
    )
    write_csv(out_dir / "training.csv", TRAINING_COLUMNS, curve)
    files.append("training.csv")
    points = prediction_points(cfg)
    for t in cfg["output"]["times"]:
        u = solution(points, np.full(points.shape[0], float(t)))
        columns, rows = snapshot_rows(points, t, u)
        write_csv(out_dir / snapshot_name(t), columns, rows)
        files.append(snapshot_name(t))
    for k, snaps in enumerate(history.snapshots, start=1):
        for snap in snaps:
            if getattr(snap, "params", None) is not None:
                name = checkpoint_name(snap.subdomain, k)
                save_checkpoint(out_dir / name, snap.params)
                files.append(name)

    final = history.residuals[-1] if history.residuals else None
    manifest = {
        "schema_version": cfg["version"],
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg["seed"],
        "threads": threads,
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "wall_clock_s": wall,
        "convergence": {
            "iterations": history.iterations,
            "converged_at": history.converged_at,
            "plateau_at": history.plateau_at,
            "final_residual": final,
        },
        "config": cfg,
        "files": {name: sha256(out_dir / name) for name in files},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return RunOutcome(EXIT_OK, out_dir, manifest)


def verify_manifest(run_dir: str | Path) -> list[str]:
    """Names of inventory files whose checksum does not match (or that are missing)."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    bad = []
    for name, digest in manifest["files"].items():
        path = run_dir / name
        if not path.exists() or sha256(path) != digest:
            bad.append(name)
    return bad


# loading runs back -----------------------------------------------------------------


def load_solution(run_dir: str | Path) -> tuple[dict, GlobalSolution | None]:
    """Rebuild the final reconstructed network solution from checkpoints.

    Returns ``None`` for the solution when the run used the finite-difference
    local solver (it stores no parameters).
    """
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = manifest["config"]
    s = setup(cfg)
    if cfg["schwarz"]["local_solver"] != "pinn":
        return manifest, None
    snaps = []
    version = manifest["convergence"]["iterations"]
    for sub in s.decomp.subdomains:
        params = load_checkpoint(run_dir / checkpoint_name(sub.index, version))
        trial = TrialNetwork(params.arch, s.problem.u0, cfg["ic_mode"])
        snaps.append(NetworkSnapshot(sub.index, version, trial, params.frozen()))
    return manifest, GlobalSolution(s.decomp, snaps)


def interface_jumps(run_dir: str | Path) -> list[float] | None:
    """Per neighbor pair, ``|| sup_overlap |u_i - u_j| ||_{L2(0,T)}`` of the final iterate."""
    manifest, solution = load_solution(run_dir)
    if solution is None:
        return None
    cfg = manifest["config"]
    decomp = solution.decomp
    snaps = solution.snapshots
    return [
        residual_history_term(
            snaps[i], snaps[j], decomp.overlap(i, j), cfg["problem"]["horizon"], cfg["schwarz"]["n_space"], cfg["schwarz"]["n_time"]
        )
        for i, j in decomp.neighbor_pairs()
    ]


def _domain_measure(cfg: dict) -> float:
    dom = cfg["problem"]["domain"]
    return float(np.prod(np.subtract(dom["hi"], dom["lo"])))


def compare_run(run_dir: str | Path, reference_csv: str | Path) -> dict:
    """Errors of the run's final-time snapshot against a reference CSV on the same grid."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = manifest["config"]
    t_final = max(cfg["output"]["times"])
    head_run, run = read_csv(run_dir / snapshot_name(t_final))
    head_ref, ref = read_csv(Path(reference_csv))
    n_coord = cfg["problem"]["dim"] + 1  # spatial coordinates and t
    if head_ref[:n_coord] != head_run[:n_coord] or "u" not in head_ref:
        raise UsageError(f"reference columns {head_ref} do not match run columns {head_run}")
    ref = ref[np.isclose(ref[:, n_coord - 1], t_final, rtol=0, atol=1e-12)]
    if ref.shape[0] != run.shape[0] or not np.allclose(ref[:, :n_coord], run[:, :n_coord], rtol=0, atol=1e-12):
        raise UsageError("reference and run snapshot use different query grids")
    diff = run[:, head_run.index("u")] - ref[:, head_ref.index("u")]
    jumps = interface_jumps(run_dir)
    return {
        "time": t_final,
        "n_points": int(diff.size),
        "l2_error": math.sqrt(float(np.mean(diff * diff)) * _domain_measure(cfg)),
        "linf_error": float(np.max(np.abs(diff))),
        "interface_jump": None if jumps is None else max(jumps),
        "interface_jumps": jumps,
        "final_residual": manifest["convergence"]["final_residual"],
    }


# reference solutions ----------------------------------------------------------------


def has_characteristics(cfg: dict) -> bool:
    """True when the problem is 1D pure advection-reaction with constant coefficients."""
    p = cfg["problem"]
    scalar = lambda v: isinstance(v, (int, float))  # noqa: E731
    return (
        p["dim"] == 1
        and p.get("nonlocal") is None
        and scalar(p["nu"])
        and p["nu"] == 0
        and scalar(p["advection"][0])
        and scalar(p["reaction"])
        and scalar(p["source"])
        and p["source"] == 0
    )


def reference_table(cfg: dict, method: str | None = None, refine: int = 0):
    """Reference values on the prediction grid at every output time.

    With the finite-difference method and a characteristics oracle available,
    an ``abs_err`` column reports the pointwise error.
    """
    method = method or cfg["reference"]["method"]
    problem = build_problem(cfg)
    points = prediction_points(cfg)
    oracle = None
    if has_characteristics(cfg):
        a, r = float(cfg["problem"]["advection"][0]), float(cfg["problem"]["reaction"])
        oracle = lambda t: characteristics_solution(problem.u0, a, r, points[:, 0], t)  # noqa: E731
    elif method == "characteristics":
        raise UsageError("characteristics need a 1D constant-coefficient problem with nu = 0 and no source")
    field = None
    if method == "fd":
        grid = build_grid(cfg)
        if refine:
            scale = 2**refine
            ny = None if grid.ny is None else (grid.ny + 1) * scale - 1
            grid = replace(grid, nx=(grid.nx + 1) * scale - 1, ny=ny, dt=grid.dt / scale)
        field = fd_solve(problem, grid, include_nonlocal=problem.nonlocal_term is not None)
    columns, rows = None, []
    for t in cfg["output"]["times"]:
        tt = np.full(points.shape[0], float(t))
        u = oracle(t) if method == "characteristics" else field.values(points, tt)
        extra = {"abs_err": np.abs(u - oracle(t))} if (method == "fd" and oracle is not None) else None
        columns, r_ = snapshot_rows(points, t, u, extra)
        rows.extend(r_)
    return columns, rows
