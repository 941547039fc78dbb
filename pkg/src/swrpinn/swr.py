"""Schwarz waveform relaxation driver and its convergence-theory formulas.

Each Schwarz iteration publishes the previous iterate of every subdomain as
an immutable, versioned snapshot, solves all subdomains concurrently
against those frozen neighbors, joins them at a barrier and measures the
mismatch on the overlaps.
"""

from __future__ import annotations

import cmath
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError
from .loss import (
    CollocationSet,
    LocalContext,
    LossWeights,
    assemble_local_loss,
    assemble_nonlocal_loss,
)
from .network import NetworkArchitecture, NetworkParams, TrialNetwork, init_params, trial_eval
from .problem import Box, Decomposition, DerivBundle, PdeProblem, TransmissionCondition, derivative_bundle
from .training import (
    OptimizerConfig,
    OptimizerState,
    SamplerConfig,
    iteration_rng,
    sample_collocation,
    train_subdomain,
)

log = logging.getLogger(__name__)


class DomainError(ValueError):
    """A theory formula was evaluated outside its domain of validity."""


class LocalSolverError(RuntimeError):
    def __init__(self, subdomain: int, iteration: int, cause: Exception):
        self.subdomain, self.iteration = subdomain, iteration
        super().__init__(f"local solve failed on subdomain {subdomain} at Schwarz iteration {iteration}: {cause}")


# snapshots --------------------------------------------------------------------------


class Snapshot(Protocol):
    subdomain: int
    version: int

    def values(self, points: np.ndarray, t: np.ndarray) -> np.ndarray: ...

    def bundle(self, x: Sequence[np.ndarray], t: np.ndarray, need_grad: bool) -> DerivBundle: ...


@dataclass(frozen=True)
class NetworkSnapshot:
    """Published trial network of one subdomain; ``params=None`` is the zero iterate."""

    subdomain: int
    version: int
    trial: TrialNetwork
    params: NetworkParams | None = None

    @property
    def is_zero(self) -> bool:
        return self.params is None

    def values(self, points: np.ndarray, t: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (points.shape[0],))
        if self.is_zero:
            return np.zeros(points.shape[0])
        return np.asarray(trial_eval(self.trial, self.params, [points[:, i] for i in range(points.shape[1])], t))

    def bundle(self, x, t, need_grad: bool) -> DerivBundle:
        t = np.asarray(t, dtype=np.float64)
        if self.is_zero:
            z = np.zeros_like(t)
            return DerivBundle(z, z, [z] * len(x), z)
        fn = lambda xs, tt: trial_eval(self.trial, self.params, xs, tt)  # noqa: E731
        if need_grad:
            return derivative_bundle(fn, x, t, need_time=False)
        return DerivBundle(np.asarray(fn(list(x), t)))


class PinnLocalSolver:
    """Trains one subdomain's network each Schwarz iteration, warm-started."""

    def __init__(
        self,
        ctx: LocalContext,
        sampler: SamplerConfig,
        optimizer: OptimizerConfig,
        weights: LossWeights,
        seed: int = 0,
    ):
        self.ctx = ctx
        self.sampler = sampler
        self.optimizer = optimizer
        self.weights = weights
        self.seed = int(seed)
        self.params: NetworkParams | None = None
        self.state = OptimizerState()
        self.curve: list[dict] = []
        self.clip_events = 0

    @property
    def index(self) -> int:
        return self.ctx.subdomain.index

    def zero_snapshot(self) -> NetworkSnapshot:
        return NetworkSnapshot(self.index, 0, self.ctx.trial, None)

    def solve(self, k: int, frozen: dict[int, Snapshot]) -> NetworkSnapshot:
        if self.params is None:
            self.params = init_params(self.ctx.trial.arch, _salted_seed(self.seed, self.index))
        rng = iteration_rng(self.seed, self.index, k)
        colloc = sample_collocation(self.ctx.subdomain, self.ctx.problem.horizon, self.sampler, rng)
        assemble = assemble_nonlocal_loss if self.ctx.problem.nonlocal_term is not None else assemble_local_loss

        def loss_fn(bound: NetworkParams, batch: CollocationSet):
            return assemble(self.ctx, bound, frozen, batch, self.weights)

        self.params, result = train_subdomain(loss_fn, self.params, colloc, self.optimizer, self.state, rng)
        self.clip_events += result.clip_events
        for row in result.curve:
            self.curve.append({"schwarz_iter": k, "subdomain_id": self.index, **row})
        return NetworkSnapshot(self.index, k, self.ctx.trial, self.params.frozen())


def _salted_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), index, 0xC0FFEE]).generate_state(1)[0])


def build_pinn_solvers(
    problem: PdeProblem,
    decomp: Decomposition,
    transmission: TransmissionCondition,
    archs: Sequence[NetworkArchitecture],
    sampler: SamplerConfig,
    optimizer: OptimizerConfig,
    weights: LossWeights,
    ic_mode: str = "hard",
    seed: int = 0,
) -> list[PinnLocalSolver]:
    cores = tuple(s.core for s in decomp.subdomains)
    solvers = []
    for sub, arch in zip(decomp.subdomains, archs):
        trial = TrialNetwork(arch, problem.u0, ic_mode)
        ctx = LocalContext(problem, sub, trial, transmission, cores)
        solvers.append(PinnLocalSolver(ctx, sampler, optimizer, weights, seed))
    return solvers


# driver ------------------------------------------------------------------------------


@dataclass(frozen=True)
class SchwarzConfig:
    max_iters: int = 10
    delta_sc: float = 1e-3
    transmission: TransmissionCondition = field(default_factory=TransmissionCondition)
    local_solver: str = "pinn"
    n_space: int = 101
    n_time: int = 101
    stagnation_rel: float = 0.01
    stagnation_count: int = 3
    threads: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.delta_sc > 0:
            raise ConfigError("delta_sc must be > 0")
        if self.local_solver not in ("pinn", "fd"):
            raise ConfigError(f"unknown local solver {self.local_solver!r}")


@dataclass
class SchwarzHistory:
    residuals: list[float] = field(default_factory=list)
    snapshots: list[list] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    converged_at: int | None = None
    plateau_at: int | None = None
    reads: list[tuple[int, int, int, int]] = field(default_factory=list)  # (k, reader, neighbor, version)

    @property
    def iterations(self) -> int:
        return len(self.snapshots)

    def rows(self) -> list[dict]:
        out = []
        for k, (res, ms) in enumerate(zip(self.residuals, self.wall_ms), start=1):
            out.append(
                {
                    "schwarz_iter": k,
                    "residual": res,
                    "wall_ms": ms,
                    "converged": int(self.converged_at is not None and k >= self.converged_at),
                }
            )
        return out


@dataclass
class GlobalSolution:
    decomp: Decomposition
    snapshots: list

    def __call__(self, points: np.ndarray, t) -> np.ndarray:
        return reconstruct_global(self.snapshots, self.decomp, points, t)


def residual_history_term(left, right, overlap: Box, horizon: float, n_space: int = 101, n_time: int = 101) -> float:
    """``|| sup_overlap |left - right| ||_{L2(0,T)}`` on uniform grids.

    The sup is taken over ``n_space`` points per non-degenerate axis of the
    overlap box, the time norm by the trapezoid rule on ``n_time`` points.
    """
    axes = [np.array([lo]) if lo == hi else np.linspace(lo, hi, n_space) for lo, hi in zip(overlap.lo, overlap.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    times = np.linspace(0.0, horizon, n_time)
    m = pts.shape[0]
    all_pts = np.tile(pts, (n_time, 1))
    all_t = np.repeat(times, m)
    diff = np.abs(np.asarray(left.values(all_pts, all_t)) - np.asarray(right.values(all_pts, all_t)))
    sup = diff.reshape(n_time, m).max(axis=1)
    if not np.all(np.isfinite(sup)):
        raise NumericError("residual", "non-finite overlap mismatch")
    if n_time == 1:
        return float(sup[0])
    return float(math.sqrt(np.trapezoid(sup * sup, times)))


def schwarz_residual(snapshots, decomp: Decomposition, horizon: float, n_space=101, n_time=101) -> float:
    """Residual summed over neighbor pairs, each pair counted once per member subdomain."""
    total = 0.0
    for i, j in decomp.neighbor_pairs():
        term = residual_history_term(snapshots[i], snapshots[j], decomp.overlap(i, j), horizon, n_space, n_time)
        total += 2.0 * term
    return total


def reconstruct_global(snapshots, decomp: Decomposition, points: np.ndarray, t) -> np.ndarray:
    """Evaluate each point with its covering subdomains, averaging on overlaps."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[-1] != decomp.domain.dim:
        points = points.reshape(-1, decomp.domain.dim)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (points.shape[0],))
    if not np.all(decomp.domain.contains(points, tol=1e-12)):
        raise UsageError("query point outside the domain")
    acc = np.zeros(points.shape[0])
    count = np.zeros(points.shape[0])
    for sub, snap in zip(decomp.subdomains, snapshots):
        inside = sub.box.contains(points, tol=1e-12)
        if np.any(inside):
            acc[inside] += snap.values(points[inside], t[inside])
            count[inside] += 1
    return acc / count


def swr_run(
    problem: PdeProblem,
    decomp: Decomposition,
    cfg: SchwarzConfig,
    solvers: Sequence,
    on_iteration=None,
) -> tuple[GlobalSolution, SchwarzHistory]:
    """Barrier-synchronized Schwarz iterations over ``solvers`` (one per subdomain).

    Every solver exposes ``zero_snapshot()`` and ``solve(k, frozen)``.
    """
    if len(solvers) != decomp.n_sub:
        raise ConfigError("need exactly one local solver per subdomain")
    if decomp.domain != problem.domain:
        raise ConfigError("decomposition does not cover the problem domain")
    history = SchwarzHistory()
    current = [s.zero_snapshot() for s in solvers]
    max_iters = 1 if decomp.n_sub == 1 else cfg.max_iters
    stagnant = 0

    def work(i: int, k: int, published):
        frozen = {}
        for face in decomp.subdomains[i].interfaces:
            frozen[face.neighbor] = published[face.neighbor]
        for j in range(decomp.n_sub):
            if j != i and j not in frozen:
                frozen[j] = published[j]
        for j, snap in frozen.items():
            if snap.version != k - 1:
                raise RuntimeError(f"barrier violated: subdomain {i} read version {snap.version} of {j} at k={k}")
        reads = [(k, i, j, snap.version) for j, snap in frozen.items()]
        try:
            return solvers[i].solve(k, frozen), reads
        except Exception as exc:  # surfaced with location
            raise LocalSolverError(i, k, exc) from exc

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        for k in range(1, max_iters + 1):
            t0 = time.perf_counter()
            published = list(current)
            futures = [pool.submit(work, i, k, published) for i in range(decomp.n_sub)]
            results = [f.result() for f in futures]  # barrier
            current = [r[0] for r in results]
            for _, reads in results:
                history.reads.extend(reads)
            history.snapshots.append(current)
            if decomp.n_sub == 1:
                history.wall_ms.append((time.perf_counter() - t0) * 1e3)
                break
            res = schwarz_residual(current, decomp, problem.horizon, cfg.n_space, cfg.n_time)
            history.residuals.append(res)
            history.wall_ms.append((time.perf_counter() - t0) * 1e3)
            log.info("Schwarz iteration %d: residual %.6e", k, res)
            if on_iteration is not None:
                on_iteration(k, res, current)
            if res <= cfg.delta_sc:
                history.converged_at = k
                break
            if len(history.residuals) > 1:
                prev = history.residuals[-2]
                stagnant = stagnant + 1 if abs(res - prev) < cfg.stagnation_rel * res else 0
                if stagnant >= cfg.stagnation_count:
                    history.plateau_at = k
                    break
    return GlobalSolution(decomp, current), history


# theory -------------------------------------------------------------------------------


def _check_nu(nu: float) -> None:
    if not nu > 0:
        raise DomainError(f"nu={nu}: the contraction factors divide by nu and need nu > 0")


def _root(a: float, nu: float, r: float) -> float:
    disc = a * a + 4.0 * nu * r
    if disc < 0:
        raise DomainError(f"a^2 + 4 nu r = {disc} < 0")
    return math.sqrt(disc)


def cswr_contraction(a: float, nu: float, r: float, eps: float) -> float:
    """Classical (Dirichlet) SWR contraction ``exp(-(eps/nu) sqrt(a^2 + 4 nu r))``."""
    _check_nu(nu)
    return math.exp(-(eps / nu) * _root(a, nu, r))


_SQRT_PI = math.sqrt(math.pi)


def erfc(x: float) -> float:
    """Complementary error function to ~1e-15 absolute accuracy.

    Positive-term series for erf below 3, Lentz continued fraction above.
    """
    if math.isnan(x):
        return math.nan
    if x < 0:
        return 2.0 - erfc(-x)
    if x < 3.0:
        x2 = x * x
        term = x
        s = x
        n = 0
        while term > 1e-17 * s:
            n += 1
            term *= 2.0 * x2 / (2 * n + 1)
            s += term
        return 1.0 - 2.0 / _SQRT_PI * math.exp(-x2) * s
    if x > 27.0:
        return 0.0
    # erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    tiny = 1e-300
    f = x
    c, d = x, 0.0
    for n in range(1, 500):
        an = n / 2.0
        d = x + an * d
        d = tiny if d == 0 else d
        c = x + an / c
        c = tiny if c == 0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x * x) / (_SQRT_PI * f)


def superlinear_bound(eps: float, nu: float, horizon: float) -> float:
    """Finite-time bound ``erfc(eps / sqrt(nu T))``."""
    _check_nu(nu)
    if not horizon > 0:
        raise DomainError("horizon T must be > 0")
    return erfc(eps / math.sqrt(nu * horizon))


def robin_factor(a: float, nu: float, r: float, lam: float, omega: np.ndarray) -> np.ndarray:
    """``|(z - lam) / (z + lam)|`` with ``z`` the principal root of ``a^2 + 4 nu (r + i omega)``."""
    z = np.sqrt(a * a + 4.0 * nu * (r + 1j * np.asarray(omega, dtype=np.float64)))
    return np.abs((z - lam) / (z + lam))


def _band(omega_min: float, omega_max: float, n: int) -> np.ndarray:
    w = np.linspace(-omega_max, omega_max, 2 * n + 1)
    w = w[np.abs(w) >= omega_min]
    # the band edges carry the sup in the usual monotone cases
    return np.concatenate([w, [-omega_min, omega_min, -omega_max, omega_max]])


def _sup_factor(a, nu, r, lam, omega_min, omega_max, n0=64, tol=1e-10, max_n=2**20) -> float:
    n = n0
    prev = float(np.max(robin_factor(a, nu, r, lam, _band(omega_min, omega_max, n))))
    while n < max_n:
        n *= 2
        cur = float(np.max(robin_factor(a, nu, r, lam, _band(omega_min, omega_max, n))))
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    return prev


def robin_contraction(
    a: float,
    nu: float,
    r: float,
    eps: float,
    lam: float,
    omega_max: float = 1e3,
    omega_min: float = 0.0,
) -> float:
    """Robin SWR contraction: sup of the Robin factor over the frequency band times the overlap factor.

    The sup is taken on a symmetric grid over ``omega_min <= |omega| <= omega_max``
    that is doubled until it moves by less than 1e-10.
    """
    _check_nu(nu)
    if not lam > 0:
        raise DomainError("lambda must be > 0")
    if not (0 <= omega_min <= omega_max):
        raise DomainError("need 0 <= omega_min <= omega_max")
    return _sup_factor(a, nu, r, lam, omega_min, omega_max) * cswr_contraction(a, nu, r, eps)


def optimize_robin_lambda(
    a: float,
    nu: float,
    r: float,
    eps: float,
    omega_max: float = 1e3,
    omega_min: float = 0.0,
    lam_max: float | None = None,
    tol: float = 1e-8,
) -> float:
    """Golden-section search (in log lambda) for the lambda minimizing the Robin contraction.

    A dense scan cross-checks the result; if it finds a better value the
    objective is not unimodal, a warning is issued and the scan's bracket is
    refined instead.
    """
    _check_nu(nu)
    _root(a, nu, r)
    if lam_max is None:
        zmax = abs(cmath.sqrt(a * a + 4.0 * nu * (r + 1j * omega_max)))
        lam_max = 2.0 * zmax + 1.0
    grid = _band(omega_min, omega_max, 2048)

    def f(log_lam: float) -> float:
        return float(np.max(robin_factor(a, nu, r, math.exp(log_lam), grid)))

    lo, hi = math.log(lam_max) - 14.0 * math.log(10.0), math.log(lam_max)
    best = _golden(f, lo, hi, tol)
    scan = np.linspace(lo, hi, 400)
    vals = np.array([f(s) for s in scan])
    j = int(np.argmin(vals))
    if vals[j] < f(best) - 1e-9:
        warnings.warn("Robin contraction is not unimodal in lambda; falling back to a dense scan", RuntimeWarning)
        best = _golden(f, scan[max(j - 1, 0)], scan[min(j + 1, len(scan) - 1)], tol)
    return math.exp(best)


def _golden(f, lo: float, hi: float, tol: float) -> float:
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


__all__ = [
    "DomainError",
    "GlobalSolution",
    "NetworkSnapshot",
    "PinnLocalSolver",
    "SchwarzConfig",
    "SchwarzHistory",
    "build_pinn_solvers",
    "cswr_contraction",
    "erfc",
    "optimize_robin_lambda",
    "reconstruct_global",
    "residual_history_term",
    "robin_contraction",
    "schwarz_residual",
    "superlinear_bound",
    "swr_run",
]
