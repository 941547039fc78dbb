"""Independent reference solutions: characteristics and finite differences.

The 1D solver is a theta-scheme (Crank-Nicolson by default) on a uniform
node grid whose end nodes carry Dirichlet or Robin data; 2D uses explicit
Euler steps under a CFL check. Either can serve as an SWR local solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericError
from .problem import Box, DerivBundle, PdeProblem, Subdomain, TransmissionCondition, convolution_quadrature


@dataclass(frozen=True)
class FdGrid:
    nx: int
    dt: float
    theta: float = 0.5
    ny: int | None = None

    def __post_init__(self):
        if self.nx < 1 or (self.ny is not None and self.ny < 1):
            raise ConfigError("grid needs at least one interior node per axis")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]")


@dataclass
class BoundarySide:
    """Data on one end: ``kind`` dirichlet (u = g) or robin (lam u + n.grad u = g)."""

    kind: str = "dirichlet"
    values: np.ndarray | Callable[[np.ndarray], np.ndarray] | None = None  # g at the time levels
    lam: float = 0.0

    def at(self, times: np.ndarray) -> np.ndarray:
        if self.values is None:
            return np.zeros_like(times)
        if callable(self.values):
            return np.asarray(self.values(times), dtype=np.float64)
        return np.asarray(self.values, dtype=np.float64)


@dataclass
class SpaceTimeField:
    """Nodal values ``u[n, i]`` (1D) or ``u[n, i, j]`` (2D) at ``times[n]``."""

    axes: list[np.ndarray]
    times: np.ndarray
    u: np.ndarray
    _grad: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def at_time(self, t: float) -> np.ndarray:
        n = int(np.argmin(np.abs(self.times - t)))
        return self.u[n]

    def _interp(self, data: np.ndarray, points: np.ndarray, t: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (points.shape[0],))
        nt = len(self.times)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, max(nt - 2, 0))
        wt = np.zeros_like(t) if nt == 1 else np.clip((t - self.times[k]) / (self.times[k + 1] - self.times[k]), 0.0, 1.0)
        idx, wts = [], []
        for d, ax in enumerate(self.axes):
            j = np.clip(np.searchsorted(ax, points[:, d], side="right") - 1, 0, len(ax) - 2)
            w = np.clip((points[:, d] - ax[j]) / (ax[j + 1] - ax[j]), 0.0, 1.0)
            idx.append(j)
            wts.append(w)

        def spatial(level):
            if self.dim == 1:
                (j,), (w,) = idx, wts
                return (1 - w) * data[level, j] + w * data[level, j + 1]
            (j0, j1), (w0, w1) = idx, wts
            return (
                (1 - w0) * (1 - w1) * data[level, j0, j1]
                + w0 * (1 - w1) * data[level, j0 + 1, j1]
                + (1 - w0) * w1 * data[level, j0, j1 + 1]
                + w0 * w1 * data[level, j0 + 1, j1 + 1]
            )

        lo = spatial(k)
        if nt == 1:
            return lo
        return (1 - wt) * lo + wt * spatial(k + 1)

    def values(self, points: np.ndarray, t) -> np.ndarray:
        return self._interp(self.u, points, t)

    def gradient_arrays(self) -> list[np.ndarray]:
        # second-order differences: centered inside, one-sided at the ends
        if self._grad is None:
            self._grad = [np.gradient(self.u, ax, axis=d + 1, edge_order=2) for d, ax in enumerate(self.axes)]
        return self._grad

    def bundle(self, x: Sequence[np.ndarray], t, need_grad: bool) -> DerivBundle:
        pts = np.stack([np.asarray(c, dtype=np.float64) for c in x], axis=-1)
        value = self.values(pts, t)
        if not need_grad:
            return DerivBundle(value)
        grad = [self._interp(g, pts, t) for g in self.gradient_arrays()]
        return DerivBundle(value, None, grad, None)


def characteristics_solution(u0: Callable, a: float, r: float, x, t):
    """Exact solution ``exp(r t) u0(x + a t)`` of ``u_t = a u_x + r u``."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return np.exp(r * t) * np.asarray(u0([x + a * t]))


def _time_levels(horizon: float, dt: float) -> np.ndarray:
    nt = max(1, int(round(horizon / dt)))
    return np.linspace(0.0, horizon, nt + 1)


def _as_array(v, n):
    return np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)).copy()


def _operator_1d(problem: PdeProblem, x: np.ndarray, dx: float) -> sp.csr_matrix:
    """Spatial operator ``nu u_xx + a u_x + r u`` on interior rows (boundary rows zero)."""
    n = x.size
    xs = [x]
    nu = _as_array(problem.nu(xs), n)
    a = _as_array(problem.advection(xs)[0], n)
    r = _as_array(problem.reac(xs), n)
    lower, diag, upper = np.zeros(n), np.zeros(n), np.zeros(n)
    lower += nu / dx**2
    upper += nu / dx**2
    diag += -2.0 * nu / dx**2 + r
    with np.errstate(divide="ignore", invalid="ignore"):
        peclet = np.where(nu > 0, np.abs(a) * dx / np.where(nu > 0, nu, 1.0), 0.0)
    upwind = peclet > 2.0
    # u_t = a u_x moves information from the right when a > 0
    fwd = upwind & (a > 0)
    bwd = upwind & (a < 0)
    cen = ~upwind
    upper += np.where(cen, a / (2 * dx), 0.0) + np.where(fwd, a / dx, 0.0)
    lower += np.where(cen, -a / (2 * dx), 0.0) + np.where(bwd, -a / dx, 0.0)
    diag += np.where(fwd, -a / dx, 0.0) + np.where(bwd, a / dx, 0.0)
    for arr in (lower, diag, upper):
        arr[0] = arr[-1] = 0.0
    return sp.diags([lower[1:], diag, upper[:-1]], [-1, 0, 1], shape=(n, n), format="csr")


def _boundary_rows(n: int, dx: float, left: BoundarySide, right: BoundarySide) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for side, bc in ((-1, left), (1, right)):
        i = 0 if side < 0 else n - 1
        if bc.kind == "dirichlet":
            rows.append(i), cols.append(i), vals.append(1.0)
        elif bc.kind == "robin":
            # lam u + n . u_x with a one-sided second-order difference
            step = 1 if side < 0 else -1
            c = np.array([3.0, -4.0, 1.0]) / (2.0 * dx)
            for m, cm in enumerate(c):
                rows.append(i), cols.append(i + step * m), vals.append(cm + (bc.lam if m == 0 else 0.0))
        else:
            raise ConfigError(f"unknown boundary kind {bc.kind!r}")
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _nonlocal_1d(problem: PdeProblem, x: np.ndarray, times_u: tuple[float, np.ndarray]) -> np.ndarray:
    t, u = times_u
    field_ = SpaceTimeField([x], np.array([t]), u[None, :])

    def fn(points, tt):
        inside = (points[:, 0] >= x[0]) & (points[:, 0] <= x[-1])
        out = np.zeros(points.shape[0])
        out[inside] = field_.values(points[inside], tt[inside])
        return out

    pts = x[1:-1, None]
    res = convolution_quadrature(problem.nonlocal_term, fn, pts, np.full(pts.shape[0], t), None, problem.domain)
    out = np.zeros_like(x)
    out[1:-1] = res.value
    return out


def fd_solve(
    problem: PdeProblem,
    grid: FdGrid,
    boundary: dict[str, BoundarySide] | None = None,
    box: Box | None = None,
    include_nonlocal: bool = False,
) -> SpaceTimeField:
    """Solve on ``box`` (default: the whole domain) with the given end data.

    ``boundary`` maps ``"left"``/``"right"`` (1D) or ``"x-"``, ``"x+"``,
    ``"y-"``, ``"y+"`` (2D) to boundary data; missing sides are homogeneous
    Dirichlet.
    """
    box = problem.domain if box is None else box
    boundary = boundary or {}
    if problem.dim == 2:
        return _fd_solve_2d(problem, grid, boundary, box)
    lo, hi = box.lo[0], box.hi[0]
    n = grid.nx + 2
    x = np.linspace(lo, hi, n)
    dx = (hi - lo) / (grid.nx + 1)
    times = _time_levels(problem.horizon, grid.dt)
    dt = times[1] - times[0]
    nu_max = float(np.max(_as_array(problem.nu([x]), n)))
    if grid.theta < 0.5 and nu_max * dt / dx**2 > 0.5:
        raise ConfigError(f"CFL violated: nu dt / dx^2 = {nu_max * dt / dx**2:.3g} > 0.5")
    left = boundary.get("left", BoundarySide())
    right = boundary.get("right", BoundarySide())
    L = _operator_1d(problem, x, dx)
    interior = np.ones(n)
    interior[0] = interior[-1] = 0.0
    I_int = sp.diags(interior)
    A = (I_int - grid.theta * dt * L + _boundary_rows(n, dx, left, right)).tocsc()
    B = (I_int + (1.0 - grid.theta) * dt * L).tocsr()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise NumericError("fd_solve", f"singular system: {exc}") from None
    g_left, g_right = left.at(times), right.at(times)
    u = np.zeros((len(times), n))
    u0 = np.asarray(problem.u0([x]), dtype=np.float64)
    u[0] = np.broadcast_to(u0, (n,))
    # the initial profile is replaced by boundary data only from the first step on
    f_prev = _as_array(problem.source([x], times[0]), n) * interior
    for k in range(1, len(times)):
        f_next = _as_array(problem.source([x], times[k]), n) * interior
        rhs = B @ u[k - 1] + dt * (grid.theta * f_next + (1.0 - grid.theta) * f_prev)
        if include_nonlocal and problem.nonlocal_term is not None:
            rhs = rhs + dt * _nonlocal_1d(problem, x, (times[k - 1], u[k - 1]))
        rhs[0], rhs[-1] = g_left[k], g_right[k]
        u[k] = lu.solve(rhs)
        f_prev = f_next
    if not np.all(np.isfinite(u)):
        raise NumericError("fd_solve", "non-finite solution")
    return SpaceTimeField([x], times, u)


def fd_solve_nonlocal(problem: PdeProblem, grid: FdGrid, boundary=None, box=None) -> SpaceTimeField:
    """:func:`fd_solve` with the convolution term treated explicitly in time."""
    if problem.nonlocal_term is None:
        raise ConfigError("problem has no nonlocal term")
    return fd_solve(problem, grid, boundary, box, include_nonlocal=True)


def _fd_solve_2d(problem: PdeProblem, grid: FdGrid, boundary, box: Box) -> SpaceTimeField:
    ny = grid.ny if grid.ny is not None else grid.nx
    x = np.linspace(box.lo[0], box.hi[0], grid.nx + 2)
    y = np.linspace(box.lo[1], box.hi[1], ny + 2)
    dx, dy = x[1] - x[0], y[1] - y[0]
    times = _time_levels(problem.horizon, grid.dt)
    dt = times[1] - times[0]
    X, Y = np.meshgrid(x, y, indexing="ij")
    xs = [X, Y]
    nu = np.broadcast_to(np.asarray(problem.nu(xs), dtype=np.float64), X.shape)
    ax, ay = (np.broadcast_to(np.asarray(c, dtype=np.float64), X.shape) for c in problem.advection(xs))
    r = np.broadcast_to(np.asarray(problem.reac(xs), dtype=np.float64), X.shape)
    diff_number = float(np.max(nu)) * dt * (1.0 / dx**2 + 1.0 / dy**2)
    adv_number = dt * (float(np.max(np.abs(ax))) / dx + float(np.max(np.abs(ay))) / dy)
    if diff_number > 0.5 or adv_number > 1.0:
        raise ConfigError(f"CFL violated for explicit 2D stepping (diffusion {diff_number:.3g}, advection {adv_number:.3g})")
    u = np.zeros((len(times), *X.shape))
    u[0] = np.broadcast_to(np.asarray(problem.u0(xs), dtype=np.float64), X.shape)
    sides = {k: boundary.get(k, BoundarySide()) for k in ("x-", "x+", "y-", "y+")}
    for side in sides.values():
        if side.kind != "dirichlet":
            raise ConfigError("2D reference solver supports Dirichlet boundary data only")
    for k in range(1, len(times)):
        p = u[k - 1]
        lap = np.zeros_like(p)
        gx = np.zeros_like(p)
        gy = np.zeros_like(p)
        c = (slice(1, -1), slice(1, -1))
        lap[c] = (p[2:, 1:-1] - 2 * p[1:-1, 1:-1] + p[:-2, 1:-1]) / dx**2 + (
            p[1:-1, 2:] - 2 * p[1:-1, 1:-1] + p[1:-1, :-2]
        ) / dy**2
        gx[c] = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * dx)
        gy[c] = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * dy)
        f = np.broadcast_to(np.asarray(problem.source(xs, times[k - 1]), dtype=np.float64), X.shape)
        nxt = p + dt * (nu * lap + ax * gx + ay * gy + r * p + f)
        nxt[0, :] = _face_values(sides["x-"], y, times[k])
        nxt[-1, :] = _face_values(sides["x+"], y, times[k])
        nxt[:, 0] = _face_values(sides["y-"], x, times[k])
        nxt[:, -1] = _face_values(sides["y+"], x, times[k])
        u[k] = nxt
    if not np.all(np.isfinite(u)):
        raise NumericError("fd_solve", "non-finite solution")
    return SpaceTimeField([x, y], times, u)


def _face_values(side: BoundarySide, coords: np.ndarray, t: float) -> np.ndarray:
    if side.values is None:
        return np.zeros_like(coords)
    return np.broadcast_to(np.asarray(side.values(coords, t), dtype=np.float64), coords.shape)


# SWR local solver -------------------------------------------------------------------


@dataclass(frozen=True)
class FdSnapshot:
    subdomain: int
    version: int
    field: SpaceTimeField | None = None

    def values(self, points, t):
        points = np.atleast_2d(points)
        if self.field is None:
            return np.zeros(points.shape[0])
        return self.field.values(points, t)

    def bundle(self, x, t, need_grad: bool) -> DerivBundle:
        t = np.asarray(t, dtype=np.float64)
        if self.field is None:
            z = np.zeros_like(t)
            return DerivBundle(z, z, [z] * len(x), z)
        return self.field.bundle(x, t, need_grad)


class FdLocalSolver:
    """Finite-difference solve of one 1D subdomain with neighbor transmission data.

    The node spacing ``dx`` is shared with the global grid so subdomain nodes
    coincide with global nodes.
    """

    def __init__(self, problem: PdeProblem, sub: Subdomain, dx: float, dt: float, transmission: TransmissionCondition, theta: float = 0.5):
        if problem.dim != 1:
            raise ConfigError("the finite-difference SWR local solver is 1D only")
        self.problem, self.sub, self.tc = problem, sub, transmission
        width = sub.box.hi[0] - sub.box.lo[0]
        cells = int(round(width / dx))
        if not math.isclose(cells * dx, width, rel_tol=1e-9, abs_tol=1e-12):
            raise ConfigError(f"subdomain width {width} is not a multiple of dx={dx}")
        self.grid = FdGrid(cells - 1, dt, theta)
        self.times = _time_levels(problem.horizon, dt)

    @property
    def index(self) -> int:
        return self.sub.index

    def zero_snapshot(self) -> FdSnapshot:
        return FdSnapshot(self.index, 0, None)

    def _side(self, face, frozen) -> BoundarySide:
        nb = frozen[face.neighbor]
        xs = [np.full_like(self.times, face.position)]
        bundle = nb.bundle(xs, self.times, self.tc.needs_gradient)
        if self.tc.kind == "dirichlet":
            return BoundarySide("dirichlet", np.asarray(bundle.value))
        g = self.tc.lam * np.asarray(bundle.value) + face.side * np.asarray(bundle.grad[0])
        return BoundarySide("robin", g, self.tc.lam)

    def solve(self, k: int, frozen) -> FdSnapshot:
        boundary = {}
        for face in self.sub.interfaces:
            boundary["left" if face.side < 0 else "right"] = self._side(face, frozen)
        return FdSnapshot(self.index, k, fd_solve(self.problem, self.grid, boundary, self.sub.box))
