"""PDE definition, domain decomposition and transmission operators.

The equation is

    du/dt = nu(x) Lap u + a(x) . grad u + r(x) u + f(x, t) [+ (u * rho)(x)]

on an axis-aligned box with homogeneous Dirichlet data on its boundary.
Coefficient functions receive a list of spatial coordinate arrays; the
initial condition must also accept hyper-duals so its derivatives enter
hard-constrained trial functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import HyperDual
from .errors import ConfigError, UsageError

Coords = Sequence  # list of per-axis arrays (or hyper-duals for u0)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ConfigError("box bounds have different dimensions")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ConfigError(f"empty box {self.lo} -> {self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Closed membership of points ``x`` with shape ``(..., dim)``."""
        x = np.asarray(x)
        return np.all((x >= np.asarray(self.lo) - tol) & (x <= np.asarray(self.hi) + tol), axis=-1)

    def contains_half_open(self, x: np.ndarray) -> np.ndarray:
        """Membership in ``[lo, hi)``; adjacent boxes then partition space exactly."""
        x = np.asarray(x)
        return np.all((x >= np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=-1)


@dataclass(frozen=True)
class Face:
    """Face ``x[axis] == position`` of a subdomain box."""

    axis: int
    side: int  # -1 low face, +1 high face; also the outward normal's sign
    position: float
    box: Box  # the face itself as a degenerate box
    neighbor: int | None = None

    @property
    def normal(self) -> np.ndarray:
        n = np.zeros(self.box.dim)
        n[self.axis] = self.side
        return n


@dataclass(frozen=True)
class Subdomain:
    index: int
    box: Box
    core: Box
    interfaces: tuple[Face, ...]
    external_faces: tuple[Face, ...]


@dataclass(frozen=True)
class Decomposition:
    domain: Box
    eps: float
    subdomains: tuple[Subdomain, ...]

    @property
    def n_sub(self) -> int:
        return len(self.subdomains)

    def neighbor_pairs(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(self.n_sub - 1)]

    def overlap(self, i: int, j: int) -> Box:
        """Closure of the intersection of two neighboring subdomains."""
        a, b = self.subdomains[i].box, self.subdomains[j].box
        lo = tuple(max(p, q) for p, q in zip(a.lo, b.lo))
        hi = tuple(min(p, q) for p, q in zip(a.hi, b.hi))
        return Box(lo, hi)


def _faces(box: Box, domain: Box, owners: Callable[[int, int], int | None]):
    interfaces, external = [], []
    for axis in range(box.dim):
        for side in (-1, 1):
            pos = box.lo[axis] if side < 0 else box.hi[axis]
            lo, hi = list(box.lo), list(box.hi)
            lo[axis] = hi[axis] = pos
            face_box = Box(tuple(lo), tuple(hi))
            boundary = domain.lo[axis] if side < 0 else domain.hi[axis]
            if pos == boundary:
                external.append(Face(axis, side, pos, face_box))
            else:
                interfaces.append(Face(axis, side, pos, face_box, owners(axis, side)))
    return tuple(interfaces), tuple(external)


def split_decomposition(domain: Box, n_sub: int, eps: float) -> Decomposition:
    """Equal strips along the first axis, each extended by ``eps/2`` into its neighbors."""
    if n_sub < 1:
        raise ConfigError("n_sub must be >= 1")
    if eps < 0:
        raise ConfigError("overlap eps must be >= 0")
    width = (domain.hi[0] - domain.lo[0]) / n_sub
    if n_sub > 1 and eps >= width:
        raise ConfigError(f"overlap eps={eps} must be smaller than the strip width {width}")
    cuts = [domain.lo[0] + k * width for k in range(n_sub + 1)]
    cuts[-1] = domain.hi[0]
    subs = []
    for i in range(n_sub):
        core_lo, core_hi = list(domain.lo), list(domain.hi)
        core_lo[0], core_hi[0] = cuts[i], cuts[i + 1]
        lo, hi = list(core_lo), list(core_hi)
        if i > 0:
            lo[0] = cuts[i] - eps / 2
        if i < n_sub - 1:
            hi[0] = cuts[i + 1] + eps / 2
        box = Box(tuple(lo), tuple(hi))

        def owners(axis, side, i=i):
            return i + side if axis == 0 else None

        interfaces, external = _faces(box, domain, owners)
        subs.append(Subdomain(i, box, Box(tuple(core_lo), tuple(core_hi)), interfaces, external))
    return Decomposition(domain, float(eps), tuple(subs))


# problem ---------------------------------------------------------------------


def _zero(x, *_):
    return 0.0


@dataclass(frozen=True)
class NonlocalTerm:
    """Convolution ``(u * rho)(x) = int u(x - y) rho(y) dy`` by a fixed quadrature."""

    kernel: Callable[[np.ndarray], np.ndarray]
    quad_nodes: np.ndarray
    quad_weights: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.quad_nodes, dtype=np.float64))
        if nodes.shape[0] == 1 and np.ndim(self.quad_nodes) == 1:
            nodes = nodes.T
        weights = np.asarray(self.quad_weights, dtype=np.float64)
        if nodes.shape[0] != weights.shape[0]:
            raise ConfigError("quadrature nodes and weights have different lengths")
        object.__setattr__(self, "quad_nodes", nodes)
        object.__setattr__(self, "quad_weights", weights)

    @property
    def coefficients(self) -> np.ndarray:
        """``c_j rho(y_j)`` per node."""
        rho = np.broadcast_to(np.asarray(self.kernel(self.quad_nodes), dtype=np.float64), self.quad_weights.shape)
        return self.quad_weights * rho


def midpoint_grid(box: Box, n_per_axis: int | Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``(m, d)`` and weights of the tensor midpoint rule on ``box``."""
    counts = [n_per_axis] * box.dim if np.ndim(n_per_axis) == 0 else list(n_per_axis)
    axes, h = [], []
    for lo, hi, n in zip(box.lo, box.hi, counts):
        step = (hi - lo) / n
        axes.append(lo + step * (np.arange(n) + 0.5))
        h.append(step)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    return nodes, np.full(nodes.shape[0], float(np.prod(h)))


@dataclass(frozen=True)
class PdeProblem:
    dim: int
    domain: Box
    horizon: float
    u0: Callable
    nu: Callable = _zero
    adv: Callable | None = None  # returns a sequence of per-axis coefficients
    reac: Callable = _zero
    source: Callable = _zero  # f(x, t)
    nonlocal_term: NonlocalTerm | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("only 1D and 2D problems are supported")
        if self.domain.dim != self.dim:
            raise ConfigError("domain dimension does not match problem dimension")
        if not self.horizon > 0:
            raise ConfigError("horizon T must be > 0")
        if self.domain.volume <= 0:
            raise ConfigError("domain must be nonempty")

    def advection(self, x: Coords) -> list:
        if self.adv is None:
            return [0.0] * self.dim
        a = self.adv(x)
        if np.ndim(a) == 0 or len(a) != self.dim:
            raise ConfigError("advection must return one coefficient per axis")
        return list(a)

    def check_nu(self, x: Coords) -> None:
        nu = np.asarray(self.nu(x))
        if np.any(nu < 0):
            raise ConfigError("diffusion coefficient must be >= 0")


@dataclass
class DerivBundle:
    """Field value and the derivatives needed by the residual at a batch of points."""

    value: object
    dt: object = None
    grad: list | None = None
    lap: object = None

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise UsageError(f"derivative bundle is missing {missing}")


def derivative_bundle(fn: Callable, x: Coords, t, need_time: bool = True, need_space: bool = True) -> DerivBundle:
    """Evaluate ``fn(x_coords, t)`` with one hyper-dual pass per axis.

    ``fn`` receives a list of spatial hyper-duals and a time hyper-dual.
    """
    x = [np.asarray(c, dtype=np.float64) for c in x]
    t = np.asarray(t, dtype=np.float64)
    point = [*x, t]
    d = len(x)
    value = dt = None
    if need_time:
        seeded = ad.seed_coordinate(point, d)
        out = HyperDual.lift(fn(seeded[:d], seeded[d]))
        value, dt = out.value, out.d1
    grad, lap = None, None
    if need_space:
        grad, lap = [], 0.0
        for axis in range(d):
            seeded = ad.seed_coordinate(point, axis)
            out = HyperDual.lift(fn(seeded[:d], seeded[d]))
            if value is None:
                value = out.value
            grad.append(out.d1)
            lap = out.d2 if axis == 0 else lap + out.d2
    if value is None:
        value = fn([*x], t)
    return DerivBundle(value, dt, grad, lap)


def pde_residual(problem: PdeProblem, bundle: DerivBundle, x: Coords, t) -> object:
    """``dt u - nu Lap u - a . grad u - r u - f`` at each point."""
    bundle.require("value", "dt", "grad", "lap")
    if len(bundle.grad) != problem.dim:
        raise UsageError("gradient has the wrong number of components")
    res = bundle.dt - problem.nu(x) * bundle.lap
    for a_i, g_i in zip(problem.advection(x), bundle.grad):
        if np.ndim(a_i) == 0 and a_i == 0:
            continue
        res = res - a_i * g_i
    r = problem.reac(x)
    if not (np.ndim(r) == 0 and r == 0):
        res = res - r * bundle.value
    f = problem.source(x, t)
    if not (np.ndim(f) == 0 and f == 0):
        res = res - f
    return res


@dataclass(frozen=True)
class TransmissionCondition:
    kind: str = "dirichlet"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin"):
            raise ConfigError(f"unknown transmission kind {self.kind!r}")
        if self.kind == "robin" and not (math.isfinite(self.lam) and self.lam > 0):
            raise ConfigError("robin transmission requires a finite lambda > 0")

    @property
    def needs_gradient(self) -> bool:
        return self.kind == "robin"


def transmission_trace(tc: TransmissionCondition, bundle: DerivBundle, normal: Sequence[float]) -> object:
    """Dirichlet: the value.  Robin: ``lam * value + normal . grad``.

    ``normal`` is the outward normal of the subdomain receiving the data, so
    in 1D the right face gives ``lam + d/dx`` and the left face ``lam - d/dx``.
    """
    if tc.kind == "dirichlet":
        return bundle.value
    if bundle.grad is None:
        raise UsageError("robin trace needs the gradient")
    out = tc.lam * bundle.value
    for n_i, g_i in zip(normal, bundle.grad):
        if n_i != 0:
            out = out + n_i * g_i
    return out


@dataclass
class ConvolutionResult:
    value: object
    empty: bool = False
    n_pairs: int = 0


def convolution_quadrature(
    term: NonlocalTerm,
    field: Callable,
    x: np.ndarray,
    t: np.ndarray,
    restrict_to: Box | None,
    domain: Box,
) -> ConvolutionResult:
    """``sum_j c_j rho(y_j) field(x - y_j, t)`` over nodes whose argument lies in ``restrict_to``.

    The field is extended by zero outside ``domain``. Membership is half-open
    so adjacent restriction boxes split the sum exactly. ``field`` receives
    an ``(m, d)`` array of points and ``(m,)`` times.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != domain.dim:
        x = x.reshape(-1, domain.dim)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    coeffs = term.coefficients
    z = x[:, None, :] - term.quad_nodes[None, :, :]
    mask = _in_closed_domain(z, domain)
    if restrict_to is not None:
        mask &= restrict_to.contains_half_open(z) | _on_upper_boundary(z, restrict_to, domain)
    mask &= coeffs[None, :] != 0.0
    rows, cols = np.nonzero(mask)
    n = x.shape[0]
    if rows.size == 0:
        return ConvolutionResult(np.zeros(n), empty=True)
    vals = field(z[rows, cols], t[rows])
    weighted = vals * coeffs[cols]
    return ConvolutionResult(ad.segment_sum(weighted, rows, n), empty=False, n_pairs=int(rows.size))


def _in_closed_domain(z, domain: Box):
    return domain.contains(z)


def _on_upper_boundary(z, box: Box, domain: Box):
    # the half-open box must still own points on the domain's own upper faces
    hit = np.zeros(z.shape[:-1], dtype=bool)
    for axis in range(box.dim):
        if box.hi[axis] == domain.hi[axis]:
            others = [a for a in range(box.dim) if a != axis]
            on = z[..., axis] == box.hi[axis]
            for a in others:
                on &= (z[..., a] >= box.lo[a]) & (z[..., a] <= box.hi[a])
            hit |= on
    return hit


# coefficient registry ------------------------------------------------------------


def _constant(value: float = 0.0):
    value = float(value)
    return lambda x, *_: value


def _piecewise(split: float = 0.0, left: float = 0.0, right: float = 0.0, axis: int = 0):
    def fn(x, *_):
        xa = ad.value_of(x[axis])
        return np.where(np.asarray(xa) < split, left, right)

    return fn


def _gaussian(amplitude: float = 1.0, k: float = 1.0, center=0.0):
    def fn(x, *_):
        c = np.broadcast_to(np.asarray(center, dtype=np.float64), (len(x),))
        r2 = 0.0
        for xi, ci in zip(x, c):
            r2 = r2 + (xi - float(ci)) * (xi - float(ci))
        return amplitude * ad.exp(-k * r2)

    return fn


def _gaussian_cosine(amplitude: float = 1.0, k: float = 1.0, m: float = 1.0, center: float = 0.0):
    def fn(x, *_):
        s = (x[0] - center) * (x[0] - center)
        return amplitude * ad.exp(-k * s) * ad.cos(m * s)

    return fn


def _sine_mode(amplitude: float = 1.0, lo: float = 0.0, hi: float = 1.0, mode: int = 1):
    scale = mode * math.pi / (hi - lo)

    def fn(x, *_):
        return amplitude * ad.sin(scale * (x[0] - lo))

    return fn


COEFFICIENTS: dict[str, Callable[..., Callable]] = {
    "constant": _constant,
    "piecewise": _piecewise,
    "gaussian": _gaussian,
    "gaussian-cosine": _gaussian_cosine,
    "sine": _sine_mode,
}


def coefficient(spec) -> Callable:
    """Build a coefficient function from a number or ``{"kind": name, **params}``."""
    if spec is None:
        return _constant(0.0)
    if isinstance(spec, (int, float)):
        return _constant(spec)
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in COEFFICIENTS:
        raise ConfigError(f"unknown coefficient kind {kind!r}; known: {sorted(COEFFICIENTS)}")
    try:
        return COEFFICIENTS[kind](**spec)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for coefficient {kind!r}: {exc}") from None


def vector_coefficient(specs, dim: int) -> Callable | None:
    if specs is None:
        return None
    if isinstance(specs, (int, float)):
        specs = [specs] + [0.0] * (dim - 1)
    if len(specs) != dim:
        raise ConfigError(f"advection needs {dim} components")
    parts = [coefficient(s) for s in specs]
    return lambda x: [p(x) for p in parts]


__all__ = [
    "Box",
    "ConvolutionResult",
    "Decomposition",
    "DerivBundle",
    "Face",
    "NonlocalTerm",
    "PdeProblem",
    "Subdomain",
    "TransmissionCondition",
    "coefficient",
    "convolution_quadrature",
    "derivative_bundle",
    "midpoint_grid",
    "pde_residual",
    "split_decomposition",
    "transmission_trace",
    "vector_coefficient",
]

