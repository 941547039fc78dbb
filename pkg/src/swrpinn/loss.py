"""Local and global PINN losses.

Every norm is discretized as a mean of squares over its collocation set.
Terms built from the current parameters are recorded on the parameters'
tape, so one reverse sweep of ``LossBreakdown.total`` gives the gradient.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .network import NetworkParams, TrialNetwork, trial_eval
from .problem import (
    Box,
    DerivBundle,
    PdeProblem,
    Subdomain,
    TransmissionCondition,
    convolution_quadrature,
    derivative_bundle,
    pde_residual,
    transmission_trace,
)

TRAINING_COLUMNS = (
    "schwarz_iter",
    "subdomain_id",
    "step",
    "pde_term",
    "interface_term",
    "external_term",
    "ic_term",
    "total",
)


class Field(Protocol):
    """A frozen solution that can be sampled and differentiated in space."""

    def values(self, points: np.ndarray, t: np.ndarray) -> np.ndarray: ...

    def bundle(self, x: Sequence[np.ndarray], t: np.ndarray, need_grad: bool) -> DerivBundle: ...


@dataclass(frozen=True)
class LossWeights:
    lambda_int: float = 10.0
    lambda_ext: float = 10.0
    lambda_ic: float = 10.0

    def __post_init__(self):
        for name in ("lambda_int", "lambda_ext", "lambda_ic"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class CollocationSet:
    """Training points of one subdomain; ``x`` arrays have shape ``(n, d)``."""

    interior_x: np.ndarray
    interior_t: np.ndarray
    interface_x: np.ndarray = None
    interface_t: np.ndarray = None
    interface_face: np.ndarray = None  # index into Subdomain.interfaces
    external_x: np.ndarray = None
    external_t: np.ndarray = None
    initial_x: np.ndarray = None

    def __post_init__(self):
        d = np.shape(self.interior_x)[-1]
        empty_x = np.zeros((0, d))
        empty = np.zeros(0)
        if self.interface_x is None:
            self.interface_x, self.interface_t = empty_x, empty
            self.interface_face = np.zeros(0, dtype=int)
        if self.external_x is None:
            self.external_x, self.external_t = empty_x, empty
        if self.initial_x is None:
            self.initial_x = empty_x

    def minibatch(self, idx: np.ndarray) -> "CollocationSet":
        """Same boundary sets, interior restricted to ``idx``."""
        return CollocationSet(
            self.interior_x[idx],
            self.interior_t[idx],
            self.interface_x,
            self.interface_t,
            self.interface_face,
            self.external_x,
            self.external_t,
            self.initial_x,
        )


@dataclass
class LossBreakdown:
    total: object
    pde_term: object
    interface_term: object
    external_term: object
    ic_term: object
    nonlocal_: bool = False
    weights: LossWeights = field(default_factory=LossWeights)

    def values(self) -> dict[str, float]:
        return {
            "pde_term": float(ad.value_of(self.pde_term)),
            "interface_term": float(ad.value_of(self.interface_term)),
            "external_term": float(ad.value_of(self.external_term)),
            "ic_term": float(ad.value_of(self.ic_term)),
            "total": float(ad.value_of(self.total)),
        }


@dataclass
class LocalContext:
    """Everything a subdomain's loss needs besides the parameters."""

    problem: PdeProblem
    subdomain: Subdomain
    trial: TrialNetwork
    transmission: TransmissionCondition
    # core boxes of every subdomain, used to split the convolution
    cores: tuple[Box, ...] = ()


def _cols(x: np.ndarray) -> list[np.ndarray]:
    return [x[:, i] for i in range(x.shape[1])]


def _trial_fn(trial: TrialNetwork, params: NetworkParams) -> Callable:
    return lambda xs, t: trial_eval(trial, params, xs, t)


def _mean_square(r):
    return ad.mean(r * r)


def _nonlocal_sum(problem, fields_by_core, x, t):
    """Convolution at interior points split over the core boxes."""
    term = problem.nonlocal_term
    out = 0.0
    for core, fn in fields_by_core:
        if fn is None:
            continue
        res = convolution_quadrature(term, fn, x, t, core, problem.domain)
        if not res.empty:
            out = out + res.value
    return out


def _interior_term(problem, trial, params, x, t, nonlocal_parts=None):
    xs = _cols(x)
    bundle = derivative_bundle(_trial_fn(trial, params), xs, t)
    res = pde_residual(problem, bundle, xs, t)
    if nonlocal_parts is not None:
        res = res - _nonlocal_sum(problem, nonlocal_parts, x, t)
    return _mean_square(res)


def _value_fn(trial, params):
    def fn(points, t):
        return trial_eval(trial, params, _cols(points), t)

    return fn


def _finish(pde, interface, external, ic, weights: LossWeights, nonlocal_: bool) -> LossBreakdown:
    total = pde + weights.lambda_ext * external + weights.lambda_int * interface + weights.lambda_ic * ic
    if not math.isfinite(float(ad.value_of(total))):
        raise NumericError("loss", "non-finite loss value")
    return LossBreakdown(total, pde, interface, external, ic, nonlocal_, weights)


def _boundary_terms(ctx: LocalContext, params, frozen_neighbors: dict[int, Field], colloc: CollocationSet):
    sub, trial, tc = ctx.subdomain, ctx.trial, ctx.transmission
    interface = 0.0
    if sub.interfaces:
        if colloc.interface_x.shape[0] == 0:
            raise ConfigError(f"subdomain {sub.index} has interfaces but no interface points")
        diffs = []
        for k, face in enumerate(sub.interfaces):
            sel = colloc.interface_face == k
            if not np.any(sel):
                continue
            xs, ts = _cols(colloc.interface_x[sel]), colloc.interface_t[sel]
            need = tc.needs_gradient
            if need:
                own = derivative_bundle(_trial_fn(trial, params), xs, ts, need_time=False)
            else:
                own = DerivBundle(trial_eval(trial, params, xs, ts))
            nb = frozen_neighbors[face.neighbor].bundle(xs, ts, need)
            diffs.append(transmission_trace(tc, own, face.normal) - transmission_trace(tc, nb, face.normal))
        sq = [ad.total(d * d) for d in diffs]
        s = sq[0]
        for extra in sq[1:]:
            s = s + extra
        interface = s * (1.0 / colloc.interface_x.shape[0])
    external = 0.0
    if colloc.external_x.shape[0]:
        ext = trial_eval(trial, params, _cols(colloc.external_x), colloc.external_t)
        external = _mean_square(ext)
    ic = 0.0
    if trial.ic_mode == "soft" and colloc.initial_x.shape[0]:
        xs = _cols(colloc.initial_x)
        diff = trial_eval(trial, params, xs, np.zeros(colloc.initial_x.shape[0])) - trial.u0(xs)
        ic = _mean_square(diff)
    return interface, external, ic


def assemble_local_loss(
    ctx: LocalContext,
    params: NetworkParams,
    frozen_neighbors: dict[int, Field],
    colloc: CollocationSet,
    weights: LossWeights,
) -> LossBreakdown:
    """Local loss of one subdomain against frozen iteration-(k-1) neighbors."""
    if colloc.interior_x.shape[0] == 0:
        raise ConfigError("collocation set has no interior points")
    pde = _interior_term(ctx.problem, ctx.trial, params, colloc.interior_x, colloc.interior_t)
    interface, external, ic = _boundary_terms(ctx, params, frozen_neighbors, colloc)
    return _finish(pde, interface, external, ic, weights, False)


def nonlocal_parts(ctx: LocalContext, params: NetworkParams, frozen_neighbors: dict[int, Field]):
    """``(core, field)`` pairs: own core uses the live network, the others frozen snapshots."""
    cores = ctx.cores or (ctx.subdomain.core,)
    parts = []
    for i, core in enumerate(cores):
        if i == ctx.subdomain.index:
            parts.append((core, _value_fn(ctx.trial, params)))
        else:
            nb = frozen_neighbors.get(i)
            parts.append((core, None if nb is None else nb.values))
    return parts


def assemble_nonlocal_loss(
    ctx: LocalContext,
    params: NetworkParams,
    frozen_neighbors: dict[int, Field],
    colloc: CollocationSet,
    weights: LossWeights,
) -> LossBreakdown:
    """As :func:`assemble_local_loss` with the convolution term in the residual.

    Only the subdomain's own share of the convolution depends on ``params``.
    """
    problem = ctx.problem
    if problem.nonlocal_term is None:
        raise ConfigError("problem has no nonlocal term")
    if colloc.interior_x.shape[0] == 0:
        raise ConfigError("collocation set has no interior points")
    parts = nonlocal_parts(ctx, params, frozen_neighbors)
    pde = _interior_term(problem, ctx.trial, params, colloc.interior_x, colloc.interior_t, parts)
    interface, external, ic = _boundary_terms(ctx, params, frozen_neighbors, colloc)
    return _finish(pde, interface, external, ic, weights, True)


def direct_global_loss(
    problem: PdeProblem,
    trial: TrialNetwork,
    params: NetworkParams,
    colloc: CollocationSet,
    weights: LossWeights,
) -> LossBreakdown:
    """Single-network loss over the whole domain (no decomposition)."""
    nonlocal_ = problem.nonlocal_term is not None
    parts = [(problem.domain, _value_fn(trial, params))] if nonlocal_ else None
    pde = _interior_term(problem, trial, params, colloc.interior_x, colloc.interior_t, parts)
    external = 0.0
    if colloc.external_x.shape[0]:
        external = _mean_square(trial_eval(trial, params, _cols(colloc.external_x), colloc.external_t))
    ic = 0.0
    if trial.ic_mode == "soft" and colloc.initial_x.shape[0]:
        xs = _cols(colloc.initial_x)
        ic = _mean_square(trial_eval(trial, params, xs, np.zeros(len(colloc.initial_x))) - trial.u0(xs))
    return _finish(pde, 0.0, external, ic, weights, nonlocal_)


def write_training_rows(path: str | Path, rows) -> None:
    """Append rows (dicts keyed by ``TRAINING_COLUMNS``) to the training-curve CSV."""
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAINING_COLUMNS)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
