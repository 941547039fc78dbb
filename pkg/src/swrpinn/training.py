"""Collocation sampling and first-order optimizers for the local losses."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .loss import CollocationSet, LossBreakdown
from .network import NetworkParams
from .problem import Box, Face, Subdomain

log = logging.getLogger(__name__)

CLIP_NORM = 1e3


@dataclass(frozen=True)
class SamplerConfig:
    n_interior: int = 1000
    n_interface: int = 100
    n_external: int = 100
    n_initial: int = 0
    seed: int = 0
    strategy: str = "uniform"

    def __post_init__(self):
        for name in ("n_interior", "n_interface", "n_external", "n_initial"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.strategy != "uniform":
            raise ConfigError(f"unknown sampling strategy {self.strategy!r}")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    lr0: float = 1e-3
    decay: float = 0.0
    epochs: int = 1
    minibatch: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = CLIP_NORM

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not (math.isfinite(self.lr0) and self.lr0 > 0):
            raise ConfigError("lr0 must be finite and > 0")
        if self.decay < 0:
            raise ConfigError("decay must be >= 0")
        if self.epochs < 1 or self.minibatch < 1:
            raise ConfigError("epochs and minibatch must be >= 1")

    def lr(self, step: int) -> float:
        """Inverse-time decay ``lr0 / (1 + decay * step)``."""
        return self.lr0 / (1.0 + self.decay * step)


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        arrays = {"step": np.array([self.step], dtype=np.int64)}
        if self.m is not None:
            arrays["m"], arrays["v"] = self.m, self.v
        np.savez(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "OptimizerState":
        with np.load(io.BytesIO(data)) as z:
            m = z["m"].copy() if "m" in z else None
            v = z["v"].copy() if "v" in z else None
            return cls(int(z["step"][0]), m, v)


# sampling -------------------------------------------------------------------------


def _open_uniform(rng: np.random.Generator, lo: float, hi: float, n: int) -> np.ndarray:
    # strictly inside (lo, hi)
    return rng.uniform(np.nextafter(lo, hi), hi, n)


def _sample_box(rng, box: Box, n: int) -> np.ndarray:
    cols = []
    for lo, hi in zip(box.lo, box.hi):
        cols.append(np.full(n, lo) if lo == hi else _open_uniform(rng, lo, hi, n))
    return np.stack(cols, axis=-1) if n else np.zeros((0, box.dim))


def _sample_faces(rng, faces: tuple[Face, ...], n: int, horizon: float):
    if not faces or n == 0:
        return None, None, None
    xs, ts, ids = [], [], []
    base, extra = divmod(n, len(faces))
    for k, face in enumerate(faces):
        m = base + (1 if k < extra else 0)
        xs.append(_sample_box(rng, face.box, m))
        ts.append(_open_uniform(rng, 0.0, horizon, m))
        ids.append(np.full(m, k, dtype=int))
    return np.concatenate(xs), np.concatenate(ts), np.concatenate(ids)


def iteration_rng(seed: int, subdomain_id: int, schwarz_iter: int) -> np.random.Generator:
    """Independent stream per (run seed, subdomain, Schwarz iteration)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), subdomain_id, schwarz_iter]))


def sample_collocation(sub: Subdomain, horizon: float, cfg: SamplerConfig, rng: np.random.Generator | None = None) -> CollocationSet:
    """Uniform i.i.d. training points for one subdomain."""
    if sub.box.volume <= 0:
        raise ConfigError(f"subdomain {sub.index} has zero volume")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    ix = _sample_box(rng, sub.box, cfg.n_interior)
    it = _open_uniform(rng, 0.0, horizon, cfg.n_interior)
    fx, ft, fid = _sample_faces(rng, sub.interfaces, cfg.n_interface, horizon)
    ex, et, _ = _sample_faces(rng, sub.external_faces, cfg.n_external, horizon)
    x0 = _sample_box(rng, sub.box, cfg.n_initial) if cfg.n_initial else None
    return CollocationSet(ix, it, fx, ft, fid, ex, et, x0)


# optimizers -------------------------------------------------------------------------


def _check_grad(grad: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericError("gradient", f"non-finite component at parameter index {int(bad[0])}")


def sgd_step(w: np.ndarray, grad: np.ndarray, state: OptimizerState, cfg: OptimizerConfig) -> np.ndarray:
    _check_grad(grad)
    lr = cfg.lr(state.step)
    state.step += 1
    return w - lr * grad


def adam_step(w: np.ndarray, grad: np.ndarray, state: OptimizerState, cfg: OptimizerConfig) -> np.ndarray:
    _check_grad(grad)
    if state.m is None:
        state.m, state.v = np.zeros_like(w), np.zeros_like(w)
    if state.m.shape != w.shape:
        raise ConfigError("optimizer moments do not match the parameter vector")
    lr = cfg.lr(state.step)
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    return w - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


STEPPERS = {"sgd": sgd_step, "adam": adam_step}


class TrainingAborted(NumericError):
    def __init__(self, message: str, last_good_step: int):
        self.last_good_step = last_good_step
        super().__init__("training", f"{message} (last good step {last_good_step})")


@dataclass
class TrainingResult:
    w: np.ndarray
    curve: list[dict] = field(default_factory=list)
    clip_events: int = 0


def run_optimizer(
    w: np.ndarray,
    loss_and_grad: Callable[[np.ndarray, np.ndarray], tuple[dict, np.ndarray]],
    n_interior: int,
    cfg: OptimizerConfig,
    state: OptimizerState,
    rng: np.random.Generator,
) -> TrainingResult:
    """Epoch loop over shuffled minibatch partitions of the interior points.

    ``loss_and_grad(w, batch_indices)`` returns the loss terms and gradient.
    """
    if n_interior < 1:
        raise ConfigError("training needs at least one interior point")
    if cfg.minibatch > n_interior:
        raise ConfigError(f"minibatch {cfg.minibatch} exceeds n_interior {n_interior}")
    stepper = STEPPERS[cfg.kind]
    n_batches = math.ceil(n_interior / cfg.minibatch)
    result = TrainingResult(np.array(w, dtype=np.float64))
    local_step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n_interior)
        for batch in np.array_split(perm, n_batches):
            try:
                terms, grad = loss_and_grad(result.w, batch)
            except NumericError as exc:
                raise TrainingAborted(str(exc), local_step - 1) from exc
            if not math.isfinite(terms["total"]):
                raise TrainingAborted("non-finite loss", local_step - 1)
            norm = float(np.linalg.norm(grad))
            if math.isfinite(norm) and norm > cfg.clip_norm:
                grad = grad * (cfg.clip_norm / norm)
                result.clip_events += 1
                log.info("gradient clipped at step %d (norm %.3g)", state.step, norm)
            try:
                result.w = stepper(result.w, grad, state, cfg)
            except NumericError as exc:
                raise TrainingAborted(str(exc), local_step - 1) from exc
            result.curve.append({"step": state.step - 1, **terms})
            local_step += 1
    return result


def network_loss_and_grad(params: NetworkParams, loss_fn: Callable[[NetworkParams, np.ndarray], LossBreakdown]):
    """Adapt a loss over bound network parameters to :func:`run_optimizer`."""

    def fn(w, batch):
        tape = ad.Tape()
        bound = NetworkParams(params.arch, tape.variable(w), params.seed)
        breakdown = loss_fn(bound, batch)
        grad = ad.grad_wrt_params(breakdown.total, bound.w)
        return breakdown.values(), grad

    return fn


def train_subdomain(
    loss_fn: Callable[[NetworkParams, CollocationSet], LossBreakdown],
    params: NetworkParams,
    colloc: CollocationSet,
    cfg: OptimizerConfig,
    state: OptimizerState | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[NetworkParams, TrainingResult]:
    """Minimize ``loss_fn`` over minibatches of ``colloc``'s interior points.

    Interface, external and initial points enter every step.
    """
    state = OptimizerState() if state is None else state
    rng = np.random.default_rng(0) if rng is None else rng

    def batch_loss(bound, batch):
        return loss_fn(bound, colloc.minibatch(batch))

    result = run_optimizer(
        ad.value_of(params.w), network_loss_and_grad(params, batch_loss), colloc.interior_x.shape[0], cfg, state, rng
    )
    return NetworkParams(params.arch, result.w, params.seed), result
