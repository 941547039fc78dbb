import math

import numpy as np
import pytest

from swrpinn import autodiff as ad
from swrpinn.errors import ConfigError
from swrpinn.loss import (
    CollocationSet,
    LocalContext,
    LossWeights,
    assemble_local_loss,
    assemble_nonlocal_loss,
    direct_global_loss,
)
from swrpinn.network import NetworkArchitecture, NetworkParams, TrialNetwork, init_params
from swrpinn.problem import (
    Box,
    DerivBundle,
    NonlocalTerm,
    PdeProblem,
    TransmissionCondition,
    coefficient,
    midpoint_grid,
    split_decomposition,
)
from swrpinn.swr import NetworkSnapshot
from swrpinn.training import SamplerConfig, sample_collocation

I = Box((-1.0,), (1.0,))
sine = coefficient({"kind": "sine", "amplitude": 1.0, "lo": -1.0, "hi": 1.0, "mode": 1})


class ConstantField:
    def __init__(self, c):
        self.c = c

    def values(self, points, t):
        return np.full(np.atleast_2d(points).shape[0], self.c)

    def bundle(self, x, t, need_grad):
        v = np.full(np.shape(t), self.c)
        return DerivBundle(v, None, [np.zeros_like(v)] if need_grad else None)


def _problem(**kw):
    base = dict(nu=lambda x, *_: 0.1, adv=lambda x: [0.5], reac=lambda x, *_: 0.2)
    base.update(kw)
    return PdeProblem(1, I, 0.5, sine, **base)


def _ctx(problem, n_sub=2, eps=0.1, tc=TransmissionCondition(), arch=NetworkArchitecture(2, (6, 6)), sub=0):
    d = split_decomposition(problem.domain, n_sub, eps)
    trial = TrialNetwork(arch, problem.u0)
    return LocalContext(problem, d.subdomains[sub], trial, tc, tuple(s.core for s in d.subdomains)), d


def _colloc(ctx, seed=0, n=40):
    cfg = SamplerConfig(n, 10, 10, 0, seed)
    return sample_collocation(ctx.subdomain, ctx.problem.horizon, cfg, np.random.default_rng(seed))


def test_all_zero_gives_zero_total():
    prob = PdeProblem(1, I, 0.5, lambda x: 0.0 * x[0])
    ctx, _ = _ctx(prob)
    zero = NetworkParams(ctx.trial.arch, np.zeros(ctx.trial.arch.n_params))
    loss = assemble_local_loss(ctx, zero, {1: ConstantField(0.0)}, _colloc(ctx), LossWeights())
    assert loss.values()["total"] == 0.0


def test_lambda_int_scales_interface_contribution():
    ctx, _ = _ctx(_problem())
    params, colloc = init_params(ctx.trial.arch, 1), _colloc(ctx)
    nb = {1: ConstantField(0.7)}
    a = assemble_local_loss(ctx, params, nb, colloc, LossWeights(10, 10, 10)).values()
    b = assemble_local_loss(ctx, params, nb, colloc, LossWeights(20, 10, 10)).values()
    assert b["interface_term"] == a["interface_term"] and b["pde_term"] == a["pde_term"]
    assert math.isclose(b["total"] - a["total"], 10 * a["interface_term"], rel_tol=1e-12)


def test_single_unit_network_matches_brute_force():
    nu, a, r = 0.1, 0.5, 0.2
    prob = _problem()
    arch = NetworkArchitecture(2, (1,))
    ctx, _ = _ctx(prob, arch=arch)
    w1, w2, b, v, c = 0.8, -0.6, 0.1, 1.3, -0.2
    w = np.zeros(arch.n_params)
    w[arch.index(0, 0, 0)], w[arch.index(0, 1, 0)], w[arch.index(0, 2, 0)] = w1, w2, b
    w[arch.index(1, 0, 0)], w[arch.index(1, 1, 0)] = v, c
    pts = np.array([[-0.5], [0.0], [0.03]])
    ts = np.array([0.1, 0.25, 0.4])
    colloc = CollocationSet(pts, ts, np.array([[0.05]] * 2), np.array([0.2, 0.3]), np.array([0, 0]),
                            np.array([[-1.0]]), np.array([0.15]))

    def trial(x, t):
        z = w1 * x + w2 * t + b
        th = math.tanh(z)
        s2 = 1 - th * th
        n = v * th + c
        k = math.pi / 2
        u, ux, uxx = math.sin(k * (x + 1)), k * math.cos(k * (x + 1)), -k * k * math.sin(k * (x + 1))
        value = u + t * n
        dt = n + t * v * s2 * w2
        dx = ux + t * v * s2 * w1
        dxx = uxx + t * v * (-2 * th * s2) * w1 * w1
        return value, dt, dx, dxx

    pde = 0.0
    for x, t in zip(pts[:, 0], ts):
        val, dt, dx, dxx = trial(x, t)
        pde += (dt - nu * dxx - a * dx - r * val) ** 2
    pde /= 3
    inter = sum((trial(0.05, t)[0] - 0.7) ** 2 for t in (0.2, 0.3)) / 2
    ext = trial(-1.0, 0.15)[0] ** 2
    expected = pde + 10 * inter + 10 * ext
    loss = assemble_local_loss(ctx, NetworkParams(arch, w), {1: ConstantField(0.7)}, colloc, LossWeights())
    assert abs(loss.values()["total"] - expected) <= 1e-12 * max(1.0, expected)


def _nonlocal_problem(kernel):
    nodes, weights = midpoint_grid(Box((-0.5,), (0.5,)), 100)
    return PdeProblem(1, I, 0.5, sine, nu=lambda x, *_: 0.1, nonlocal_term=NonlocalTerm(kernel, nodes, weights))


def test_zero_kernel_matches_local_loss():
    ctx_nl, _ = _ctx(_nonlocal_problem(lambda y: np.zeros(len(y))))
    ctx_l, _ = _ctx(PdeProblem(1, I, 0.5, sine, nu=lambda x, *_: 0.1))
    params, colloc = init_params(ctx_l.trial.arch, 4), _colloc(ctx_l)
    nb = {1: ConstantField(0.5)}
    a = assemble_nonlocal_loss(ctx_nl, params, nb, colloc, LossWeights()).values()
    b = assemble_local_loss(ctx_l, params, nb, colloc, LossWeights()).values()
    assert a == b


def test_single_subdomain_nonlocal_matches_direct_mode():
    prob = _nonlocal_problem(lambda y: np.exp(-4 * y[:, 0] ** 2))
    ctx, _ = _ctx(prob, n_sub=1, eps=0.0)
    params, colloc = init_params(ctx.trial.arch, 5), _colloc(ctx)
    a = assemble_nonlocal_loss(ctx, params, {}, colloc, LossWeights()).values()
    b = direct_global_loss(prob, ctx.trial, params, colloc, LossWeights()).values()
    assert abs(a["pde_term"] - b["pde_term"]) <= 1e-12
    assert abs(a["total"] - b["total"]) <= 1e-12


def test_zero_neighbor_adds_nothing_to_the_convolution():
    prob = _nonlocal_problem(lambda y: np.exp(-4 * y[:, 0] ** 2))
    ctx, d = _ctx(prob)
    params, colloc = init_params(ctx.trial.arch, 6), _colloc(ctx)
    zero_snap = NetworkSnapshot(1, 0, ctx.trial, None)
    with_zero = assemble_nonlocal_loss(ctx, params, {1: zero_snap}, colloc, LossWeights()).values()
    # dropping the neighbor's share entirely gives the same numbers
    bare = LocalContext(prob, ctx.subdomain, ctx.trial, ctx.transmission, (d.subdomains[0].core,))
    without = assemble_nonlocal_loss(bare, params, {1: zero_snap}, colloc, LossWeights()).values()
    assert with_zero == without


def test_direct_mode_hard_ic_and_one_subdomain_equivalence():
    prob = _problem()
    ctx, _ = _ctx(prob, n_sub=1, eps=0.0)
    params, colloc = init_params(ctx.trial.arch, 7), _colloc(ctx)
    colloc.initial_x = np.linspace(-1, 1, 5)[:, None]
    direct = direct_global_loss(prob, ctx.trial, params, colloc, LossWeights()).values()
    assert direct["ic_term"] == 0.0
    local = assemble_local_loss(ctx, params, {}, colloc, LossWeights()).values()
    assert abs(direct["total"] - local["total"]) <= 1e-12


def test_soft_ic_penalty_and_zero_everything():
    prob = PdeProblem(1, I, 0.5, lambda x: 0.0 * x[0])
    arch = NetworkArchitecture(2, (3,))
    trial = TrialNetwork(arch, prob.u0, "soft")
    zero = NetworkParams(arch, np.zeros(arch.n_params))
    colloc = CollocationSet(np.array([[0.1]]), np.array([0.2]), initial_x=np.array([[0.3]]))
    assert direct_global_loss(prob, trial, zero, colloc, LossWeights()).values()["total"] == 0.0
    soft = TrialNetwork(arch, sine, "soft")
    out = direct_global_loss(prob, soft, zero, colloc, LossWeights()).values()
    assert math.isclose(out["ic_term"], math.sin(math.pi / 2 * 1.3) ** 2, rel_tol=1e-12)


def _loss_fn(ctx, colloc, weights=LossWeights()):
    nb = {1: ConstantField(0.4)}

    def fn(w):
        tape = ad.Tape()
        bound = NetworkParams(ctx.trial.arch, tape.variable(w))
        out = assemble_local_loss(ctx, bound, nb, colloc, weights)
        return out, bound

    return fn


def test_parameter_gradient_matches_finite_differences(rng):
    ctx, _ = _ctx(_problem(), tc=TransmissionCondition("robin", 5.0))
    colloc = _colloc(ctx)
    fn = _loss_fn(ctx, colloc)
    w0 = init_params(ctx.trial.arch, 9).w
    out, bound = fn(w0)
    grad = ad.grad_wrt_params(out.total, bound.w)
    for i in rng.choice(w0.size, 10, replace=False):
        e = np.zeros_like(w0)
        e[i] = 1e-4
        fd = (fn(w0 + e)[0].values()["total"] - fn(w0 - e)[0].values()["total"]) / 2e-4
        assert abs(grad[i] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_permutation_invariance_and_determinism(rng):
    ctx, _ = _ctx(_problem())
    colloc = _colloc(ctx)
    params = init_params(ctx.trial.arch, 3)
    nb = {1: ConstantField(0.4)}
    a = assemble_local_loss(ctx, params, nb, colloc, LossWeights()).values()
    again = assemble_local_loss(ctx, params, nb, colloc, LossWeights()).values()
    assert a == again
    perm = rng.permutation(colloc.interior_x.shape[0])
    shuffled = colloc.minibatch(perm)
    b = assemble_local_loss(ctx, params, nb, shuffled, LossWeights()).values()
    assert math.isclose(a["total"], b["total"], rel_tol=1e-13)


def test_external_weight_is_monotone():
    ctx, _ = _ctx(_problem())
    colloc, params = _colloc(ctx), init_params(ctx.trial.arch, 2)
    nb = {1: ConstantField(0.4)}
    totals = [assemble_local_loss(ctx, params, nb, colloc, LossWeights(10, lam, 10)).values()["total"] for lam in (0, 1, 10, 100)]
    assert all(b >= a for a, b in zip(totals, totals[1:]))


def test_interfaces_without_points_is_config_error():
    ctx, _ = _ctx(_problem())
    colloc = CollocationSet(np.array([[0.0]]), np.array([0.1]))
    with pytest.raises(ConfigError):
        assemble_local_loss(ctx, init_params(ctx.trial.arch, 0), {1: ConstantField(0.0)}, colloc, LossWeights())
    with pytest.raises(ConfigError):
        LossWeights(-1.0)
