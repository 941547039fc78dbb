import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from swrpinn.errors import UsageError
from swrpinn.loss import LossWeights, direct_global_loss
from swrpinn.network import NetworkArchitecture, init_params
from swrpinn.problem import Box, PdeProblem, TransmissionCondition, coefficient, split_decomposition
from swrpinn.reference import FdGrid, FdLocalSolver, fd_solve
from swrpinn.swr import (
    DomainError,
    LocalSolverError,
    SchwarzConfig,
    _salted_seed,
    build_pinn_solvers,
    cswr_contraction,
    erfc,
    iteration_rng,
    optimize_robin_lambda,
    reconstruct_global,
    residual_history_term,
    robin_contraction,
    robin_factor,
    schwarz_residual,
    superlinear_bound,
    swr_run,
)
from swrpinn.training import OptimizerConfig, SamplerConfig, sample_collocation, train_subdomain

I = Box((-1.0,), (1.0,))


class Const:
    def __init__(self, c, version=0):
        self.c, self.version = c, version

    def values(self, points, t):
        return np.full(np.atleast_2d(points).shape[0], float(self.c))


def _gauss_problem(**kw):
    return PdeProblem(1, I, 0.25, lambda x: np.exp(-30 * (x[0] - 0.1) ** 2), **kw)


# residual history ---------------------------------------------------------------


def test_residual_term_examples():
    ov = Box((-0.05,), (0.05,))
    assert residual_history_term(Const(1.0), Const(1.0), ov, 0.25) == 0.0
    assert residual_history_term(Const(0.3), Const(0.2), ov, 0.25) == pytest.approx(0.05, rel=1e-12)
    d = split_decomposition(I, 2, 0.1)
    assert schwarz_residual([Const(0.3), Const(0.2)], d, 0.25) == pytest.approx(0.1, rel=1e-12)


def test_residual_ignores_a_single_instant():
    class Spike:
        def values(self, points, t):
            return np.where(np.asarray(t) == 0.1, 5.0, 0.0)

    # the spike lands on no node of the uniform time grid
    assert residual_history_term(Spike(), Const(0.0), Box((0.0,), (0.1,)), 0.25, n_time=100) == 0.0


def test_zero_overlap_reduces_to_interface_point():
    ov = split_decomposition(I, 2, 0.0).overlap(0, 1)
    assert ov.lo == ov.hi == (0.0,)
    assert residual_history_term(Const(1.0), Const(0.5), ov, 1.0) == pytest.approx(0.5)


# reconstruction -----------------------------------------------------------------


def test_reconstruction_examples():
    d = split_decomposition(I, 2, 0.1)
    pts = np.array([[-0.5], [0.5], [0.0], [0.04]])
    out = reconstruct_global([Const(1.0), Const(3.0)], d, pts, 0.1)
    assert out.tolist() == [1.0, 3.0, 2.0, 2.0]
    assert reconstruct_global([Const(2.0), Const(2.0)], d, pts, 0.1).tolist() == [2.0] * 4
    with pytest.raises(UsageError):
        reconstruct_global([Const(1.0), Const(3.0)], d, np.array([[1.5]]), 0.1)


# driver -------------------------------------------------------------------------


class Fixed:
    """Local solver returning the same constant every iteration."""

    def __init__(self, index, c, fail_at=None):
        self.index, self.c, self.fail_at = index, c, fail_at

    def zero_snapshot(self):
        return Const(0.0, 0)

    def solve(self, k, frozen):
        if k == self.fail_at:
            raise FloatingPointError("boom")
        return Const(self.c, k)


def test_identical_sides_stop_immediately():
    p = _gauss_problem()
    d = split_decomposition(I, 2, 0.1)
    _, h = swr_run(p, d, SchwarzConfig(max_iters=5), [Fixed(0, 0.4), Fixed(1, 0.4)])
    assert h.residuals == [0.0] and h.converged_at == 1
    assert h.rows()[0]["converged"] == 1


def test_barrier_reads_previous_version_only():
    p = _gauss_problem()
    d = split_decomposition(I, 3, 0.1)
    cfg = SchwarzConfig(max_iters=4, delta_sc=1e-12, stagnation_rel=0.0, threads=3)
    _, h = swr_run(p, d, cfg, [Fixed(i, 0.1 * i) for i in range(3)])
    assert h.iterations == 4 and h.reads
    assert all(version == k - 1 for k, _, _, version in h.reads)


def test_stagnation_stops_the_loop():
    p = _gauss_problem()
    d = split_decomposition(I, 2, 0.1)
    _, h = swr_run(p, d, SchwarzConfig(max_iters=20, delta_sc=1e-12), [Fixed(0, 0.1), Fixed(1, 0.3)])
    assert h.plateau_at == 4 and len(h.residuals) == 4 and h.converged_at is None


def test_local_failure_reports_location():
    p = _gauss_problem()
    d = split_decomposition(I, 2, 0.1)
    with pytest.raises(LocalSolverError) as err:
        swr_run(p, d, SchwarzConfig(max_iters=5, delta_sc=1e-12), [Fixed(0, 0.1), Fixed(1, 0.3, fail_at=2)])
    assert err.value.subdomain == 1 and err.value.iteration == 2


def test_single_subdomain_equals_direct_mode():
    p = PdeProblem(1, I, 0.25, coefficient({"kind": "gaussian", "amplitude": 1.0, "k": 30.0, "center": [0.1]}),
                   adv=lambda x: [0.5], reac=lambda x, *_: 0.1)
    d = split_decomposition(I, 1, 0.0)
    arch = NetworkArchitecture(2, (5, 5))
    sampler, opt, weights = SamplerConfig(60, 0, 10, 0, 3), OptimizerConfig("adam", 1e-2, epochs=3, minibatch=20), LossWeights()
    solvers = build_pinn_solvers(p, d, TransmissionCondition(), [arch], sampler, opt, weights, seed=3)
    sol, h = swr_run(p, d, SchwarzConfig(), solvers)
    assert h.residuals == [] and h.iterations == 1

    rng = iteration_rng(3, 0, 1)
    colloc = sample_collocation(d.subdomains[0], 0.25, sampler, rng)
    trial = solvers[0].ctx.trial
    params, _ = train_subdomain(lambda b, c: direct_global_loss(p, trial, b, c, weights),
                                init_params(arch, _salted_seed(3, 0)), colloc, opt, rng=rng)
    assert params.w.tobytes() == solvers[0].params.w.tobytes()
    x = np.linspace(-1, 1, 11)[:, None]
    assert np.array_equal(sol(x, 0.2), h.snapshots[-1][0].values(x, np.full(11, 0.2)))


def test_fd_local_solver_contracts_like_theory():
    p = _gauss_problem(nu=lambda x, *_: 0.05, adv=lambda x: [1.0])
    d = split_decomposition(I, 2, 0.1)
    tc = TransmissionCondition()
    solvers = [FdLocalSolver(p, s, 0.01, 0.0025, tc) for s in d.subdomains]
    cfg = SchwarzConfig(max_iters=12, delta_sc=1e-12, transmission=tc, local_solver="fd", stagnation_rel=0.0)
    sol, h = swr_run(p, d, cfg, solvers)
    res = np.array(h.residuals)
    floor = 1e-10
    live = res[res > floor]
    assert np.all(np.diff(live) < 0)
    ratios = live[2:] / live[:-2]
    assert np.all(ratios <= 1.2 * cswr_contraction(1.0, 0.05, 0.0, 0.1))
    full = fd_solve(p, FdGrid(199, 0.0025))
    x = np.linspace(-1, 1, 201)[:, None]
    assert np.max(np.abs(sol(x, 0.25) - full.u[-1])) <= 1e-6


# theory -------------------------------------------------------------------------


def test_cswr_examples():
    assert cswr_contraction(1.0, 0.05, 0.0, 0.0) == 1.0
    assert abs(cswr_contraction(1.0, 0.05, 0.0, 0.1) - math.exp(-2)) <= 1e-12
    assert abs(cswr_contraction(0.0, 1.0, 1.0, 1.0) - math.exp(-2)) <= 1e-12
    for nu in (0.0, -1.0):
        with pytest.raises(DomainError):
            cswr_contraction(1.0, nu, 0.0, 0.1)


def test_erfc_against_high_precision():
    assert superlinear_bound(0.0, 0.05, 0.25) == 1.0
    for x in (1e-3, 0.3, 1.0, 2.0, 2.5, 4.0, 9.0):
        assert abs(erfc(x) - float(mpmath.erfc(x))) <= 1e-12 * max(1.0, float(mpmath.erfc(x)) * 1e3)
    assert abs(erfc(1.0) - 0.1572992070502851) <= 1e-10
    assert superlinear_bound(1.0, 1.0, 1.0) == pytest.approx(float(mpmath.erfc(1)), abs=1e-12)
    assert superlinear_bound(1e6, 1.0, 1.0) == 0.0


def test_robin_examples():
    a, nu, r = 1.0, 0.05, 0.2
    root = math.sqrt(a * a + 4 * nu * r)
    assert robin_factor(a, nu, r, root, np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-15)
    assert robin_contraction(1.0, 0.05, 0.0, 0.0, 5.0) < 1.0
    far = robin_contraction(1.0, 0.05, 0.0, 0.1, 1e6)
    assert far < math.exp(-2) and math.exp(-2) - far <= 1e-3
    with pytest.raises(DomainError):
        robin_contraction(1.0, 0.05, 0.0, 0.1, 0.0)


def test_optimized_lambda_is_locally_optimal_and_beats_cswr():
    for a, nu, r, eps in ((1.0, 0.05, 0.0, 0.1), (0.0, 1.0, 0.0, 0.0), (0.5, 0.1, 0.3, 0.05)):
        lam = optimize_robin_lambda(a, nu, r, eps)
        c = robin_contraction(a, nu, r, eps, lam)
        assert c <= robin_contraction(a, nu, r, eps, 1.1 * lam) + 1e-12
        assert c <= robin_contraction(a, nu, r, eps, 0.9 * lam) + 1e-12
        assert c <= cswr_contraction(a, nu, r, eps)


def test_symmetric_case_has_interior_minimizer():
    lams = np.geomspace(1e-2, 1e3, 60)
    vals = [robin_contraction(0.0, 1.0, 0.0, 0.0, lam) for lam in lams]
    j = int(np.argmin(vals))
    assert 0 < j < len(lams) - 1 and vals[j] < 1.0


admissible = dict(a=st.floats(-2, 2), nu=st.floats(1e-3, 2), r=st.floats(0, 2), eps=st.floats(0, 0.5))


@given(**admissible, lam=st.floats(1e-2, 100))
def test_robin_never_worse_than_cswr(a, nu, r, eps, lam):
    assert robin_contraction(a, nu, r, eps, lam) <= cswr_contraction(a, nu, r, eps)


@given(**admissible, d=st.floats(1e-3, 0.5))
def test_cswr_monotone_in_eps_and_nu(a, nu, r, eps, d):
    assert cswr_contraction(a, nu, r, eps + d) <= cswr_contraction(a, nu, r, eps)
    assert cswr_contraction(a, nu + d, r, eps) >= cswr_contraction(a, nu, r, eps) - 1e-15
