import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swrpinn import autodiff as ad
from swrpinn.autodiff import HyperDual, Tape, seed_coordinate
from swrpinn.errors import NumericError, UsageError

finite = st.floats(-3.0, 3.0, allow_nan=False)


def parts(h):
    return float(h.value), float(h.d1), float(h.d2)


def test_seed_coordinate_examples():
    seeded = seed_coordinate((3.0, 2.0), 0)
    assert [parts(s) for s in seeded] == [(3.0, 1.0, 0.0), (2.0, 0.0, 0.0)]
    assert [parts(s) for s in seed_coordinate((0.0,), 0)] == [(0.0, 1.0, 0.0)]
    (x,) = seed_coordinate((3.0,), 0)
    assert parts(x * x) == (9.0, 6.0, 2.0)


def test_seed_coordinate_axis_out_of_range():
    with pytest.raises(UsageError):
        seed_coordinate((1.0, 2.0), 2)


def test_elementary_examples():
    x = HyperDual(0.0, 1.0, 0.0)
    assert parts(ad.tanh(x)) == (0.0, 1.0, 0.0)
    assert parts(ad.exp(x)) == (1.0, 1.0, 1.0)
    assert parts(HyperDual(2.0, 1.0, 0.0) * HyperDual(3.0, 1.0, 0.0)) == (6.0, 5.0, 2.0)


def test_division_by_zero_names_operation():
    with pytest.raises(NumericError, match="div"):
        HyperDual(1.0, 1.0, 0.0) / HyperDual(0.0, 1.0, 0.0)


def test_exp_overflow_is_numeric_error():
    with pytest.raises(NumericError, match="exp"):
        ad.exp(HyperDual(1000.0, 1.0, 0.0))


FUNCS = {
    "tanh": (ad.tanh, np.tanh),
    "sigmoid": (ad.sigmoid, lambda v: 1.0 / (1.0 + np.exp(-v))),
    "exp": (ad.exp, np.exp),
    "cos": (ad.cos, np.cos),
    "sin": (ad.sin, np.sin),
    "square": (lambda h: h * h, lambda v: v * v),
    "reciprocal": (lambda h: 1.0 / (h + 5.0), lambda v: 1.0 / (v + 5.0)),
}


@pytest.mark.parametrize("name", sorted(FUNCS))
@given(v=finite, d1=st.floats(-2, 2), d2=st.floats(-2, 2))
def test_propagation_matches_finite_differences(name, v, d1, d2):
    hd_fn, plain = FUNCS[name]
    out = hd_fn(HyperDual(v, d1, d2))
    # along the curve s -> v + d1 s + d2 s^2 / 2
    curve = lambda s: plain(v + d1 * s + 0.5 * d2 * s * s)  # noqa: E731
    fd1, fd2 = ad.central_difference(curve, 0.0, 1e-4)
    scale1 = max(1.0, abs(fd1))
    scale2 = max(1.0, abs(fd2))
    assert abs(out.d1 - fd1) <= 1e-5 * scale1
    assert abs(out.d2 - fd2) <= 1e-5 * scale2


@given(w=finite, b=finite, x=finite)
def test_affine_second_derivative_is_exactly_zero(w, b, x):
    (h,) = seed_coordinate((x,), 0)
    out = h * w + b
    assert out.d2 == 0.0


def test_tape_examples():
    tape = Tape()
    w = tape.variable(np.array([1.0]))
    loss = ad.total(w * w * 0.5)
    assert ad.grad_wrt_params(loss, w)[0] == 1.0
    tape = Tape()
    w = tape.variable(np.array([1.0, 2.0]))
    const = tape.variable(np.array(3.0)) * 2.0
    np.testing.assert_array_equal(ad.grad_wrt_params(const, w), np.zeros(2))


def test_empty_tape_is_usage_error():
    tape = Tape()
    with pytest.raises(UsageError):
        tape.gradient(None, None)


def test_untouched_parameters_get_exact_zero():
    tape = Tape()
    w = tape.variable(np.arange(5.0))
    loss = ad.total(w[1:3] * w[1:3])
    g = ad.grad_wrt_params(loss, w)
    assert g[0] == 0.0 and g[3] == 0.0 and g[4] == 0.0
    np.testing.assert_allclose(g[1:3], [2.0, 4.0])


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_gradient_is_linear_in_the_loss(vals):
    def grad_of(build):
        tape = Tape()
        w = tape.variable(np.array(vals))
        return ad.grad_wrt_params(build(w), w)

    f = lambda w: ad.total(ad.tanh(w) * w)  # noqa: E731
    g = lambda w: ad.total(ad.exp(w * 0.5))  # noqa: E731
    both = grad_of(lambda w: f(w) + g(w))
    np.testing.assert_allclose(both, grad_of(f) + grad_of(g), rtol=1e-12, atol=1e-14)


def test_hyperdual_over_tape_nodes():
    # derivative components recorded on the tape differentiate w.r.t. parameters
    tape = Tape()
    w = tape.variable(np.array(0.7))
    x = HyperDual(np.array(0.3), np.array(1.0), np.array(0.0))
    out = ad.tanh(x * w)  # d/dx tanh(w x) = w sech^2(w x)
    g = ad.grad_wrt_params(out.d1, w)
    z = 0.7 * 0.3
    sech2 = 1.0 - math.tanh(z) ** 2
    expected = sech2 + 0.7 * 0.3 * (-2.0 * math.tanh(z) * sech2)
    assert abs(float(g) - expected) < 1e-12
