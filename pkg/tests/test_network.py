import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swrpinn import autodiff as ad
from swrpinn.errors import ConfigError, UsageError
from swrpinn.network import (
    NetworkArchitecture,
    NetworkParams,
    TrialNetwork,
    forward,
    hard_interface_trial,
    init_params,
    load_checkpoint,
    save_checkpoint,
    trial_eval,
)
from swrpinn.problem import coefficient

archs = st.builds(
    NetworkArchitecture,
    st.integers(1, 3),
    st.lists(st.integers(1, 8), min_size=1, max_size=4).map(tuple),
    st.sampled_from(["tanh", "sigmoid"]),
)


def test_zero_params_give_zero_output_and_derivatives():
    arch = NetworkArchitecture(2, (4, 3))
    params = NetworkParams(arch, np.zeros(arch.n_params))
    seeded = ad.seed_coordinate((0.3, 0.7), 0)
    out = forward(params, seeded)
    assert (out.value, out.d1, out.d2) == (0.0, 0.0, 0.0)


def test_single_unit_identity_weights():
    arch = NetworkArchitecture(1, (1,))
    params = NetworkParams(arch, np.zeros(arch.n_params))
    params.w[arch.index(0, 0, 0)] = 1.0
    params.w[arch.index(0, 1, 0)] = 0.4  # hidden bias
    params.w[arch.index(1, 0, 0)] = 1.0
    assert forward(params, [np.array(0.0)]) == math.tanh(0.4)


@given(archs, st.integers(0, 2**31))
def test_seeding_never_changes_value(arch, seed):
    params = init_params(arch, seed)
    rng = np.random.default_rng(seed)
    point = rng.uniform(-1, 1, arch.input_dim)
    plain = forward(params, [np.array(p) for p in point])
    for axis in range(arch.input_dim):
        assert forward(params, ad.seed_coordinate(tuple(point), axis)).value == plain


@given(archs)
def test_index_map_is_a_bijection(arch):
    seen = []
    for layer, (_, fan_in, fan_out) in enumerate(arch.blocks()):
        for row in range(fan_in + 1):
            for col in range(fan_out):
                seen.append(arch.index(layer, row, col))
    assert sorted(seen) == list(range(arch.n_params))
    s = arch.sizes
    assert arch.n_params == sum((s[r] + 1) * s[r + 1] for r in range(len(s) - 1))


def test_invalid_architectures():
    with pytest.raises(ConfigError):
        NetworkArchitecture(1, ())
    with pytest.raises(ConfigError):
        NetworkArchitecture(1, (0,))
    with pytest.raises(ConfigError):
        NetworkArchitecture(1, (3,), "relu")


def test_dimension_mismatch_is_usage_error():
    params = init_params(NetworkArchitecture(2, (3,)), 0)
    with pytest.raises(UsageError):
        forward(params, [np.array(0.0)])


def test_init_params_reproducible_and_bounded():
    arch = NetworkArchitecture(2, (20, 20, 20))
    a, b, c = init_params(arch, 7), init_params(arch, 7), init_params(arch, 8)
    np.testing.assert_array_equal(a.w, b.w)
    assert not np.array_equal(a.w, c.w)
    for offset, fan_in, fan_out in arch.blocks():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights = a.w[offset : offset + fan_in * fan_out]
        assert np.all(np.abs(weights) <= bound)
        np.testing.assert_array_equal(a.w[offset + fan_in * fan_out : offset + (fan_in + 1) * fan_out], 0.0)


@given(st.integers(0, 2**31), st.floats(-3, 3))
def test_last_layer_homogeneity(seed, c):
    arch = NetworkArchitecture(2, (5, 4))
    params = init_params(arch, seed)
    params.w[arch.blocks()[-1][0] :] += 0.1  # nonzero output bias
    scaled = NetworkParams(arch, params.w.copy())
    scaled.w[arch.blocks()[-1][0] :] *= c
    x = np.random.default_rng(seed).uniform(-1, 1, (6, 2))
    np.testing.assert_allclose(forward(scaled, x), c * forward(params, x), rtol=1e-12, atol=1e-14)


u0 = coefficient({"kind": "gaussian", "amplitude": 1.0, "k": 30.0, "center": 0.1})


def test_trial_examples():
    arch = NetworkArchitecture(2, (5,))
    trial = TrialNetwork(arch, u0)
    assert trial_eval(trial, init_params(arch, 0), [np.array(0.1)], np.array(0.0)) == 1.0
    zero = NetworkParams(arch, np.zeros(arch.n_params))
    x = np.linspace(-1, 1, 7)
    for t in (0.0, 0.3, 2.0):
        np.testing.assert_array_equal(trial_eval(trial, zero, [x], np.full(7, t)), u0([x]))


def test_hard_mode_exact_at_t0_for_random_weights():
    rng = np.random.default_rng(3)
    arch = NetworkArchitecture(2, (8, 8))
    trial = TrialNetwork(arch, u0)
    x = rng.uniform(-1, 1, 1000)
    for k in range(20):
        params = NetworkParams(arch, rng.normal(0, 3, arch.n_params))
        np.testing.assert_array_equal(trial_eval(trial, params, [x], np.zeros(1000)), u0([x]))


def test_soft_mode_returns_network():
    arch = NetworkArchitecture(2, (3,))
    params = init_params(arch, 1)
    trial = TrialNetwork(arch, u0, "soft")
    x, t = np.array([0.2]), np.array([0.4])
    np.testing.assert_array_equal(trial_eval(trial, params, [x], t), forward(params, [x, t]))
    with pytest.raises(ConfigError):
        TrialNetwork(arch, u0, "medium")


def test_hard_interface_blend():
    arch = NetworkArchitecture(2, (3,))
    params = init_params(arch, 2)
    trial = TrialNetwork(arch, u0)
    x, t = [np.array([0.05, 0.3])], np.array([0.1, 0.2])
    trace = lambda xs, tt: np.full(2, 2.0)  # noqa: E731
    on = hard_interface_trial(trial, params, trace, lambda xs: np.ones(2), x, t)
    np.testing.assert_array_equal(on, [2.0, 2.0])
    off = hard_interface_trial(trial, params, trace, lambda xs: np.zeros(2), x, t)
    np.testing.assert_array_equal(off, trial_eval(trial, params, x, t))
    const = TrialNetwork(arch, lambda xs: np.full(2, 4.0))
    zero = NetworkParams(arch, np.zeros(arch.n_params))
    half = hard_interface_trial(const, zero, trace, lambda xs: np.full(2, 0.5), x, t)
    np.testing.assert_array_equal(half, [3.0, 3.0])
    with pytest.raises(ConfigError):
        hard_interface_trial(trial, params, trace, lambda xs: np.full(2, 1.5), x, t)


def test_checkpoint_round_trip(tmp_path):
    arch = NetworkArchitecture(3, (4, 6), "sigmoid")
    params = init_params(arch, 11)
    save_checkpoint(tmp_path / "a.ckpt", params)
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.arch == arch and back.seed == 11
    np.testing.assert_array_equal(back.w, params.w)
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(UsageError):
        load_checkpoint(tmp_path / "bad")
