import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from aoivoi.model import (
    ConfigError,
    LoopDynamics,
    LoopNotStarted,
    RngStream,
    SubSystemParams,
    control_input,
    draw_offset,
    map_slot_to_step,
    plant_step,
    sample_noise,
)


def scalar(A, B=1.0, W=1.0, L=None, T_s=10, T_o=0):
    return SubSystemParams(0, A, B, W, A if L is None else L, T_s, T_o)


@pytest.mark.parametrize("t, T_o, T_s, k", [(3, 3, 10, 0), (12, 3, 10, 0), (13, 3, 10, 1)])
def test_map_slot_to_step_examples(t, T_o, T_s, k):
    assert map_slot_to_step(t, T_o, T_s) == k


def test_map_slot_to_step_before_start():
    with pytest.raises(LoopNotStarted):
        map_slot_to_step(2, 3, 10)


@given(st.integers(1, 50), st.data())
def test_map_slot_to_step_period_starts(T_s, data):
    T_o = data.draw(st.integers(0, T_s - 1))
    k = data.draw(st.integers(0, 10_000))
    assert map_slot_to_step(T_o + k * T_s, T_o, T_s) == k
    # constant over the whole period, monotone across it
    assert map_slot_to_step(T_o + k * T_s + T_s - 1, T_o, T_s) == k
    assert map_slot_to_step(T_o + (k + 1) * T_s, T_o, T_s) == k + 1


@pytest.mark.parametrize(
    "A, x, u, w, expected",
    [(1.5, 2.0, -3.0, 0.1, 0.1), (1.5, 0.0, 0.0, 0.0, 0.0), (0.75, 4.0, 0.0, 1.0, 4.0)],
)
def test_plant_step_scalar(A, x, u, w, expected):
    p = scalar(A)
    out = plant_step([x], [u], [w], p)
    assert out == pytest.approx([expected])


@given(
    st.lists(st.floats(-10, 10), min_size=10, max_size=10),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_plant_step_is_linear(vals, a, b):
    A = np.array(vals[:4]).reshape(2, 2)
    B = np.array(vals[4:6]).reshape(2, 1)
    p = SubSystemParams(0, A, B, np.eye(2), np.zeros((1, 2)))
    x1, x2 = np.array(vals[6:8]), np.array(vals[8:10])
    u1, u2 = np.array([vals[0]]), np.array([vals[5]])
    w1, w2 = np.array(vals[2:4]), np.array(vals[7:9])
    lhs = plant_step(a * x1 + b * x2, a * u1 + b * u2, a * w1 + b * w2, p)
    rhs = a * plant_step(x1, u1, w1, p) + b * plant_step(x2, u2, w2, p)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_control_input_examples():
    assert control_input([2.0], [[1.5]]) == pytest.approx([-3.0])
    assert control_input([0.0], [[1.5]]) == pytest.approx([0.0])
    np.testing.assert_array_equal(control_input([1.0, 2.0], np.eye(2)), [-1.0, -2.0])


@given(st.floats(-5, 5), st.floats(-100, 100), st.floats(-10, 10))
def test_deadbeat_with_perfect_estimate_leaves_only_noise(A, x, w):
    p = scalar(A)
    u = control_input([x], p.L)
    assert plant_step([x], u, [w], p)[0] == pytest.approx(w, abs=1e-9 * (1 + abs(A * x)))


def test_zero_covariance_gives_zero_noise():
    stream = RngStream(1, (0, 0))
    for _ in range(10):
        np.testing.assert_array_equal(sample_noise(stream, np.zeros((2, 2))), [0.0, 0.0])


def test_unit_noise_moments():
    stream = RngStream(7, (0, 3))
    n = 100_000
    draws = np.array([sample_noise(stream, [[1.0]])[0] for _ in range(n)])
    assert abs(draws.mean()) < 3 / np.sqrt(n)
    assert 0.97 <= draws.var() <= 1.03


def test_noise_uses_diagonal_std():
    stream = RngStream(3, (0, 0))
    draws = np.array([sample_noise(stream, np.diag([4.0, 0.25])) for _ in range(20_000)])
    np.testing.assert_allclose(draws.std(axis=0), [2.0, 0.5], rtol=0.03)


def test_rng_streams_reproducible_and_independent():
    a = RngStream(42, (0, 5))
    b = RngStream(42, (0, 5))
    c = RngStream(42, (0, 6))
    xa = [a.standard_normal() for _ in range(1000)]
    xb = list(b.normal(1000))
    xc = [c.standard_normal() for _ in range(1000)]
    assert xa == xb
    assert xa != xc


def test_offset_single_value():
    stream = RngStream(0, (1, 0))
    assert {draw_offset(stream, 1) for _ in range(50)} == {0}


def test_offset_uniformity():
    stream = RngStream(11, (1, 0))
    draws = np.array([draw_offset(stream, 10) for _ in range(100_000)])
    counts = np.bincount(draws, minlength=10)
    assert counts.size == 10 and counts.min() > 0
    chi2 = ((counts - 10_000) ** 2 / 10_000).sum()
    assert chi2 < stats.chi2.ppf(0.999, df=9)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(A=[[1, 0]]),
        dict(B=[[1], [1]]),
        dict(W=-1.0),
        dict(W=[[1, 2], [0, 1]]),
        dict(T_s=0),
        dict(T_o=10),
        dict(T_o=-1),
    ],
)
def test_params_rejects_bad_config(kwargs):
    base = dict(A=1.0, B=1.0, W=1.0, L=1.0, T_s=10, T_o=0)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        SubSystemParams(0, **base)


def test_rejects_indefinite_covariance():
    with pytest.raises(ConfigError):
        SubSystemParams(0, np.eye(2), np.eye(2), [[1.0, 2.0], [2.0, 1.0]], np.eye(2))


@settings(max_examples=50)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-10, 10), st.floats(0.01, 4))
def test_scalar_kernel_matches_array_kernel(A, B, x, var):
    p = SubSystemParams(0, A, B, var, 0.5)
    fast, slow = LoopDynamics(p), LoopDynamics(p, force_array=True)
    assert fast.scalar and not slow.scalar
    u_fast, u_slow = fast.control(x), slow.control(np.array([x]))
    assert u_fast == pytest.approx(u_slow[0])
    assert fast.propagate(x, u_fast) == pytest.approx(slow.propagate(np.array([x]), u_slow)[0])
    s1, s2 = RngStream(5, (0, 0)), RngStream(5, (0, 0))
    assert fast.noise(s1) == pytest.approx(slow.noise(s2)[0])
