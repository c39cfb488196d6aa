import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_triples
from ogpp._validation import ConfigError, ContractError
from ogpp.paths import (
    DegenerateChordError,
    PathSpec,
    atv,
    atv_optimal,
    cubic_hermite_sample,
    hermite_arc_length,
    hermite_derivative,
    hermite_eval,
    hermite_velocity,
    linear_sample,
    minimal_image,
    ntv,
    path_batch,
    speed_profile,
    terminal_velocity,
    toroidal_sample,
)

coords = arrays(np.float64, 3, elements=st.floats(-2, 2))


def _unit(v):
    return v / np.linalg.norm(v)


def test_linear_endpoints_and_velocity():
    x0, x1 = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    assert np.allclose(linear_sample(x0, x1, 0.0).x_t, x0)
    assert np.allclose(linear_sample(x0, x1, 1.0).x_t, x1)
    assert np.allclose(linear_sample(x0, x1, 0.3).u_ref, x1 - x0)


def test_toroidal_takes_short_way_round():
    s = toroidal_sample(np.array([0.95]), np.array([0.05]), 0.5)
    assert np.allclose(s.u_ref, [0.1])
    assert np.allclose(s.x_t, [0.0]) or np.allclose(s.x_t, [1.0])


def test_minimal_image_range():
    d = minimal_image(np.linspace(-3, 3, 101))
    assert np.all(d >= -0.5) and np.all(d < 0.5)


def test_time_outside_unit_interval_rejected():
    with pytest.raises(ContractError):
        linear_sample(np.zeros(2), np.ones(2), 1.5)
    with pytest.raises(ContractError):
        hermite_velocity(np.zeros(2), np.ones(2), np.ones(2), -0.1)


def test_ntv_rejects_zero_and_normalizes():
    with pytest.raises(ContractError):
        ntv(np.zeros(3))
    assert np.isclose(np.linalg.norm(ntv(np.array([0.0, 0.0, 1.0]))), 1.0)


def test_atv_degenerate_chord():
    with pytest.raises(DegenerateChordError):
        atv(np.ones(3), np.ones(3), np.array([1.0, 0, 0]))


def test_atv_length_formula():
    x0, x1 = np.zeros(2), np.array([2.0, 0.0])
    n = np.array([0.0, 1.0])  # perpendicular: S = 0
    assert np.allclose(atv(x0, x1, n, lam=1.0), [0.0, 4.0])
    assert np.allclose(atv(x0, x1, np.array([1.0, 0.0]), lam=3.0), [2.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(coords, coords, coords, st.floats(0.0, 1.0))
def test_hermite_velocity_matches_derivative(x0, x1, v1, t):
    if t >= 1.0:
        t = 1.0
    x_t = hermite_eval(x0, x1, v1, t)
    assert np.allclose(hermite_velocity(x_t, x1, v1, t), hermite_derivative(x0, x1, v1, t), atol=1e-8 / max(1 - t, 1e-3))


@settings(max_examples=100, deadline=None)
@given(coords, coords, coords)
def test_hermite_endpoints(x0, x1, v1):
    assert np.allclose(hermite_eval(x0, x1, v1, 0.0), x0, atol=0)
    assert np.allclose(hermite_eval(x0, x1, v1, 1.0), x1, rtol=1e-15, atol=1e-15)
    assert np.allclose(hermite_derivative(x0, x1, v1, 1.0), v1)


def test_cubic_endpoints_and_tangents(rng):
    x0, x1, n = random_triples(rng, 1)
    x0, x1, v1 = x0[0], x1[0], n[0] * 1.7
    for mode in ("zero", "chord"):
        assert np.allclose(cubic_hermite_sample(x0, x1, mode, v1, 0.0).x_t, x0)
        assert np.allclose(cubic_hermite_sample(x0, x1, mode, v1, 1.0).x_t, x1)
        assert np.allclose(cubic_hermite_sample(x0, x1, mode, v1, 1.0).u_ref, v1)
        h = 1e-6
        fd = (cubic_hermite_sample(x0, x1, mode, v1, 0.5 + h).x_t - cubic_hermite_sample(x0, x1, mode, v1, 0.5 - h).x_t) / (2 * h)
        assert np.allclose(fd, cubic_hermite_sample(x0, x1, mode, v1, 0.5).u_ref, atol=1e-6)
    assert np.allclose(cubic_hermite_sample(x0, x1, "zero", v1, 0.0).u_ref, 0.0)


def test_path_batch_agrees_with_scalar_forms(rng):
    B, N, D = 3, 5, 2
    x0, x1 = rng.normal(size=(B, N, D)), rng.normal(size=(B, N, D))
    v1 = rng.normal(size=(B, N, D))
    t = rng.uniform(size=B)
    xt, u = path_batch(x0, x1, t, PathSpec("hermite_quadratic", "atv"), v1)
    for b in range(B):
        assert np.allclose(xt[b], hermite_eval(x0[b], x1[b], v1[b], t[b]))
        assert np.allclose(u[b], hermite_velocity(xt[b], x1[b], v1[b], t[b]))
    xt, u = path_batch(x0, x1, t, PathSpec("linear"))
    assert np.allclose(u, x1 - x0)
    xt, u = path_batch(x0, x1, t, PathSpec("hermite_cubic", "ntv", n0_mode="chord"), v1)
    assert np.allclose(xt[1], cubic_hermite_sample(x0[1], x1[1], "chord", v1[1], t[1]).x_t)
    with pytest.raises(ContractError):
        path_batch(x0, x1, t, PathSpec("hermite_quadratic", "ntv"))


def test_pathspec_validation():
    with pytest.raises(ConfigError):
        PathSpec("linear", "atv")
    with pytest.raises(ConfigError):
        PathSpec("hermite_quadratic")
    with pytest.raises(ConfigError):
        PathSpec("spline")
    assert PathSpec("hermite_cubic", "ntv").geometric and not PathSpec().geometric


def _simpson_length(x0, x1, v1, n=10_000):
    t = np.linspace(0, 1, n + 1)
    s = np.linalg.norm(hermite_derivative(x0[None], x1[None], v1[None], t[:, None]), axis=1)
    return (1.0 / n) / 3.0 * (s[0] + s[-1] + 4 * s[1:-1:2].sum() + 2 * s[2:-1:2].sum())


def test_arc_length_against_quadrature(rng):
    x0, x1, n = random_triples(rng, 50)
    for a, b, nh in zip(x0, x1, n):
        v1 = atv(a, b, nh)
        assert hermite_arc_length(a, b, v1) == pytest.approx(_simpson_length(a, b, v1), rel=1e-8)


def test_arc_length_degenerate_cases():
    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    # straight line traversed uniformly: v1 equals the chord
    assert hermite_arc_length(x0, x1, x1 - x0) == pytest.approx(1.0, rel=1e-12)
    # v1 parallel to the chord with a stop inside: zero discriminant branch
    v1 = np.array([3.0, 0.0])
    assert hermite_arc_length(x0, x1, v1) == pytest.approx(_simpson_length(x0, x1, v1), rel=1e-7)


def _cv(x0, x1, v1):
    s = speed_profile(x0, x1, v1)
    return s.std() / s.mean()


def test_atv_optimal_beats_grid_and_stays_in_range(rng):
    x0, x1, n = random_triples(rng, 20)
    for a, b, nh in zip(x0, x1, n):
        v = atv_optimal(a, b, nh)
        alpha = float(v @ nh)
        assert 0.5 - 1e-9 <= alpha <= 15.0 + 1e-9
        grid = np.arange(0.5, 15.0 + 1e-9, 0.01)
        best = grid[np.argmin([_cv(a, b, g * nh) for g in grid])]
        assert _cv(a, b, v) <= _cv(a, b, best * nh) + 1e-12
        assert abs(alpha - best) <= 1e-2


def test_terminal_velocity_modes(rng):
    x0, x1, n = random_triples(rng, 6)
    x0, x1, n = (a.reshape(2, 3, 3) for a in (x0, x1, n))
    assert np.allclose(terminal_velocity(x0, x1, n, PathSpec("hermite_quadratic", "ntv")), n)
    assert np.allclose(terminal_velocity(x0, x1, n, PathSpec("hermite_quadratic", "atv")), atv(x0, x1, n))
    opt = terminal_velocity(x0, x1, n, PathSpec("hermite_quadratic", "atv_optimal"))
    assert opt.shape == x0.shape
    assert np.allclose(opt[1, 2], atv_optimal(x0[1, 2], x1[1, 2], n[1, 2]))
