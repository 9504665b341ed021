import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perturbed_lab.coefficients import make_builtin
from perturbed_lab.errors import ConvergenceError, NumericalError
from perturbed_lab.noise import TimeGrid, sample, sample_batch
from perturbed_lab.reflected import (
    ReflectedSpec,
    _inner_fixed_point,
    check_path,
    skorokhod_map,
    solve_picard_reflected,
    solve_stepwise,
)

UNIT = make_builtin("constant", [1.0])
SIN = make_builtin("sin_perturbed", [1.0, 0.1])
DOWN = make_builtin("constant", [0.0], drift=(-1, 0))
UP = make_builtin("constant", [0.0], drift=(1, 0))


def _forced(alpha, coeffs):
    spec = object.__new__(ReflectedSpec)
    object.__setattr__(spec, "alpha", alpha)
    object.__setattr__(spec, "coeffs", coeffs)
    return spec


@pytest.mark.parametrize("alpha", [-0.1, 0.5, 0.7])
def test_alpha_range(alpha):
    with pytest.raises(ValueError):
        ReflectedSpec(alpha, UNIT)


def test_skorokhod_examples():
    t = TimeGrid(1.0, 10).times
    x, l = skorokhod_map(-t)
    np.testing.assert_array_equal(l, t)
    np.testing.assert_array_equal(x, 0.0)

    g = np.array([0.0, 0.5, 0.7, 2.0])
    x, l = skorokhod_map(g)
    np.testing.assert_array_equal(l, 0.0)
    np.testing.assert_array_equal(x, g)

    x, l = skorokhod_map(np.array([0.0, -1.0, 1.0]))
    np.testing.assert_array_equal(l, [0, 1, 1])
    np.testing.assert_array_equal(x, [0, 0, 2])

    with pytest.raises(ValueError):
        skorokhod_map(np.array([1.0, 2.0]))


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.49])
def test_pure_downward_drift_sticks_at_zero(alpha):
    g = TimeGrid(1.0, 16)
    p = solve_stepwise(ReflectedSpec(alpha, DOWN), sample(g, 0))
    np.testing.assert_array_equal(p.x, 0.0)
    np.testing.assert_array_equal(p.m, 0.0)
    np.testing.assert_allclose(p.l, g.times, rtol=0, atol=1e-15)


def test_upward_drift_no_reflection():
    g = TimeGrid(1.0, 64)
    p = solve_stepwise(ReflectedSpec(0.25, UP), sample(g, 0))
    np.testing.assert_array_equal(p.l, 0.0)
    np.testing.assert_allclose(p.x, g.times * 4 / 3, rtol=1e-12, atol=0)


def test_alpha_zero_is_classical_skorokhod_bitwise():
    w = sample(TimeGrid(1.0, 2048), 31)
    p = solve_stepwise(ReflectedSpec(0.0, UNIT), w)
    G = np.concatenate([[0.0], np.cumsum(w.increments)])
    x, l = skorokhod_map(G)
    assert np.array_equal(p.g, G)
    assert np.array_equal(p.x, x)
    assert np.array_equal(p.l, l)


def test_alpha_zero_reduction_state_dependent():
    w = sample(TimeGrid(1.0, 512), 8)
    p = solve_stepwise(ReflectedSpec(0.0, SIN), w)
    x, l = skorokhod_map(p.g)
    assert np.array_equal(p.x, x)


def test_inner_loop_failure_is_reported():
    with pytest.raises(ConvergenceError, match="alpha"):
        solve_stepwise(ReflectedSpec(0.4, UP), sample(TimeGrid(1.0, 8), 0), max_inner=0)
    with pytest.raises((ConvergenceError, NumericalError)):
        solve_stepwise(_forced(1.2, UP), sample(TimeGrid(1.0, 8), 0))


@settings(max_examples=200, deadline=None)
@given(
    g=st.floats(-3, 3),
    mp=st.floats(0, 3),
    lp=st.floats(0, 3),
    alpha=st.floats(0, 0.499),
)
def test_step_solution_matches_plain_iteration(g, mp, lp, alpha):
    # Gauss-Seidel from the previous (m, l), as in the step equations, run to a tight fixed point
    m, l = mp, lp
    for _ in range(2000):
        m_new = max(mp, g + alpha * m + l)
        l_new = max(lp, -(g + alpha * m_new), 0.0)
        done = abs(m_new - m) + abs(l_new - l) < 1e-15
        m, l = m_new, l_new
        if done:
            break
    ms, ls = _inner_fixed_point(np.array(g), np.array(mp), np.array(lp), alpha, 1e-13, 200, 0)
    assert ms.item() == pytest.approx(m, abs=1e-12)
    assert ls.item() == pytest.approx(l, abs=1e-12)


def test_batch_equals_single_paths():
    g = TimeGrid(1.0, 128)
    w = sample_batch(g, 5, 6)
    spec = ReflectedSpec(0.3, SIN)
    pb = solve_stepwise(spec, w)
    for i in range(6):
        ps = solve_stepwise(spec, w[i])
        np.testing.assert_allclose(pb[i].x, ps.x, rtol=0, atol=1e-13)
        np.testing.assert_array_equal(pb[i].l, ps.l)


def test_csv_columns(tmp_path):
    p = solve_stepwise(ReflectedSpec(0.2, UNIT), sample(TimeGrid(1.0, 4), 0))
    lines = p.to_csv(tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "t,x,g,m,l,v" and len(lines) == 6


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    alpha=st.floats(0, 0.499),
    c1=st.floats(-0.5, 0.5),
    b=st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
)
def test_reflected_invariants(seed, alpha, c1, b):
    spec = ReflectedSpec(alpha, make_builtin("sin_perturbed", [1.0, c1], drift=b))
    p = solve_stepwise(spec, sample(TimeGrid(1.0, 256), seed))
    rep = check_path(p, spec)
    assert np.min(p.x) >= -1e-12
    assert rep["l0"] == 0 and rep["l_decrease"] == 0
    assert rep["reflection_identity"] <= 1e-12
    assert rep["residual"] <= 1e-10
    assert rep["running_max"] <= 1e-10
    # local time only grows on steps that end at the boundary
    assert rep["complementarity_right"] <= 1e-12


def test_left_point_complementarity_is_order_sqrt_dt():
    """The left-point sum is charged on steps entering zero; it scales like sqrt(dt)."""
    spec = ReflectedSpec(0.2, SIN)
    sums = []
    for n in (256, 4096):
        p = solve_stepwise(spec, sample_batch(TimeGrid(1.0, n), 0, 400))
        sums.append(np.mean(np.sum(p.x[:, :-1] * np.diff(p.l, axis=-1), axis=-1)))
    ratio = sums[0] / sums[1]
    assert 2.5 < ratio < 6.5  # sqrt(16) = 4, far from the dt-ratio 16


# ---------------------------------------------------------------- Picard


def test_picard_downward_drift_exact_after_one():
    its = solve_picard_reflected(ReflectedSpec(0.3, DOWN), sample(TimeGrid(1.0, 16), 0), 4)
    np.testing.assert_array_equal(its[0].x, 0.0)
    for it in its[1:]:
        np.testing.assert_array_equal(it.x, 0.0)
        np.testing.assert_allclose(it.l, TimeGrid(1.0, 16).times, atol=1e-15)


def test_picard_state_free_alpha_zero_identical_from_one():
    its = solve_picard_reflected(ReflectedSpec(0.0, UNIT), sample(TimeGrid(1.0, 128), 2), 4)
    for it in its[2:]:
        np.testing.assert_array_equal(it.x, its[1].x)


def test_picard_state_free_only_lagged_max_moves():
    # G is frozen; successive iterates differ only through the lagged maximum,
    # which contracts by alpha per pass (not exactly stationary after one pass)
    w = sample(TimeGrid(1.0, 256), 4)
    spec = ReflectedSpec(0.4, UNIT)
    its = solve_picard_reflected(spec, w, 30)
    for it in its[1:]:
        np.testing.assert_array_equal(it.g, its[1].g)
    steps = [np.max(np.abs(its[k + 1].x - its[k].x)) for k in range(1, 30)]
    assert steps[-1] < 1e-8
    assert np.max(np.abs(its[-1].x - solve_stepwise(spec, w).x)) < 1e-9


def test_picard_mean_distance_decays_monotonically():
    w = sample_batch(TimeGrid(1.0, 512), 77, 32)
    spec = ReflectedSpec(0.4, SIN)
    target = solve_stepwise(spec, w).x
    mean_d = [np.mean(np.max(np.abs(it.x - target), axis=-1)) for it in solve_picard_reflected(spec, w, 10)]
    assert all(b < a for a, b in zip(mean_d, mean_d[1:]))


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.45])
def test_picard_agrees_with_stepwise(alpha):
    w = sample(TimeGrid(1.0, 256), 13)
    spec = ReflectedSpec(alpha, SIN)
    tol = 1e-13
    target = solve_stepwise(spec, w, tol=tol).x
    its = solve_picard_reflected(spec, w, 120)
    assert np.max(np.abs(its[-1].x - target)) <= 10 * tol * (1 + np.max(target))
