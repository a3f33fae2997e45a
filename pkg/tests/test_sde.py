import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempogeo.fields import ScalarField
from tempogeo.sde import (
    BrownianDriver,
    SimulationAbort,
    TimeGrid,
    brownian_increments,
    coarsen,
    integrate_sde,
    quadratic_covariation,
)


def test_grid_nodes_are_exact():
    g = TimeGrid(0.5, 2.0, 3)
    assert g.h == 0.5
    assert [g.node(k) for k in range(4)] == [0.5, 1.0, 1.5, 2.0]
    np.testing.assert_array_equal(g.times, [g.node(k) for k in range(4)])
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)


def test_increments_are_deterministic():
    d = BrownianDriver(123, 2, TimeGrid(0, 1, 50))
    a = brownian_increments(d, 7)
    b = brownian_increments(BrownianDriver(123, 2, TimeGrid(0, 1, 50)), 7)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, brownian_increments(d, 8))
    assert not np.array_equal(a, brownian_increments(BrownianDriver(124, 2, TimeGrid(0, 1, 50)), 7))


@given(st.integers(0, 2**63), st.integers(0, 10**6), st.integers(1, 3), st.integers(0, 40), st.integers(1, 40))
@settings(max_examples=60, deadline=None)
def test_increment_is_pure_function_of_key(seed, pid, dim, k0, span):
    """Any window, any batch: step k of path p is the same number."""
    d = BrownianDriver(seed, dim, TimeGrid(0.0, 1.0, 100))
    full = d.normals([pid, pid + 1])
    window = d.normals([pid + 1], k0, k0 + span)
    np.testing.assert_array_equal(window[:, 0], full[k0 : k0 + span, 1])


def test_brownian_moments():
    h = 0.01
    d = BrownianDriver(2024, 1, TimeGrid(0.0, 1000.0, 100_000))
    dw = brownian_increments(d, 0)[:, 0]
    n = dw.size
    assert abs(dw.mean()) <= 4 * np.sqrt(h / n)
    assert dw.var() == pytest.approx(h, rel=0.05)


def test_normals_have_unit_variance_and_no_lag_correlation():
    z = BrownianDriver(5, 3, TimeGrid(0, 1, 20_000)).normals([0])[:, 0, :].ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert z.var() == pytest.approx(1.0, rel=0.03)
    assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) < 4 / np.sqrt(z.size)


def test_coarsen_sums_pairs():
    dw = np.arange(8.0).reshape(4, 2)
    np.testing.assert_array_equal(coarsen(dw), [[2, 4], [10, 12]])
    with pytest.raises(ValueError):
        coarsen(np.zeros((3, 1)))


def test_zero_coefficients_give_constant_path():
    d = BrownianDriver(1, 1, TimeGrid(0, 1, 10))
    p = integrate_sde(["0"], [["0"]], [1.5], d, [0, 1])
    assert np.all(p.x == 1.5)


def test_path_bookkeeping():
    d = BrownianDriver(1, 2, TimeGrid(0, 1, 20))
    p = integrate_sde(["x2", "-x1"], [["1", "0"], ["0", "x1"]], [0.5, 0.0], d, [3, 4, 5], "stratonovich")
    np.testing.assert_array_equal(p.x[1:], p.x[:-1] + p.dx)
    assert p.n_paths == 3 and p.dim == 2
    np.testing.assert_array_equal(p.dw, d.increments([3, 4, 5]))
    sub = p.select(np.array([False, True, False]))
    np.testing.assert_array_equal(sub.x[:, 0], p.x[:, 1])


def test_constant_drift_mean():
    n = 10_000
    d = BrownianDriver(99, 1, TimeGrid(0, 1, 100))
    p = integrate_sde(["-0.25"], [["1"]], [0.0], d, np.arange(n))
    xt = p.x[-1, :, 0]
    se = xt.std(ddof=1) / np.sqrt(n)
    assert abs(xt.mean() + 0.25) <= 3 * se


def test_stratonovich_gbm_strong_error():
    grid = TimeGrid(0, 1, 1000)
    d = BrownianDriver(7, 1, grid)
    p = integrate_sde(["0"], [["x1"]], [1.0], d, np.arange(100), "stratonovich")
    exact = np.exp(d.increments(np.arange(100)).sum(axis=0)[:, 0])
    assert np.max(np.abs(p.x[-1, :, 0] - exact)) <= 5e-2
    assert np.mean(np.abs(p.x[-1, :, 0] - exact)) <= 1e-2


def test_ito_and_stratonovich_differ_by_correction():
    grid = TimeGrid(0, 1, 1000)
    d = BrownianDriver(8, 1, grid)
    ito = integrate_sde(["0"], [["x1"]], [1.0], d, np.arange(2000), "ito")
    # Itô GBM has mean one; the Stratonovich one has mean e^{1/2}
    xt = ito.x[-1, :, 0]
    assert abs(xt.mean() - 1.0) <= 3 * xt.std(ddof=1) / np.sqrt(xt.size)


def test_quadratic_variation_of_brownian_motion():
    d = BrownianDriver(3, 2, TimeGrid(0, 1, 1000))
    p = integrate_sde(["0", "0"], [["1", "0"], ["0", "1"]], [0.0, 0.0], d, np.arange(100))
    qv = quadratic_covariation(p, cumulative=True)[-1]
    assert qv[:, 0, 0].mean() == pytest.approx(1.0, abs=0.05)
    assert abs(qv[:, 0, 1].mean()) <= 0.05
    np.testing.assert_allclose(quadratic_covariation(p).sum(axis=0), qv, rtol=1e-12)


def test_quadratic_variation_of_smooth_path_halves():
    from tempogeo.sde import SemimartingalePath

    def qv(n):
        g = TimeGrid(0, 1, n)
        x = np.sin(g.times)[:, None, None]
        return quadratic_covariation(SemimartingalePath(g, x, np.diff(x, axis=0), np.array([0])), True)[-1, 0, 0, 0]

    assert qv(400) / qv(800) == pytest.approx(2.0, rel=1e-3)


def test_domain_error_aborts_only_the_offending_path():
    d = BrownianDriver(4, 1, TimeGrid(0, 1, 50))
    p = integrate_sde(["0"], [["sqrt(x1)"]], [1.0], d, [0])
    assert p.status[0] == 0
    x0 = np.array([[1.0], [-1.0]])
    bad = integrate_sde(["0"], [["sqrt(x1)"]], x0, d, [0, 1])
    assert bad.status[0] == 0 and bad.status[1] != 0
    assert bad.fail_step[1] == 0
    assert "sqrt" in bad.messages[1]


def test_divergence_is_flagged_not_raised():
    d = BrownianDriver(4, 1, TimeGrid(0, 1, 200))
    p = integrate_sde(["x1^2"], [["0"]], [10.0], d, [0])
    assert p.diverged[0]


def test_nonfinite_state_aborts():
    d = BrownianDriver(4, 1, TimeGrid(0, 1, 10))
    with pytest.raises(SimulationAbort):
        integrate_sde(["1e308*exp(1000)"], [["0"]], [0.0], d, [0])


def test_field_objects_are_accepted():
    d = BrownianDriver(4, 1, TimeGrid(0, 1, 10))
    a = integrate_sde([ScalarField.parse("-x1", 1)], [["1"]], [1.0], d, [0])
    b = integrate_sde(["-x1"], [["1"]], [1.0], d, [0])
    np.testing.assert_array_equal(a.x, b.x)
