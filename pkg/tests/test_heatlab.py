import numpy as np
import pytest

from tempogeo import heatlab as H
from tempogeo.frame import horizontal_lift, riemann_horizontal_lift
from tempogeo.geometry import ConnectionFamily, MetricFamily
from tempogeo.sde import BrownianDriver, TimeGrid, integrate_sde

CIRCLE = H.circle()


def circle_metric(src):
    return MetricFamily([[src]], CIRCLE)


def test_time_reversed_metric_values_and_rate():
    base = MetricFamily([["exp(2*t)*(1 + x1^2)"]])
    rev = H.TimeReversedMetric(base, 3.0)
    x = np.array([[0.3], [-1.2]])
    for t in (0.0, 0.7, 2.5):
        np.testing.assert_allclose(rev(t, x), base(3.0 - t, x), rtol=1e-14)
        np.testing.assert_allclose(rev.dt(t, x), -base.dt(3.0 - t, x), atol=1e-9)


# g(t)-Brownian motion ------------------------------------------------------------


def test_static_euclidean_gt_brownian_is_the_driver():
    grid = TimeGrid(0, 1, 100)
    driver = BrownianDriver(1, 2, grid)
    path, lift = H.gt_brownian_motion(MetricFamily.conformal("1", 2), [0.5, -0.5], driver, np.arange(5))
    np.testing.assert_allclose(path.x - path.x[0], np.cumsum(np.concatenate([np.zeros((1, 5, 2)), driver.increments(np.arange(5))]), axis=0), atol=1e-12)
    np.testing.assert_allclose(lift.e, np.broadcast_to(np.eye(2), lift.e.shape), atol=1e-14)


def test_expanding_line_variance():
    """For g = e^{2t} the process is ∫e^{-s}dW_s with variance (1 − e^{−2T})/2."""
    grid = TimeGrid(0, 1, 500)
    path, _ = H.gt_brownian_motion(MetricFamily([["exp(2*t)"]]), [0.0], BrownianDriver(11, 1, grid), np.arange(4000))
    xt = path.x[-1, :, 0]
    expected = (1 - np.exp(-2)) / 2
    assert abs(xt.var(ddof=1) - expected) <= 4 * expected * np.sqrt(2 / xt.size)
    assert abs(xt.mean()) <= 4 * np.sqrt(expected / xt.size)


def test_antidevelopment_of_gt_brownian_is_the_driver():
    m = MetricFamily.conformal("exp(t)*(1 + 0.5*sin(x1)*cos(x2))", 2)
    grid = TimeGrid(0, 1, 200)
    driver = BrownianDriver(4, 2, grid)
    path, lift = H.gt_brownian_motion(m, [0.1, 0.2], driver, np.arange(6))
    np.testing.assert_allclose(lift.dz, driver.increments(np.arange(6)), atol=1e-15)
    again = riemann_horizontal_lift(path, m, lift.e[0])
    assert np.max(np.abs(again.dz - lift.dz)) <= 1e-9


def test_gt_brownian_frames_stay_orthonormal():
    m = MetricFamily.conformal("exp(2*t)", 2)
    path, lift = H.gt_brownian_motion(m, [0.0, 0.0], BrownianDriver(2, 2, TimeGrid(0, 1, 1000)), np.arange(5))
    g = np.stack([m(t, path.x[k]) for k, t in enumerate(path.grid.times)])
    gram = np.swapaxes(lift.e, -1, -2) @ g @ lift.e
    assert np.max(np.abs(gram - np.eye(2))) <= 5e-3


# image antidevelopment -----------------------------------------------------------


def _lifted_paths(n):
    conn = ConnectionFamily.levi_civita(MetricFamily([["exp(x1)"]]))
    p = integrate_sde(["-0.25"], [["1"]], [0.0], BrownianDriver(8, 1, TimeGrid(0, 1, n)), np.arange(4))
    return conn, horizontal_lift(p, conn)


def test_image_of_identity_map_reproduces_lift():
    conn, lift = _lifted_paths(200)
    chk = H.image_antidevelopment_check(["x1"], lift, conn, conn)
    assert chk.residual <= 1e-9
    np.testing.assert_allclose(chk.lifted, lift.z, atol=1e-9)


def test_image_of_square_residual_is_first_order():
    res = []
    for n in (200, 800):
        conn, lift = _lifted_paths(n)
        res.append(H.image_antidevelopment_check(["x1^2"], lift, conn).residual)
    assert res[1] <= 0.05
    assert res[1] < res[0]


def test_image_with_time_dependent_map():
    conn, lift = _lifted_paths(800)
    chk = H.image_antidevelopment_check(["t*x1 + t^2"], lift, conn)
    assert chk.residual <= 0.05
    assert chk.image.x.shape == lift.x.shape


# heat solver ---------------------------------------------------------------------


def test_constant_initial_data_is_stationary():
    sol = H.solve_heat_1d(circle_metric("exp(t)*(2 + sin(x1))"), "3", 0, 1, n_theta=64)
    np.testing.assert_allclose(sol.values, 3.0, atol=1e-12)


def test_static_circle_amplitude():
    sol = H.solve_heat_1d(circle_metric("1"), "sin(x1)", 0, 1, n_theta=256)
    np.testing.assert_allclose(sol.values[-1], np.exp(-0.5) * np.sin(sol.theta), atol=1e-4)


@pytest.mark.parametrize("k", [1.0, 2.0])
def test_exponential_metric_oracle(k):
    sol = H.solve_heat_1d(circle_metric(f"exp({k}*t)"), "sin(x1)", 0, 1, n_theta=256)
    amp = np.exp(-(1 - np.exp(-k)) / (2 * k))
    np.testing.assert_allclose(sol.values[-1], amp * np.sin(sol.theta), atol=1e-4)
    np.testing.assert_allclose(sol.du(sol.times.size - 1, [0.0, 1.0]), amp * np.cos([0.0, 1.0]), atol=1e-4)


def test_weighted_mass_conserved_for_static_metric():
    m = circle_metric("2 + sin(x1)")
    sol = H.solve_heat_1d(m, "exp(sin(x1))", 0, 0.5, n_theta=128)
    w = np.sqrt(2 + np.sin(sol.theta))
    mass = sol.values @ w
    assert np.max(np.abs(np.diff(mass))) <= 1e-10 * abs(mass[0])


def test_cfl_violation():
    with pytest.raises(H.CFLViolation):
        H.solve_heat_1d(circle_metric("1"), "sin(x1)", 0, 1, n_theta=256, n_t=10)


def test_heat_csv(tmp_path):
    sol = H.solve_heat_1d(circle_metric("1"), "sin(x1)", 0, 0.1, n_theta=16)
    sol.write_csv(tmp_path / "u.csv", every=sol.times.size - 1)
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "t,theta,u"
    assert len(lines) == 1 + 2 * 16


# representation and Liouville ------------------------------------------------------


def test_representation_without_elapsed_time_is_exact():
    m = circle_metric("exp(t)")
    sol = H.solve_heat_1d(m, "sin(x1)", 0.5, 0.5)
    res = H.representation_check(m, sol, 0.7, n_paths=10)
    assert res.lhs == res.rhs == pytest.approx(np.cos(0.7), abs=1e-6)
    assert res.stderr == 0


def test_representation_stderr_halves_with_four_times_the_paths():
    m = circle_metric("exp(t)")
    sol = H.solve_heat_1d(m, "sin(x1)", 0, 1, n_theta=128)
    small = H.representation_check(m, sol, 0.7, n_paths=500, n_steps=200, seed=5)
    large = H.representation_check(m, sol, 0.7, n_paths=2000, n_steps=200, seed=5)
    assert 1.5 <= small.stderr / large.stderr <= 3
    assert large.consistent


def test_liouville_bound_holds_and_orders_with_rate():
    sol1 = H.solve_heat_1d(circle_metric("exp(t)"), "sin(x1)", 0, 2)
    sol2 = H.solve_heat_1d(circle_metric("exp(2*t)"), "sin(x1)", 0, 2)
    r1 = H.liouville_bound_check(sol1.metric, sol1, 1.0)
    r2 = H.liouville_bound_check(sol2.metric, sol2, 2.0)
    assert r1.holds and r2.holds
    assert r2.observed < r1.observed
    assert r2.bound < r1.bound


def test_super_ricci_violations():
    m = circle_metric("exp(t)")
    theta = np.linspace(0, 6, 7)[:, None]
    assert H.check_super_ricci(m, 1.0, [0, 1], theta) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(H.SuperRicciViolation):
        H.check_super_ricci(m, 2.0, [0, 1], theta)
    for k in (0.0, -1.0):
        with pytest.raises(H.SuperRicciViolation):
            H.check_super_ricci(m, k, [0], theta)


def test_sphere_radius_direction_decides_super_ricci():
    """Growing round sphere: ∂g/∂t + Ric = 3g/R², shrinking: −g/R²."""
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    growing = MetricFamily.conformal("4*(16+2*t)/(1+x1^2+x2^2)^2", 2)
    assert H.check_super_ricci(growing, 0.1, [0.0, 0.5], pts) >= -1e-9
    shrinking = MetricFamily.conformal("4*(16-2*t)/(1+x1^2+x2^2)^2", 2)
    with pytest.raises(H.SuperRicciViolation):
        H.check_super_ricci(shrinking, 0.1, [0.0, 0.5], pts)
