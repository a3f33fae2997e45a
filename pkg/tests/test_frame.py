import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempogeo import frame as FR
from tempogeo.geometry import ConnectionFamily, MetricFamily, gram_schmidt, operator_norm
from tempogeo.heatlab import gt_brownian_motion
from tempogeo.sde import BrownianDriver, SemimartingalePath, TimeGrid, integrate_sde

EXP_LINE = MetricFamily([["exp(x1)"]])
GRID = TimeGrid(0.0, 1.0, 1000)


def bm(dim, n_paths, grid=GRID, seed=1, x0=None, sigma="1"):
    diff = [[sigma if i == j else "0" for j in range(dim)] for i in range(dim)]
    x0 = np.zeros(dim) if x0 is None else x0
    return integrate_sde(["0"] * dim, diff, x0, BrownianDriver(seed, dim, grid), np.arange(n_paths))


def test_euclidean_lift_keeps_frame():
    path = bm(2, 5)
    e0 = np.array([[2.0, 1.0], [0.0, 1.0]])
    lift = FR.horizontal_lift(path, ConnectionFamily.flat(2), e0)
    assert np.all(lift.e == e0)
    np.testing.assert_allclose(lift.dz, np.linalg.solve(e0, path.dx[..., None])[..., 0], atol=1e-15)
    np.testing.assert_allclose(lift.z[0], 0.0)
    np.testing.assert_allclose(lift.z[1:], np.cumsum(lift.dz, axis=0))
    np.testing.assert_array_equal(lift.x, path.x)


def test_exponential_line_frame_oracle():
    path = bm(1, 100)
    lift = FR.horizontal_lift(path, ConnectionFamily.levi_civita(EXP_LINE))
    oracle = np.exp(-(path.x[-1, :, 0] - path.x[0, :, 0]) / 2)
    np.testing.assert_allclose(lift.e[-1, :, 0, 0], oracle, rtol=1e-3)


def test_martingale_antidevelopment_closed_form():
    grid = GRID
    driver = BrownianDriver(5, 1, grid)
    path = integrate_sde(["-0.25"], [["1"]], [0.0], driver, np.arange(200))
    lift = FR.horizontal_lift(path, ConnectionFamily.levi_civita(EXP_LINE))
    w = driver.increments(np.arange(200)).sum(axis=0)[:, 0]
    oracle = 2 * (np.exp(w / 2 - 1 / 8) - 1)
    assert np.mean(np.abs(lift.z[-1, :, 0] - oracle) <= 1e-2) >= 0.99


def test_riemann_lift_of_static_metric_is_the_horizontal_lift():
    path = bm(1, 4)
    e0 = np.array([[1.0]])
    a = FR.riemann_horizontal_lift(path, EXP_LINE, e0)
    b = FR.horizontal_lift(path, ConnectionFamily.levi_civita(EXP_LINE), e0)
    np.testing.assert_array_equal(a.e, b.e)
    np.testing.assert_array_equal(a.dz, b.dz)


def test_riemann_lift_expanding_plane():
    m = MetricFamily.conformal("exp(2*t)", 2)
    lift = FR.riemann_horizontal_lift(bm(2, 3), m)
    exact = np.exp(-GRID.times)[:, None, None, None] * np.eye(2)
    assert np.max(np.abs(lift.e - exact)) <= 1e-3


def test_riemann_lift_line_frames_follow_metric():
    m = MetricFamily([["exp(t + x1)"]])
    path = bm(1, 20)
    lift = FR.riemann_horizontal_lift(path, m)
    oracle = m(GRID.times[:, None], path.x)[..., 0, 0] ** -0.5
    np.testing.assert_allclose(lift.e[..., 0, 0], oracle, rtol=2e-3)


def test_orthonormality_defect_is_first_order():
    m = MetricFamily.conformal("exp(2*t)*(2 + sin(x1))", 2)
    defects = []
    for n in (250, 500, 1000):
        g = TimeGrid(0.0, 1.0, n)
        lift = FR.riemann_horizontal_lift(bm(2, 5, g), m)
        defects.append(FR.orthonormality_defect(lift, m).max())
    for coarse, fine in zip(defects, defects[1:]):
        assert 1.5 <= coarse / fine <= 3.0


def test_reorthonormalization_removes_the_defect():
    m = MetricFamily.conformal("exp(2*t)", 2)
    lift = FR.riemann_horizontal_lift(bm(2, 3), m, reorthonormalize=True)
    assert FR.orthonormality_defect(lift, m).max() <= 1e-12


def test_riemann_lift_checks_initial_frame():
    with pytest.raises(FR.FrameError):
        FR.riemann_horizontal_lift(bm(1, 2), EXP_LINE, np.array([[2.0]]))


def test_degenerate_frame_is_reported():
    with pytest.raises(FR.DegenerateFrame):
        FR.horizontal_lift(bm(2, 2), ConnectionFamily.flat(2), np.zeros((2, 2)))


def test_lift_is_deterministic():
    m = MetricFamily.conformal("4/(1+x1^2+x2^2)^2", 2)
    path = bm(2, 3, sigma="0.5")
    a = FR.horizontal_lift(path, ConnectionFamily.levi_civita(m))
    b = FR.horizontal_lift(path, ConnectionFamily.levi_civita(m))
    assert a.e.tobytes() == b.e.tobytes() and a.dz.tobytes() == b.dz.tobytes()


# G-process -------------------------------------------------------------------


def test_g_process_of_horizontal_input_is_trivial():
    c = ConnectionFamily.levi_civita(EXP_LINE)
    path = bm(1, 3)
    direct = FR.horizontal_lift(path, c)
    out = FR.g_process_lift(path, c, direct.e)
    assert np.max(np.abs(out.extras["G"] - 1.0)) <= 1e-12


def test_g_process_euclidean_unit_frame():
    path = bm(1, 3)
    out = FR.g_process_lift(path, ConnectionFamily.flat(1), np.ones((GRID.n + 1, 3, 1, 1)))
    assert np.all(out.extras["G"] == 1.0)
    np.testing.assert_array_equal(out.e, 1.0)


def _wobbly(path, e0):
    phi = path.grid.times[:, None] + (path.x - path.x[0]).sum(axis=-1)
    d = path.dim
    rot = np.array([[0.0, -1.0], [1.0, 0.0]]) if d == 2 else np.eye(1)
    return e0 @ (np.eye(d) + 0.3 * np.sin(phi)[..., None, None] * rot)


@pytest.mark.parametrize("flavor", [FR.CONNECTION, FR.RIEMANN])
def test_g_process_matches_direct_lift(flavor):
    m = MetricFamily.conformal("4*exp(t)/(1+x1^2+x2^2)^2", 2)
    path = bm(2, 4, sigma="0.5", x0=np.array([0.1, 0.2]))
    if flavor == FR.CONNECTION:
        geo, direct = ConnectionFamily.levi_civita(m), FR.horizontal_lift(path, ConnectionFamily.levi_civita(m))
    else:
        geo, direct = m, FR.riemann_horizontal_lift(path, m)
    out = FR.g_process_lift(path, geo, _wobbly(path, direct.e[0]), flavor)
    assert np.max(np.abs(out.e - direct.e)) <= 1e-6
    assert np.max(np.abs(out.z - direct.z)) <= 1e-6


# development -----------------------------------------------------------------


def test_develop_zero_increments_is_constant():
    c = ConnectionFamily.levi_civita(EXP_LINE)
    out = FR.develop(np.zeros((10, 2, 1)), np.ones((1, 1)), [0.3], c, TimeGrid(0, 1, 10))
    assert np.all(out.x == 0.3) and np.all(out.e == 1.0)


def test_develop_euclidean():
    dz = np.random.default_rng(0).normal(size=(10, 2, 2))
    e0 = np.array([[1.0, 2.0], [0.0, 3.0]])
    out = FR.develop(dz, e0, [1.0, -1.0], ConnectionFamily.flat(2), TimeGrid(0, 1, 10))
    z = np.concatenate([np.zeros((1, 2, 2)), np.cumsum(dz, axis=0)])
    np.testing.assert_allclose(out.x, np.array([1.0, -1.0]) + z @ e0.T, atol=1e-13)


@pytest.mark.parametrize("flavor", [FR.CONNECTION, FR.RIEMANN])
def test_develop_inverts_the_lift(flavor):
    m = MetricFamily.conformal("4*exp(t)/(1+x1^2+x2^2)^2", 2)
    path = bm(2, 4, TimeGrid(0, 1, 300), sigma="0.5")
    if flavor == FR.CONNECTION:
        geo = ConnectionFamily.levi_civita(m)
        lift = FR.horizontal_lift(path, geo)
    else:
        geo = m
        lift = FR.riemann_horizontal_lift(path, m)
    back = FR.develop(lift.dz, lift.e[0], lift.x[0], geo, lift.grid, flavor)
    assert np.max(np.abs(back.x - lift.x)) <= 1e-9
    assert np.max(np.abs(back.e - lift.e)) <= 1e-9
    again = FR.riemann_horizontal_lift(FR.lift_to_path(back), m) if flavor == FR.RIEMANN else None
    if again is not None:
        assert np.max(np.abs(again.dz - lift.dz)) <= 1e-9


# transports ------------------------------------------------------------------


def test_parallel_transport_identity_and_oracle():
    path = bm(1, 100)
    lift = FR.horizontal_lift(path, ConnectionFamily.levi_civita(EXP_LINE))
    np.testing.assert_allclose(FR.parallel_transport(lift, 7, 7).matrix, np.ones((100, 1, 1)), atol=1e-15)
    par = FR.parallel_transport(lift, 0, GRID.n).matrix[:, 0, 0]
    u = np.exp(path.x[:, :, 0])
    np.testing.assert_allclose(par, np.sqrt(u[0] / u[-1]), rtol=1e-3)


def test_parallel_transport_independent_of_initial_frame():
    m = MetricFamily.conformal("4/(1+x1^2+x2^2)^2", 2)
    c = ConnectionFamily.levi_civita(m)
    path = bm(2, 3, sigma="0.5")
    a = FR.horizontal_lift(path, c)
    b = FR.horizontal_lift(path, c, np.array([[1.0, 0.5], [-0.2, 2.0]]))
    pa = FR.parallel_transport(a, 100, 900).matrix
    pb = FR.parallel_transport(b, 100, 900).matrix
    assert np.max(np.abs(pa - pb)) <= 1e-9
    assert FR.parallel_transport(a, 0, 1).kind == "parallel"


def test_riemann_transport_is_nearly_isometric():
    m = MetricFamily.conformal("exp(t)*(2 + sin(x1)*cos(x2))", 2)
    path = bm(2, 5)
    lift = FR.riemann_horizontal_lift(path, m)
    p = FR.parallel_transport(lift, 0, GRID.n)
    assert p.kind == "riemann_parallel"
    norms = operator_norm(p.matrix, m(0.0, path.x[0]), m(1.0, path.x[-1]))
    np.testing.assert_allclose(norms, 1.0, atol=5e-3)


def test_damped_transport_flat_static_is_parallel():
    m = MetricFamily.conformal("1", 2)
    path = bm(2, 3, TimeGrid(0, 1, 50))
    for form in ("general", "brownian"):
        dt = FR.damped_transport(path, m, form)
        np.testing.assert_allclose(dt.theta, np.broadcast_to(np.eye(2), dt.theta.shape), atol=1e-15)


def test_damped_transport_decay_on_shrinking_circle():
    from tempogeo.heatlab import circle

    m = MetricFamily([["exp(-t)"]], circle())
    path, lift = gt_brownian_motion(m, [0.0], BrownianDriver(2, 1, GRID), np.arange(20))
    theta = FR.damped_transport(path, m, "brownian", lift=lift).theta[-1]
    norm = operator_norm(theta, m(0.0, path.x[0]), m(1.0, path.x[-1]))
    np.testing.assert_allclose(norm, np.exp(-0.5), atol=1e-3)


def test_damped_transport_forms_agree_on_shrinking_sphere():
    m = MetricFamily.conformal("4*(16-2*t)/(1+x1^2+x2^2)^2", 2)
    grid = TimeGrid(0.0, 0.5, 500)
    path, lift = gt_brownian_motion(m, [0.0, 0.0], BrownianDriver(3, 2, grid), np.arange(20))
    a = FR.damped_transport(path, m, "general").theta
    b = FR.damped_transport(path, m, "brownian", lift=lift).theta
    assert np.max(np.abs(a - b)) <= 5e-3


# lift relation -----------------------------------------------------------------


def test_lift_relation_static_metric_vanishes():
    path = bm(1, 3, TimeGrid(0, 1, 100))
    c = FR.horizontal_lift(path, ConnectionFamily.levi_civita(EXP_LINE))
    r = FR.riemann_horizontal_lift(path, EXP_LINE, np.ones((1, 1)))
    assert FR.lift_relation_check(c, r, EXP_LINE).max() <= 1e-10


@pytest.mark.parametrize("entries", [[["exp(2*t)", "0"], ["0", "exp(2*t)"]], [["exp(t+x1)"]]])
def test_lift_relation_residual_is_second_order(entries):
    m = MetricFamily(entries)
    d = m.dim
    res = []
    for n in (500, 1000):
        path = bm(d, 5, TimeGrid(0, 1, n))
        c = FR.horizontal_lift(path, ConnectionFamily.levi_civita(m))
        r = FR.riemann_horizontal_lift(path, m)
        res.append(FR.lift_relation_check(c, r, m).max())
    assert 2.5 <= res[0] / res[1] <= 6.0


def test_lift_relation_rejects_different_paths():
    c = FR.horizontal_lift(bm(1, 2, seed=1), ConnectionFamily.levi_civita(EXP_LINE))
    r = FR.riemann_horizontal_lift(bm(1, 2, seed=2), EXP_LINE, np.ones((1, 1)))
    with pytest.raises(FR.FrameError):
        FR.lift_relation_check(c, r, EXP_LINE)


# vertical action ---------------------------------------------------------------


@given(st.integers(0, 10**6), st.integers(2, 3), st.data())
@settings(max_examples=50, deadline=None)
def test_vertical_action_on_inner_products(seed, d, data):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d))
    g = a @ a.T + d * np.eye(d)
    u = gram_schmidt(g)
    i, j, alpha, beta = (data.draw(st.integers(0, d - 1)) for _ in range(4))
    value = FR.vertical_derivative(FR.frame_inner(g, i, j), u, alpha, beta)
    expected = (beta == i) * (alpha == j) + (beta == j) * (alpha == i)
    assert value == pytest.approx(expected, abs=1e-12)
    if alpha == beta == i == j:
        assert value == pytest.approx(2.0)


def test_lift_csv_columns(tmp_path):
    path = bm(2, 2, TimeGrid(0, 1, 4))
    lift = FR.horizontal_lift(path, ConnectionFamily.flat(2))
    out = tmp_path / "lift.csv"
    lift.write_csv(out, 1)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["t", "x1", "x2", "e11", "e12", "e21", "e22", "z1", "z2"]
    assert len(rows) == 6
    assert float(rows[-1][1]) == path.x[-1, 1, 0]


def test_underlying_path_is_preserved():
    path = bm(1, 2)
    lift = FR.horizontal_lift(path, ConnectionFamily.levi_civita(EXP_LINE))
    back = FR.lift_to_path(lift)
    assert isinstance(back, SemimartingalePath)
    np.testing.assert_array_equal(back.x, path.x)
