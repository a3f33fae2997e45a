"""g(t)-Brownian motion, image antidevelopment, a periodic heat solver, and the
gradient representation and Liouville experiments built on them.

The target manifold of the heat flow is the flat line, so its damped
transport is the identity and every check reduces to M-side quantities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from tempogeo import fields as F
from tempogeo import linalg as LA
from tempogeo.frame import (
    RIEMANN,
    LiftPath,
    damped_transport,
    develop,
    horizontal_lift,
)
from tempogeo.geometry import ConnectionFamily, Domain, MetricFamily, ricci
from tempogeo.sde import BrownianDriver, SemimartingalePath, TimeGrid


class HeatError(Exception):
    pass


class CFLViolation(HeatError):
    pass


class SuperRicciViolation(HeatError):
    pass


class TimeReversedMetric(MetricFamily):
    """ĝ(t) = g(T₂ − t); ∂ĝ/∂t comes from AD through the reversal."""

    def __init__(self, base: MetricFamily, horizon: float):
        d = base.dim
        entries = [[base.entry(i, j).source for j in range(d)] for i in range(d)]
        inner = base.time_map
        if inner is None:
            time_map = lambda t: horizon - t  # noqa: E731
        else:
            time_map = lambda t: inner(horizon - t)  # noqa: E731
        super().__init__(entries, base.domain, time_map)
        self.base = base
        self.horizon = horizon


def gt_brownian_motion(
    m: MetricFamily, x0, driver: BrownianDriver, path_ids, e0=None
) -> tuple[SemimartingalePath, LiftPath]:
    """Develop the driving Brownian increments through Riemann-horizontal frames.

    The Riemann antidevelopment of the result is the driver by construction.
    """
    path_ids = np.atleast_1d(np.asarray(path_ids, dtype=np.int64))
    dw = driver.increments(path_ids)
    lift = develop(dw, e0, x0, m, driver.grid, RIEMANN, path_ids)
    path = SemimartingalePath(driver.grid, lift.x, np.diff(lift.x, axis=0), path_ids, dw)
    return path, lift


def _hess_cross(f_fields, conn_m: ConnectionFamily, gam_n, t, x):
    """Hess^{∇,∇̃} f^a_ij = ∂²f^a − Γ^k_ij ∂_k f^a + Γ̃^a_bc ∂_i f^b ∂_j f^c."""
    grads, hesses = [], []
    for f in f_fields:
        _, gr, he = F.hessian(f, t, x)
        grads.append(gr)
        hesses.append(he)
    df = np.stack(grads, axis=-2)  # (..., a, i)
    hess = np.stack(hesses, axis=-3)  # (..., a, i, j)
    gam = conn_m.christoffel(t, x)
    hess = hess - np.einsum("...kij,...ak->...aij", gam, df)
    return df, hess + np.einsum("...abc,...bi,...cj->...aij", gam_n, df, df)


@dataclass
class ImageCheck:
    lifted: np.ndarray  # (n + 1, P, n_target) Z̃ by lifting f(t, X)
    formula: np.ndarray  # same, by the right-hand side
    image: SemimartingalePath

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.lifted - self.formula)))


def image_antidevelopment_check(
    f: Sequence,
    lift: LiftPath,
    connection_m: ConnectionFamily,
    connection_n: Optional[ConnectionFamily] = None,
    e_tilde0=None,
) -> ImageCheck:
    """Antidevelopment of Y = f(t, X) computed two ways.

    (a) lift Y horizontally in N and read off Z̃; (b) accumulate
    ẽ_k⁻¹[∂f/∂t h + df e_k ΔZ_k + ½ Hess^{∇,∇̃}f(Δx, Δx)], where ẽ_k are the
    frames of (a). ``lift`` must be a connection-horizontal lift of X.
    """
    grid = lift.grid
    d = lift.x.shape[-1]
    f_fields = [F.as_field(c, d) for c in f]
    nt = len(f_fields)
    if connection_n is None:
        connection_n = ConnectionFamily.flat(nt)
    times = grid.times
    y = np.stack(
        [np.stack([fi(times[k], lift.x[k]) for fi in f_fields], axis=-1) for k in range(grid.n + 1)]
    )
    image = SemimartingalePath(grid, y, np.diff(y, axis=0), lift.path_ids)
    lifted = horizontal_lift(image, connection_n, e_tilde0)
    n, p = lift.dz.shape[:2]
    dz_formula = np.empty((n, p, nt))
    for k in range(n):
        t = grid.node(k)
        x = lift.x[k]
        dx = lift.x[k + 1] - x
        gam_n = connection_n.christoffel(t, y[k])
        df, hess = _hess_cross(f_fields, connection_m, gam_n, t, x)
        ft = np.stack([F.time_derivative(fi, t, x) for fi in f_fields], axis=-1)
        ito_dx = (lift.e[k] @ lift.dz[k][..., None])[..., 0]
        rhs = ft * grid.h + (df @ ito_dx[..., None])[..., 0]
        rhs = rhs + 0.5 * np.einsum("...aij,...i,...j->...a", hess, dx, dx)
        dz_formula[k] = LA.solve_vec(lifted.e[k], rhs)
    formula = np.zeros_like(lifted.z)
    np.cumsum(dz_formula, axis=0, out=formula[1:])
    return ImageCheck(lifted.z, formula, image)


@dataclass
class HeatSolution:
    """Solution of ∂u/∂t = ½ Δ_{g(t)} u on a periodic grid."""

    metric: MetricFamily
    theta: np.ndarray  # (J,)
    times: np.ndarray  # (n_t + 1,)
    values: np.ndarray  # (n_t + 1, J)
    period: float

    @property
    def dtheta(self) -> float:
        return self.period / self.theta.size

    def derivative_grid(self, k: int) -> np.ndarray:
        """∂u/∂θ at time node k by 4th-order central differences."""
        u = self.values[k]
        h = self.dtheta
        return (8.0 * (np.roll(u, -1) - np.roll(u, 1)) - (np.roll(u, -2) - np.roll(u, 2))) / (12.0 * h)

    def _spline(self, values) -> CubicSpline:
        x = np.append(self.theta, self.theta[0] + self.period)
        return CubicSpline(x, np.append(values, values[0]), bc_type="periodic")

    def du(self, k: int, theta) -> np.ndarray:
        """∂u/∂θ at time node k and arbitrary angles."""
        th = np.mod(np.asarray(theta, dtype=float) - self.theta[0], self.period) + self.theta[0]
        return self._spline(self.derivative_grid(k))(th)

    def u(self, k: int, theta) -> np.ndarray:
        th = np.mod(np.asarray(theta, dtype=float) - self.theta[0], self.period) + self.theta[0]
        return self._spline(self.values[k])(th)

    def write_csv(self, path, every: int = 1):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "theta", "u"])
            for k in range(0, self.times.size, every):
                for j, th in enumerate(self.theta):
                    w.writerow([format(float(v), ".17g") for v in (self.times[k], th, self.values[k, j])])


def _metric_1d(m: MetricFamily, t, theta) -> np.ndarray:
    return m(t, theta[:, None])[:, 0, 0]


def _cfl_number(m: MetricFamily, times, theta, dt, dth) -> float:
    ginv = max(float(np.max(1.0 / _metric_1d(m, t, theta))) for t in times)
    return 0.5 * ginv * dt / dth**2


def solve_heat_1d(
    m: MetricFamily,
    u_init,
    t1: float,
    t2: float,
    n_theta: int = 256,
    n_t: Optional[int] = None,
    period: Optional[float] = None,
    cfl: float = 0.45,
) -> HeatSolution:
    """Explicit conservative finite differences for ∂u/∂t = ½ Δ_{g(t)} u.

    In one dimension Δ_g u = g^{-1/2} ∂_θ(g^{-1/2} ∂_θ u); fluxes live on
    half nodes so Σ √g Δu = 0 exactly when g is static. ``n_t`` defaults to
    the smallest step count meeting the CFL target ``cfl``.
    """
    if m.dim != 1:
        raise HeatError("the heat solver is one-dimensional")
    if period is None:
        period = m.domain.period if m.domain.period is not None else 2.0 * np.pi
    if not t2 >= t1:
        raise HeatError("need T2 >= T1")
    dth = period / n_theta
    theta = np.arange(n_theta) * dth
    half = theta + 0.5 * dth
    uf = F.as_field(u_init, 1)
    u0 = np.broadcast_to(uf(t1, theta[:, None]), theta.shape).astype(float)
    span = t2 - t1
    if span == 0:
        return HeatSolution(m, theta, np.array([t1]), u0[None, :].copy(), period)
    if n_t is None:
        probe = np.linspace(t1, t2, 65)
        ginv = max(float(np.max(1.0 / _metric_1d(m, t, theta))) for t in probe)
        n_t = max(1, int(np.ceil(0.5 * ginv * span / (cfl * dth**2))))
    times = t1 + np.arange(n_t + 1) * (span / n_t)
    dt = span / n_t
    if _cfl_number(m, times[:-1], theta, dt, dth) > 0.5:
        raise CFLViolation("½·max g^11·Δt/Δθ² exceeds 0.5")
    values = np.empty((n_t + 1, n_theta))
    values[0] = u0
    u = u0.copy()
    for k in range(n_t):
        t = times[k]
        root = np.sqrt(_metric_1d(m, t, theta))
        flux = (np.roll(u, -1) - u) / (dth * np.sqrt(_metric_1d(m, t, half)))
        lap = (flux - np.roll(flux, 1)) / (dth * root)
        u = u + 0.5 * dt * lap
        values[k + 1] = u
    return HeatSolution(m, theta, times, values, period)


@dataclass
class RepresentationResult:
    lhs: float
    rhs: float
    stderr: float
    n_paths: int
    tolerance: float

    @property
    def consistent(self) -> bool:
        return abs(self.lhs - self.rhs) <= 3.0 * self.stderr + self.tolerance

    def row(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "stderr": self.stderr,
            "decision": "consistent" if self.consistent else "rejected",
        }


def representation_samples(
    m: MetricFamily,
    sol: HeatSolution,
    x: float,
    v: float,
    path_ids,
    seed: int,
    n_steps: int,
) -> np.ndarray:
    """du(T₁, X_τ)·Θ_{0,τ} v along ĝ-Brownian paths from x, τ = T₂ − T₁."""
    t1, t2 = float(sol.times[0]), float(sol.times[-1])
    path_ids = np.atleast_1d(np.asarray(path_ids, dtype=np.int64))
    if t2 == t1:
        return np.full(path_ids.size, float(sol.du(0, np.array([x]))[0]) * v)
    rev = TimeReversedMetric(m, t2)
    grid = TimeGrid(0.0, t2 - t1, n_steps)
    path, lift = gt_brownian_motion(rev, [x], BrownianDriver(seed, 1, grid), path_ids)
    theta = damped_transport(path, rev, "brownian", lift=lift).theta[-1, :, 0, 0]
    return sol.du(0, path.x[-1, :, 0]) * theta * v


def representation_check(
    m: MetricFamily,
    sol: HeatSolution,
    x: float,
    v: float = 1.0,
    n_paths: int = 10_000,
    seed: int = 0,
    n_steps: int = 1000,
    tolerance: float = 2e-3,
    workers: int = 1,
    chunk: int = 1000,
) -> RepresentationResult:
    """Compare du(T₂, x)v with the Monte Carlo mean of du(T₁, X)Θv (flat target, Θ̃ = I)."""
    from tempogeo.parallel import map_chunks

    lhs = float(sol.du(sol.times.size - 1, np.array([x]))[0]) * v
    ids = np.arange(n_paths)
    samples = np.concatenate(
        map_chunks(lambda c: representation_samples(m, sol, x, v, c, seed, n_steps), ids, chunk, workers)
    )
    rhs = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return RepresentationResult(lhs, rhs, stderr, n_paths, tolerance)


def check_super_ricci(m: MetricFamily, k: float, times, xs, tol: float = 1e-9) -> float:
    """Minimum eigenvalue of ∂g/∂t + Ric − K g over the sample; raises if below −tol."""
    if not k > 0:
        raise SuperRicciViolation("the Liouville bound needs K > 0")
    xs = np.asarray(xs, dtype=float)
    conn = ConnectionFamily.levi_civita(m)
    worst = np.inf
    for t in times:
        form = m.dt(t, xs) + ricci(conn, t, xs) - k * m(t, xs)
        worst = min(worst, float(np.min(np.linalg.eigvalsh(form))))
    if worst < -tol:
        raise SuperRicciViolation(f"∂g/∂t + Ric − K g has eigenvalue {worst:.3g} < 0")
    return worst


@dataclass
class LiouvilleResult:
    observed: float
    bound: float
    min_eigenvalue: float

    @property
    def holds(self) -> bool:
        return self.observed <= self.bound * (1.0 + 5e-3)


def gradient_sup(sol: HeatSolution, k: int) -> float:
    """sup_θ |du(t_k, θ)| in the dual metric of g(t_k)."""
    g = _metric_1d(sol.metric, sol.times[k], sol.theta)
    return float(np.max(np.abs(sol.derivative_grid(k)) / np.sqrt(g)))


def liouville_bound_check(m: MetricFamily, sol: HeatSolution, k: float) -> LiouvilleResult:
    """Observed sup-gradient decay over the solution's horizon against e^{−K s/2}."""
    theta = sol.theta[:, None]
    sample_times = np.linspace(sol.times[0], sol.times[-1], 33)
    worst = check_super_ricci(m, k, sample_times, theta)
    s = float(sol.times[-1] - sol.times[0])
    observed = gradient_sup(sol, sol.times.size - 1) / gradient_sup(sol, 0)
    return LiouvilleResult(observed, float(np.exp(-k * s / 2.0)), worst)


def circle(period: float = 2.0 * np.pi) -> Domain:
    return Domain(period)
