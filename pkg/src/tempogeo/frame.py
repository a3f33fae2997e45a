"""Horizontal lifts, antidevelopment, development and stochastic transports.

A frame is a d×d matrix whose column i holds the coordinates of u e_i. The
connection form is never built explicitly: horizontality is the coordinate
equation de = −Γ(∘dx) e, the canonical form is ΔZ = e_mid⁻¹ Δx, and the
Riemann correction is the vertical drift −½ e eᵀ (∂g/∂t) e dt.

Every Stratonovich integral uses the same Heun midpoint, which makes
:func:`develop` the exact step-level inverse of the lift. The vertical drift
is an ordinary dt integral and is applied as a left-point step before the
horizontal transport of each step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tempogeo import linalg as LA
from tempogeo.dual import Dual
from tempogeo.geometry import (
    DET_THRESHOLD,
    ConnectionFamily,
    MetricFamily,
    contract,
    curvature,
    curvature_action,
    gram_schmidt,
    ricci,
)
from tempogeo.sde import SemimartingalePath, TimeGrid

CONNECTION = "connection_horizontal"
RIEMANN = "riemann_horizontal"


class FrameError(Exception):
    pass


class DegenerateFrame(FrameError):
    pass


@dataclass
class LiftPath:
    """Frame-bundle path (x_k, e_k) with antidevelopment increments ΔZ_k."""

    grid: TimeGrid
    x: np.ndarray  # (n + 1, P, d)
    e: np.ndarray  # (n + 1, P, d, d)
    dz: np.ndarray  # (n, P, d)
    flavor: str
    path_ids: np.ndarray
    e_mid: Optional[np.ndarray] = None  # (n, P, d, d)
    extras: dict = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        out = np.zeros(self.x.shape)
        np.cumsum(self.dz, axis=0, out=out[1:])
        return out

    @property
    def n_paths(self) -> int:
        return self.x.shape[1]

    def write_csv(self, path, path_index: int = 0):
        """Rows t, x1..xd, e11..edd (row-major), z1..zd for one path."""
        d = self.x.shape[-1]
        z = self.z
        header = ["t"] + [f"x{i + 1}" for i in range(d)]
        header += [f"e{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        header += [f"z{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.grid.times):
                row = [t, *self.x[k, path_index], *self.e[k, path_index].ravel(), *z[k, path_index]]
                w.writerow([format(float(v), ".17g") for v in row])


@dataclass
class TransportOperator:
    """Matrix mapping coordinates of T_{X_s}M to T_{X_t}M."""

    matrix: np.ndarray
    s: int
    t: int
    kind: str

    def __matmul__(self, v):
        return self.matrix @ v


def _eye_like(a: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(a.shape[-1]), a.shape)


def _check_frame(e: np.ndarray, step: int):
    det = LA.det(e)
    if np.any(~(np.abs(det) >= DET_THRESHOLD)):
        raise DegenerateFrame(f"frame degenerate at step {step} (|det| < {DET_THRESHOLD:g})")


def _initial_frame(e0, p: int, d: int) -> np.ndarray:
    e0 = np.eye(d) if e0 is None else np.asarray(e0, dtype=float)
    return np.broadcast_to(e0, (p, d, d)).copy()


class _Geometry:
    """Connection plus, for the Riemann flavor, the metric supplying ∂g/∂t."""

    def __init__(self, geometry, flavor: str):
        if isinstance(geometry, MetricFamily):
            self.metric = geometry
            self.connection = ConnectionFamily.levi_civita(geometry)
        else:
            self.metric = geometry.metric
            self.connection = geometry
        if flavor == RIEMANN and self.metric is None:
            raise FrameError("the Riemann-horizontal flavor needs a metric")
        self.flavor = flavor

    def gamma(self, t, x):
        return self.connection.christoffel(t, x)

    def vertical(self, t, x, e, h):
        """Left-point increment of the Riemann correction −½ e eᵀ (∂g/∂t) e h."""
        if self.flavor != RIEMANN:
            return None
        gdot = self.metric.dt(t, x)
        return -0.5 * h * (e @ (np.swapaxes(e, -1, -2) @ gdot @ e))


class _NodeCache:
    """Geometry evaluated at the nodes of a known path, computed in blocks of nodes."""

    def __init__(self, fn, grid: TimeGrid, xs: np.ndarray, block: int = 256):
        self.fn = fn
        self.grid = grid
        self.xs = xs
        self.block = block
        self.start = None
        self.values = None

    def __getitem__(self, k: int) -> np.ndarray:
        if self.start is None or not self.start <= k < self.start + self.block:
            self.start = k
            stop = min(k + self.block, self.xs.shape[0])
            times = self.grid.times[k:stop].reshape((-1,) + (1,) * (self.xs.ndim - 2))
            self.values = self.fn(times, self.xs[k:stop])
        return self.values[k - self.start]


def _reorthonormalize(metric: MetricFamily, t, x, e):
    # e ← e (eᵀ g e)^(-1/2)
    gram = np.swapaxes(e, -1, -2) @ metric(t, x) @ e
    w, v = np.linalg.eigh(gram)
    inv_sqrt = v @ (np.swapaxes(v, -1, -2) / np.sqrt(w)[..., :, None])
    return e @ inv_sqrt


def _transport_step(e_start, a_a, a_b):
    """Heun step of de = −Γ(∘dx) e starting from e_start; returns (e_next, e_mid)."""
    ae = a_a @ e_start
    e_pred = e_start - ae
    e_mid = e_start - 0.5 * ae
    e_next = e_start - 0.5 * (ae + a_b @ e_pred)
    return e_next, e_mid


def _lift(x_path: SemimartingalePath, geometry, e0, flavor, reorthonormalize=False, keep_christoffel=False) -> LiftPath:
    geo = _Geometry(geometry, flavor)
    grid = x_path.grid
    n, p, d = x_path.dx.shape
    xs = x_path.x
    es = np.empty((n + 1, p, d, d))
    mids = np.empty((n, p, d, d))
    dzs = np.empty((n, p, d))
    es[0] = _initial_frame(e0, p, d)
    if flavor == RIEMANN:
        check_orthonormal(geo.metric, grid.t0, xs[0], es[0])
    _check_frame(es[0], 0)
    gam_at = _NodeCache(geo.gamma, grid, xs)
    gdot_at = _NodeCache(geo.metric.dt, grid, xs) if flavor == RIEMANN else None
    gam_a = gam_at[0]
    gams = np.empty((n + 1,) + gam_a.shape) if keep_christoffel else None
    if keep_christoffel:
        gams[0] = gam_a
    for k in range(n):
        dx = x_path.dx[k]
        e = es[k]
        e_start = e if gdot_at is None else e - 0.5 * grid.h * (e @ (np.swapaxes(e, -1, -2) @ gdot_at[k] @ e))
        gam_b = gam_at[k + 1]
        e_next, e_mid = _transport_step(e_start, contract(gam_a, dx), contract(gam_b, dx))
        _check_frame(e_mid, k)
        dzs[k] = LA.solve_vec(e_mid, dx)
        if reorthonormalize and flavor == RIEMANN:
            e_next = _reorthonormalize(geo.metric, grid.node(k + 1), xs[k + 1], e_next)
        _check_frame(e_next, k + 1)
        es[k + 1] = e_next
        mids[k] = e_mid
        gam_a = gam_b
        if keep_christoffel:
            gams[k + 1] = gam_b
    extras = {"christoffel": gams} if keep_christoffel else {}
    return LiftPath(grid, xs, es, dzs, flavor, x_path.path_ids, mids, extras)


def horizontal_lift(x_path: SemimartingalePath, connection, e0=None, keep_christoffel: bool = False) -> LiftPath:
    """(∇(t))-horizontal lift of an ensemble; ``e0`` defaults to the identity frame.

    With ``keep_christoffel`` the symbols evaluated at every node are kept in
    ``extras["christoffel"]`` for reuse.
    """
    return _lift(x_path, connection, e0, CONNECTION, keep_christoffel=keep_christoffel)


def check_orthonormal(metric: MetricFamily, t, x, e, tol: float = 1e-10):
    gram = np.swapaxes(e, -1, -2) @ metric(t, x) @ e
    if np.max(np.abs(gram - np.eye(e.shape[-1]))) > tol:
        raise FrameError("initial frame is not orthonormal for g(0, x0)")


def default_riemann_frame(metric: MetricFamily, t, x) -> np.ndarray:
    """Gram–Schmidt of the coordinate basis under g(t, x)."""
    return gram_schmidt(metric(t, x))


def riemann_horizontal_lift(
    x_path: SemimartingalePath, metric: MetricFamily, e0=None, reorthonormalize: bool = False
) -> LiftPath:
    """(g(t))-Riemann-horizontal lift; ``e0`` defaults to Gram–Schmidt at (t0, x0)."""
    if e0 is None:
        e0 = default_riemann_frame(metric, x_path.grid.t0, x_path.x[0])
    return _lift(x_path, metric, e0, RIEMANN, reorthonormalize)


def g_process_lift(x_path: SemimartingalePath, geometry, e_tilde: np.ndarray, flavor: str = CONNECTION) -> LiftPath:
    """Horizontal lift U = Ũ G built from an arbitrary lift Ũ of X.

    ``e_tilde`` has shape ``(n + 1, P, d, d)`` and must start at the desired
    initial frame. The discrete connection increment of Ũ is
    Δγ = ẽ_{k+1}⁻¹(Δẽ + Γ^H ẽ_k), with Γ^H the Heun value of ∫Γ(∘dx) over the
    step, and G_{k+1} = (I − Δγ)(G_k + V_k h) where V is the ∂g/∂t drift of
    the Riemann flavor. ΔZ = G⁻¹ ΔZ̃ with the horizontal-midpoint ΔZ̃.
    """
    geo = _Geometry(geometry, flavor)
    grid = x_path.grid
    n, p, d = x_path.dx.shape
    xs = x_path.x
    et = np.asarray(e_tilde, dtype=float)
    if et.shape != (n + 1, p, d, d):
        raise ValueError("arbitrary lift must have shape (n + 1, P, d, d)")
    eye = np.eye(d)
    gs = np.empty((n + 1, p, d, d))
    gammas = np.empty((n + 1, p, d, d))
    dzs = np.empty((n, p, d))
    gs[0] = eye
    gammas[0] = 0.0
    if flavor == RIEMANN:
        check_orthonormal(geo.metric, grid.t0, xs[0], et[0])
    gam_at = _NodeCache(geo.gamma, grid, xs)
    gdot_at = _NodeCache(geo.metric.dt, grid, xs) if flavor == RIEMANN else None
    gam_a = gam_at[0]
    for k in range(n):
        dx = x_path.dx[k]
        gam_b = gam_at[k + 1]
        a_a = contract(gam_a, dx)
        a_b = contract(gam_b, dx)
        heun = 0.5 * (a_a + a_b - a_b @ a_a)
        dgamma = LA.solve(et[k + 1], et[k + 1] - et[k] + heun @ et[k])
        g = gs[k]
        if flavor == RIEMANN:
            u = et[k] @ g
            g = g - 0.5 * grid.h * (g @ (np.swapaxes(u, -1, -2) @ gdot_at[k] @ u))
        _check_frame(g, k)
        dz_tilde = LA.solve(et[k], LA.solve(eye - 0.5 * a_a, dx[..., None]))
        dzs[k] = LA.solve(g, dz_tilde)[..., 0]
        gs[k + 1] = (eye - dgamma) @ g
        gammas[k + 1] = gammas[k] + dgamma
        gam_a = gam_b
    es = et @ gs
    return LiftPath(grid, xs, es, dzs, flavor, x_path.path_ids, extras={"G": gs, "gamma": gammas})


def develop(
    dz: np.ndarray,
    e0,
    x0,
    geometry,
    grid: TimeGrid,
    flavor: str = CONNECTION,
    path_ids=None,
) -> LiftPath:
    """Rebuild (x, e) from antidevelopment increments ``dz`` of shape (n, P, d).

    Each step solves Δx = e_mid ΔZ exactly; since e_mid is affine in Δx the
    solve is the linear system (I + ½ M) Δx = e' ΔZ with M_il = Σ_m Γ^i_lm (e'ΔZ)^m.
    """
    geo = _Geometry(geometry, flavor)
    dz = np.asarray(dz, dtype=float)
    n, p, d = dz.shape
    if n != grid.n:
        raise ValueError("increments do not match the grid")
    xs = np.empty((n + 1, p, d))
    es = np.empty((n + 1, p, d, d))
    mids = np.empty((n, p, d, d))
    xs[0] = np.broadcast_to(np.asarray(x0, dtype=float), (p, d))
    if e0 is None:
        e0 = np.eye(d) if flavor == CONNECTION else default_riemann_frame(geo.metric, grid.t0, xs[0])
    es[0] = _initial_frame(e0, p, d)
    _check_frame(es[0], 0)
    eye = np.eye(d)
    gam_a = geo.gamma(grid.node(0), xs[0])
    for k in range(n):
        t0, t1 = grid.node(k), grid.node(k + 1)
        e = es[k]
        vert = geo.vertical(t0, xs[k], e, grid.h)
        e_start = e if vert is None else e + vert
        v = (e_start @ dz[k][..., None])[..., 0]
        m = np.einsum("...ilm,...m->...il", gam_a, v)
        dx = LA.solve_vec(eye + 0.5 * m, v)
        xs[k + 1] = xs[k] + dx
        gam_b = geo.gamma(t1, xs[k + 1])
        e_next, e_mid = _transport_step(e_start, contract(gam_a, dx), contract(gam_b, dx))
        _check_frame(e_next, k + 1)
        es[k + 1] = e_next
        mids[k] = e_mid
        gam_a = gam_b
    ids = np.arange(p) if path_ids is None else np.asarray(path_ids)
    return LiftPath(grid, xs, es, dz.copy(), flavor, ids, mids)


def lift_to_path(lift: LiftPath) -> SemimartingalePath:
    """The underlying base path of a lift."""
    return SemimartingalePath(lift.grid, lift.x, np.diff(lift.x, axis=0), lift.path_ids)


def parallel_transport(lift: LiftPath, s_index: int, t_index: int) -> TransportOperator:
    """//_{s,t} = e_t e_s⁻¹ along each path of the lift."""
    es = lift.e[s_index]
    _check_frame(es, s_index)
    mat = np.swapaxes(np.linalg.solve(np.swapaxes(es, -1, -2), np.swapaxes(lift.e[t_index], -1, -2)), -1, -2)
    kind = "parallel" if lift.flavor == CONNECTION else "riemann_parallel"
    return TransportOperator(mat, s_index, t_index, kind)


def _transports_from(lift: LiftPath) -> np.ndarray:
    """//_{0,k} for every node, shape (n + 1, P, d, d)."""
    e0inv = np.linalg.inv(lift.e[0])
    return lift.e @ e0inv


@dataclass
class DampedTransport:
    """Θ_{0,t_k} along each path, with A = //⁻¹ Θ for the base transport used."""

    theta: np.ndarray  # (n + 1, P, d, d)
    a: np.ndarray
    form: str

    def at(self, k: int) -> TransportOperator:
        return TransportOperator(self.theta[k], 0, k, "damped")


def damped_transport(
    x_path: SemimartingalePath,
    metric: MetricFamily,
    form: str = "general",
    lift: Optional[LiftPath] = None,
) -> DampedTransport:
    """Damped parallel transport along an ensemble.

    ``general``: A = //⁻¹Θ with ΔA = −½ //⁻¹ R(Θ, Δx)Δx on the connection
    transport (realized bracket). ``brownian``: A = (//^R)⁻¹Θ with
    ΔA = ½ (//^R)⁻¹((∂g/∂t)^# − Ric^#)Θ h on the Riemann transport; valid
    when X is a g(t)-Brownian motion.
    """
    grid = x_path.grid
    n, p, d = x_path.dx.shape
    conn = ConnectionFamily.levi_civita(metric)
    if form == "general":
        if lift is None or lift.flavor != CONNECTION:
            lift = horizontal_lift(x_path, conn)
    elif form == "brownian":
        if lift is None or lift.flavor != RIEMANN:
            lift = riemann_horizontal_lift(x_path, metric)
    else:
        raise ValueError(f"unknown damped transport form {form!r}")
    par = _transports_from(lift)
    a = np.empty((n + 1, p, d, d))
    theta = np.empty((n + 1, p, d, d))
    a[0] = np.eye(d)
    theta[0] = np.eye(d)
    for k in range(n):
        t = grid.node(k)
        x = x_path.x[k]
        if form == "general":
            r = curvature(conn, t, x)
            dx = x_path.dx[k]
            drive = -0.5 * curvature_action(r, theta[k], dx, dx)
        else:
            g = metric(t, x)
            op = LA.solve(g, metric.dt(t, x) - ricci(conn, t, x))
            drive = 0.5 * grid.h * (op @ theta[k])
        a[k + 1] = a[k] + LA.solve(par[k], drive)
        theta[k + 1] = par[k + 1] @ a[k + 1]
    return DampedTransport(theta, a, form)


def lift_relation_check(lift: LiftPath, riemann: LiftPath, metric: MetricFamily) -> np.ndarray:
    """Per-step residual ‖Δ(e⁻¹e^R) + ½ e⁻¹ (∂g/∂t)^# e^R h‖, shape (n, P)."""
    if lift.x.shape != riemann.x.shape or not np.array_equal(lift.x, riemann.x):
        raise FrameError("lifts are over different base paths")
    grid = lift.grid
    q = np.linalg.solve(lift.e, riemann.e)
    n = grid.n
    res = np.empty((n,) + q.shape[1:-2])
    for k in range(n):
        t = grid.node(k)
        x = lift.x[k]
        gsharp = LA.solve(metric(t, x), metric.dt(t, x))
        term = LA.solve(lift.e[k], gsharp @ riemann.e[k])
        res[k] = np.linalg.norm(q[k + 1] - q[k] + 0.5 * grid.h * term, axis=(-2, -1))
    return res


def orthonormality_defect(lift: LiftPath, metric: MetricFamily) -> np.ndarray:
    """max_ij |⟨e e_i, e e_j⟩_{g(t_k, x_k)} − δ_ij| at every node, shape (n + 1, P)."""
    d = lift.x.shape[-1]
    out = np.empty(lift.x.shape[:2])
    for k, t in enumerate(lift.grid.times):
        e = lift.e[k]
        gram = np.swapaxes(e, -1, -2) @ metric(t, lift.x[k]) @ e
        out[k] = np.max(np.abs(gram - np.eye(d)), axis=(-2, -1))
    return out


def vertical_derivative(f, u: np.ndarray, alpha: int, beta: int):
    """V^{αβ} f(u) = d/ds f(u (I + s E_αβ)) at s = 0, by a dual number in s."""
    d = u.shape[-1]
    e_ab = np.zeros((d, d))
    e_ab[alpha, beta] = 1.0
    out = f(Dual(u, u @ e_ab))
    return out.du if isinstance(out, Dual) else 0.0


def frame_inner(metric_value: np.ndarray, i: int, j: int):
    """f(u) = ⟨u e_i, u e_j⟩_g for a fixed metric matrix; accepts dual frames."""

    def f(u):
        ui = u[..., :, i] if not isinstance(u, Dual) else Dual(u.re[..., :, i], u.du[..., :, i])
        uj = u[..., :, j] if not isinstance(u, Dual) else Dual(u.re[..., :, j], u.du[..., :, j])
        return ui @ (metric_value @ uj)

    return f
