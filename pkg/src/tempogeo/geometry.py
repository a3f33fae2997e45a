"""Time-dependent metrics and connections on a single chart.

All evaluators take a scalar time ``t`` and coordinates ``x`` of shape
``(..., d)``; results carry the batch shape in front, e.g. Christoffel symbols
come back as ``(..., d, d, d)`` indexed ``[..., i, j, k]`` for Γ^i_jk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from tempogeo import fields as F
from tempogeo import linalg as LA
from tempogeo.fields import ScalarField

DET_THRESHOLD = 1e-12


class GeometryError(Exception):
    pass


class NotPositiveDefinite(GeometryError):
    pass


class SingularMatrix(GeometryError):
    pass


def _check_det(a: np.ndarray, what: str):
    det = LA.det(a)
    bad = np.abs(det) < DET_THRESHOLD
    if np.any(bad):
        raise SingularMatrix(f"{what} is singular (|det| < {DET_THRESHOLD:g})")


@dataclass(frozen=True)
class Domain:
    """Either the plane R^d (``period is None``) or a flat torus."""

    period: Optional[tuple] = None

    def wrap(self, x: np.ndarray) -> np.ndarray:
        if self.period is None:
            return x
        return np.mod(x, np.asarray(self.period, dtype=float))

    @property
    def is_torus(self) -> bool:
        return self.period is not None


EUCLIDEAN = Domain()


def _parse_matrix(entries, d: int) -> list[list[ScalarField]]:
    return [[F.as_field(entries[i][j], d) for j in range(d)] for i in range(d)]


class MetricFamily:
    """Riemannian metrics g(t) on one chart, given entrywise as DSL fields.

    Entries are stored once for i <= j so the assembled matrix is exactly
    symmetric. ``time_map`` reparametrizes time before evaluation and is
    differentiated through by AD.
    """

    def __init__(
        self,
        entries: Sequence[Sequence],
        domain: Domain = EUCLIDEAN,
        time_map: Callable | None = None,
    ):
        d = len(entries)
        if d < 1 or any(len(row) != d for row in entries):
            raise ValueError("metric entries must form a square matrix")
        full = _parse_matrix(entries, d)
        for i in range(d):
            for j in range(i + 1, d):
                if full[i][j].source.replace(" ", "") != full[j][i].source.replace(" ", ""):
                    raise ValueError(f"metric entry ({i + 1},{j + 1}) differs from ({j + 1},{i + 1})")
        self.dim = d
        self.domain = domain
        self.time_map = time_map
        self._upper = {(i, j): full[i][j] for i in range(d) for j in range(i, d)}

    @classmethod
    def conformal(cls, factor: str, d: int, domain: Domain = EUCLIDEAN) -> "MetricFamily":
        entries = [[factor if i == j else "0" for j in range(d)] for i in range(d)]
        return cls(entries, domain)

    def entry(self, i: int, j: int) -> ScalarField:
        return self._upper[(min(i, j), max(i, j))]

    def _t(self, t):
        return t if self.time_map is None else self.time_map(t)

    def _x(self, x):
        return self.domain.wrap(np.asarray(x, dtype=float))

    def _assemble(self, values: dict, shape) -> np.ndarray:
        d = self.dim
        out = np.empty(shape + (d, d))
        for (i, j), v in values.items():
            out[..., i, j] = v
            out[..., j, i] = v
        return out

    def __call__(self, t, x, check: bool = True) -> np.ndarray:
        x = self._x(x)
        tt = self._t(t)
        g = self._assemble({k: f(tt, x) for k, f in self._upper.items()}, x.shape[:-1])
        if check:
            self.check_positive(g)
        return g

    def check_positive(self, g: np.ndarray):
        if self.dim == 1:
            ok = np.all(g[..., 0, 0] > 0)
        else:
            try:
                np.linalg.cholesky(g)
                ok = True
            except np.linalg.LinAlgError:
                ok = False
        if not ok:
            raise NotPositiveDefinite("metric is not positive definite at an evaluated point")

    def jet(self, t, x, order: int = 1):
        """g, ∂g (index [..., l, i, j] = ∂_l g_ij) and, for order 2, ∂²g.

        The second-order array is indexed [..., m, l, i, j] = ∂_m ∂_l g_ij.
        """
        x = self._x(x)
        tt = self._t(t)
        shape = x.shape[:-1]
        d = self.dim
        vals, grads, hesses = {}, {}, {}
        for key, f in self._upper.items():
            if order == 1:
                vals[key], grads[key] = F.gradient(f, tt, x)
            else:
                vals[key], grads[key], hesses[key] = F.hessian(f, tt, x)
        g = self._assemble(vals, shape)
        self.check_positive(g)
        dg = np.empty(shape + (d, d, d))
        for (i, j), gr in grads.items():
            dg[..., :, i, j] = gr
            dg[..., :, j, i] = gr
        if order == 1:
            return g, dg
        ddg = np.empty(shape + (d, d, d, d))
        for (i, j), h in hesses.items():
            ddg[..., :, :, i, j] = h
            ddg[..., :, :, j, i] = h
        return g, dg, ddg

    def dt(self, t, x) -> np.ndarray:
        """∂g/∂t by AD, including through ``time_map``."""
        x = self._x(x)
        vals = {
            k: F.time_derivative(f, t, x, t_of=self.time_map) for k, f in self._upper.items()
        }
        return self._assemble(vals, x.shape[:-1])


class ConnectionFamily:
    """Linear connections ∇(t), either Levi-Civita of a metric or explicit Γ."""

    def __init__(self, dim: int, metric: MetricFamily | None = None, symbols=None, domain=EUCLIDEAN):
        self.dim = dim
        self.metric = metric
        self.domain = metric.domain if metric is not None else domain
        self.symbols = symbols

    @classmethod
    def levi_civita(cls, metric: MetricFamily) -> "ConnectionFamily":
        return cls(metric.dim, metric=metric)

    @classmethod
    def explicit(
        cls,
        symbols,
        domain: Domain = EUCLIDEAN,
        symmetric: bool = True,
        rng: np.random.Generator | None = None,
        samples: int = 16,
    ) -> "ConnectionFamily":
        """Connection from nested Γ^i_jk sources ``symbols[i][j][k]``.

        Explicit connections must be declared symmetric (torsion-free); the
        declaration is checked at random sample points.
        """
        d = len(symbols)
        table = [[[F.as_field(symbols[i][j][k], d) for k in range(d)] for j in range(d)] for i in range(d)]
        conn = cls(d, symbols=table, domain=domain)
        if not symmetric:
            raise GeometryError("only torsion-free (symmetric) connections are supported")
        rng = rng if rng is not None else np.random.default_rng(0)
        pts = rng.uniform(-1.0, 1.0, size=(samples, d))
        ts = rng.uniform(0.0, 1.0, size=samples)
        for t, p in zip(ts, pts):
            gam = conn.christoffel(float(t), p)
            if not np.allclose(gam, np.swapaxes(gam, -1, -2), rtol=1e-12, atol=1e-12):
                raise GeometryError("explicit Christoffel symbols are not symmetric in the lower indices")
        return conn

    @classmethod
    def flat(cls, dim: int, domain: Domain = EUCLIDEAN) -> "ConnectionFamily":
        return cls.explicit([[["0"] * dim for _ in range(dim)] for _ in range(dim)], domain=domain)

    def christoffel(self, t, x) -> np.ndarray:
        if self.metric is not None:
            g, dg = self.metric.jet(t, x, order=1)
            return _levi_civita(g, dg)
        x = self.domain.wrap(np.asarray(x, dtype=float))
        d = self.dim
        out = np.empty(x.shape[:-1] + (d, d, d))
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    out[..., i, j, k] = self.symbols[i][j][k](t, x)
        return out

    def christoffel_jet(self, t, x):
        """Γ and its spatial derivatives, indexed [..., m, i, j, k] = ∂_m Γ^i_jk."""
        d = self.dim
        if self.metric is not None:
            g, dg, ddg = self.metric.jet(t, x, order=2)
            gam = _levi_civita(g, dg)
            # forward-mode tangent of Γ = ½ g⁻¹ S in each coordinate direction m
            dgam = np.empty(gam.shape[:-3] + (d,) + gam.shape[-3:])
            for m in range(d):
                s_dot = _lower_sum(ddg[..., m, :, :, :])
                rhs = 0.5 * s_dot - np.einsum("...il,...ljk->...ijk", dg[..., m, :, :], gam)
                dgam[..., m, :, :, :] = _solve_tensor(g, rhs)
            return gam, dgam
        x = self.domain.wrap(np.asarray(x, dtype=float))
        shape = x.shape[:-1]
        gam = np.empty(shape + (d, d, d))
        dgam = np.empty(shape + (d, d, d, d))
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    v, gr = F.gradient(self.symbols[i][j][k], t, x)
                    gam[..., i, j, k] = v
                    dgam[..., :, i, j, k] = gr
        return gam, dgam


def _lower_sum(dg: np.ndarray) -> np.ndarray:
    """S_ljk = ∂_j g_lk + ∂_k g_jl − ∂_l g_jk from dg[..., a, b, c] = ∂_a g_bc."""
    return (
        np.einsum("...jlk->...ljk", dg)
        + np.einsum("...kjl->...ljk", dg)
        - dg
    )


def _solve_tensor(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Apply g⁻¹ to the first index of rhs[..., l, j, k]."""
    d = g.shape[-1]
    shape = rhs.shape
    flat = rhs.reshape(shape[:-3] + (d, d * d))
    _check_det(g, "metric")
    return LA.solve(g, flat).reshape(shape)


def _levi_civita(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    return 0.5 * _solve_tensor(g, _lower_sum(dg))


def christoffel(c: ConnectionFamily, t, x) -> np.ndarray:
    return c.christoffel(t, x)


def metric_dt(m: MetricFamily, t, x) -> np.ndarray:
    return m.dt(t, x)


def sharp(m: MetricFamily, b: np.ndarray, t, x) -> np.ndarray:
    """Raise the first index of a bilinear form: g(t,x)⁻¹ B."""
    g = m(t, x)
    _check_det(g, "metric")
    return LA.solve(g, b)


def contract(gam: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix Γ(v) with entries Σ_l Γ^i_lm v^l."""
    return np.einsum("...ilm,...l->...im", gam, v)


def hessian(f: ScalarField, c: ConnectionFamily, t, x, gam: np.ndarray | None = None) -> np.ndarray:
    """Covariant Hessian ∂_i∂_j f − Γ^k_ij ∂_k f at frozen time; ``gam`` may be precomputed."""
    x = np.asarray(x, dtype=float)
    _, grad, hess = F.hessian(f, t, c.domain.wrap(x))
    if gam is None:
        gam = c.christoffel(t, x)
    return hess - np.einsum("...kij,...k->...ij", gam, grad)


def curvature(c: ConnectionFamily, t, x) -> np.ndarray:
    """R^i_jkl = ∂_k Γ^i_lj − ∂_l Γ^i_kj + Γ^i_km Γ^m_lj − Γ^i_lm Γ^m_kj.

    Returned with index order [..., i, j, k, l]; R(u, v)w has components
    Σ R^i_jkl w^j u^k v^l.
    """
    gam, dgam = c.christoffel_jet(t, x)
    r = np.einsum("...kilj->...ijkl", dgam) - np.einsum("...likj->...ijkl", dgam)
    r = r + np.einsum("...ikm,...mlj->...ijkl", gam, gam) - np.einsum("...ilm,...mkj->...ijkl", gam, gam)
    return r


def ricci(c_or_m, t, x) -> np.ndarray:
    """Ric_jl = Σ_i R^i_jil."""
    c = c_or_m if isinstance(c_or_m, ConnectionFamily) else ConnectionFamily.levi_civita(c_or_m)
    return np.einsum("...ijil->...jl", curvature(c, t, x))


def curvature_action(r: np.ndarray, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """R(u, v)w for vectors, or with u a matrix of column vectors."""
    if u.ndim == v.ndim + 1:
        return np.einsum("...ijkl,...j,...kc,...l->...ic", r, w, u, v)
    return np.einsum("...ijkl,...j,...k,...l->...i", r, w, u, v)


@dataclass
class SymmetricBilinearField:
    """Entrywise symmetric bilinear form B_ij(t, x)."""

    entries: list = field(default_factory=list)
    domain: Domain = EUCLIDEAN

    def __post_init__(self):
        d = len(self.entries)
        self.dim = d
        self._fields = _parse_matrix(self.entries, d)
        for i in range(d):
            for j in range(i + 1, d):
                if self._fields[i][j].source.replace(" ", "") != self._fields[j][i].source.replace(" ", ""):
                    raise ValueError("bilinear field must be symmetric")

    @classmethod
    def from_metric_dt(cls, m: MetricFamily) -> "_MetricDerived":
        return _MetricDerived(m, "dt")

    @classmethod
    def from_metric(cls, m: MetricFamily) -> "_MetricDerived":
        return _MetricDerived(m, "g")

    def __call__(self, t, x) -> np.ndarray:
        x = self.domain.wrap(np.asarray(x, dtype=float))
        d = self.dim
        out = np.empty(x.shape[:-1] + (d, d))
        for i in range(d):
            for j in range(i, d):
                v = self._fields[i][j](t, x)
                out[..., i, j] = v
                out[..., j, i] = v
        return out


class _MetricDerived:
    """Bilinear field backed by a metric: either g itself or ∂g/∂t."""

    def __init__(self, m: MetricFamily, which: str):
        self.metric = m
        self.dim = m.dim
        self.which = which

    def __call__(self, t, x) -> np.ndarray:
        return self.metric(t, x) if self.which == "g" else self.metric.dt(t, x)


def gram_schmidt(g: np.ndarray) -> np.ndarray:
    """Columns of the coordinate basis made g-orthonormal (upper triangular e).

    With g = L Lᵀ (Cholesky), e = L⁻ᵀ satisfies eᵀ g e = I.
    """
    lower = np.linalg.cholesky(g)
    eye = np.broadcast_to(np.eye(g.shape[-1]), g.shape)
    return np.swapaxes(np.linalg.solve(lower, eye), -1, -2)


def operator_norm(a: np.ndarray, g_from: np.ndarray, g_to: np.ndarray) -> np.ndarray:
    """Norm of a: (T, g_from) -> (T, g_to), i.e. max |a v|_{g_to} / |v|_{g_from}."""
    lf = np.linalg.cholesky(g_from)
    lt = np.linalg.cholesky(g_to)
    m = np.swapaxes(lt, -1, -2) @ a @ np.linalg.inv(np.swapaxes(lf, -1, -2))
    return np.linalg.norm(m, ord=2, axis=(-2, -1))
