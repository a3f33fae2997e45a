"""Time grids, reproducible Brownian drivers, SDE integrators, covariation.

Path ensembles are stored step-major: states ``x`` have shape
``(n + 1, P, d)`` for ``P`` paths, increments ``(n, P, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from tempogeo.fields import EvaluationDomainError, ScalarField, as_field

DIVERGENCE_BOUND = 1e12

OK, DIVERGED, ABORTED = 0, 1, 2


class SimulationAbort(Exception):
    """A path hit a field domain error or a non-finite state."""

    def __init__(self, message: str, path_id: int, step: int):
        self.path_id = path_id
        self.step = step
        super().__init__(f"path {path_id}, step {step}: {message}")


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("grid needs T > t0")
        if self.n < 1:
            raise ValueError("grid needs at least one step")

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.n

    def node(self, k: int) -> float:
        return self.t0 + k * self.h

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n + 1) * self.h

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n * factor)


@dataclass(frozen=True)
class BrownianDriver:
    """Counter-based Gaussian increments keyed on (seed, path_id, step).

    Normal c of step k is entry j = k·dim + c of the path's normal stream.
    The stream is read from Philox under key ``(seed, path_id)``: block
    j // 4 holds two uniform pairs whose Box–Muller cosine and sine branches
    are normals 4b, 4b + 1, 4b + 2, 4b + 3. Each increment is therefore a
    pure function of its key and position.
    """

    seed: int
    dim: int
    grid: TimeGrid

    def normals(self, path_ids: Sequence[int], k0: int = 0, k1: Optional[int] = None) -> np.ndarray:
        """Standard normals of shape ``(k1 - k0, P, dim)``."""
        k1 = self.grid.n if k1 is None else k1
        ids = np.atleast_1d(np.asarray(path_ids, dtype=np.uint64))
        j0, j1 = k0 * self.dim, k1 * self.dim
        b0, b1 = j0 // 4, -(-j1 // 4)
        raw = np.empty((ids.size, 4 * (b1 - b0)), dtype=np.uint64)
        key_hi = np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF)
        for p, pid in enumerate(ids):
            raw[p] = np.random.Philox(key=[key_hi, pid], counter=b0).random_raw(4 * (b1 - b0))
        raw = raw.reshape(ids.size, 2 * (b1 - b0), 2)
        # 53-bit uniforms; u1 in (0, 1] so the log is finite
        u1 = ((raw[..., 0] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[..., 1] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty((ids.size, 4 * (b1 - b0)))
        z[:, 0::2] = rad * np.cos(ang)
        z[:, 1::2] = rad * np.sin(ang)
        z = z[:, j0 - 4 * b0 : j1 - 4 * b0].reshape(ids.size, k1 - k0, self.dim)
        return np.ascontiguousarray(np.transpose(z, (1, 0, 2)))

    def increments(self, path_ids: Sequence[int], k0: int = 0, k1: Optional[int] = None) -> np.ndarray:
        return np.sqrt(self.grid.h) * self.normals(path_ids, k0, k1)


def brownian_increments(driver: BrownianDriver, path_id: int) -> np.ndarray:
    """All increments ΔW_k of one path, shape ``(n, dim)``."""
    return driver.increments([path_id])[:, 0, :]


def coarsen(dw: np.ndarray, factor: int = 2) -> np.ndarray:
    """Sum consecutive groups of increments, giving the same path on a coarser grid."""
    n = dw.shape[0]
    if n % factor:
        raise ValueError("step count not divisible by coarsening factor")
    return dw.reshape((n // factor, factor) + dw.shape[1:]).sum(axis=1)


@dataclass
class SemimartingalePath:
    """An ensemble of discretized paths sharing one grid."""

    grid: TimeGrid
    x: np.ndarray
    dx: np.ndarray
    path_ids: np.ndarray
    dw: Optional[np.ndarray] = None
    status: np.ndarray = field(default=None)
    fail_step: np.ndarray = field(default=None)
    messages: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.x.shape[1]
        if self.status is None:
            self.status = np.zeros(p, dtype=int)
        if self.fail_step is None:
            self.fail_step = np.full(p, -1)

    @property
    def n_paths(self) -> int:
        return self.x.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    @property
    def diverged(self) -> np.ndarray:
        return self.status == DIVERGED

    @property
    def alive(self) -> np.ndarray:
        return self.status == OK

    def select(self, mask) -> "SemimartingalePath":
        mask = np.asarray(mask)
        return SemimartingalePath(
            self.grid,
            self.x[:, mask],
            self.dx[:, mask],
            self.path_ids[mask],
            None if self.dw is None else self.dw[:, mask],
            self.status[mask],
            self.fail_step[mask],
            {k: v for k, v in self.messages.items() if k in set(self.path_ids[mask].tolist())},
        )


def _vector(fields_, d: int) -> list[ScalarField]:
    fs = [as_field(f, d) for f in fields_]
    if len(fs) != d:
        raise ValueError(f"drift needs {d} components, got {len(fs)}")
    return fs


def _matrix(fields_, d: int) -> list[list[ScalarField]]:
    rows = [[as_field(f, d) for f in row] for row in fields_]
    if len(rows) != d or len({len(r) for r in rows}) != 1:
        raise ValueError("diffusion must be a d x m matrix")
    return rows


class Coefficients:
    """Drift b(t, x) and diffusion σ(t, x) evaluated on batches."""

    def __init__(self, drift, diffusion, d: int, domain=None):
        self.d = d
        self.drift = _vector(drift, d)
        self.diffusion = _matrix(diffusion, d)
        self.m = len(self.diffusion[0])
        self.domain = domain

    def _x(self, x):
        return x if self.domain is None else self.domain.wrap(x)

    def b(self, t, x) -> np.ndarray:
        xw = self._x(x)
        out = np.empty(x.shape)
        for i, f in enumerate(self.drift):
            out[..., i] = f.evaluate_env(f.env(t, xw))
        return out

    def sigma(self, t, x) -> np.ndarray:
        xw = self._x(x)
        out = np.empty(x.shape + (self.m,))
        for i, row in enumerate(self.diffusion):
            for j, f in enumerate(row):
                out[..., i, j] = f.evaluate_env(f.env(t, xw))
        return out


def _step(coef: Coefficients, t0, t1, x, dw, convention: str):
    h = t1 - t0
    b0 = coef.b(t0, x)
    s0 = coef.sigma(t0, x)
    euler = b0 * h + np.einsum("...ij,...j->...i", s0, dw)
    if convention == "ito":
        return euler
    xp = x + euler
    b1 = coef.b(t1, xp)
    s1 = coef.sigma(t1, xp)
    return 0.5 * (b0 + b1) * h + 0.5 * np.einsum("...ij,...j->...i", s0 + s1, dw)


def iterate_sde(
    drift,
    diffusion,
    x0,
    driver: BrownianDriver,
    path_ids,
    convention: str = "ito",
    domain=None,
    block: int = 4096,
) -> Iterator[tuple]:
    """Stream the integration step by step.

    Yields ``(k, x_k, dx_k, dw_k, status)`` for k = 0..n-1 where ``x_k`` is the
    state before the step. Diverged or aborted paths are frozen (zero
    increments) from their failure step on.
    """
    if convention not in ("ito", "stratonovich"):
        raise ValueError(f"unknown convention {convention!r}")
    path_ids = np.atleast_1d(np.asarray(path_ids, dtype=np.int64))
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[-1]
    coef = Coefficients(drift, diffusion, d, domain)
    if coef.m != driver.dim:
        raise ValueError(f"diffusion has {coef.m} columns but driver dimension is {driver.dim}")
    grid = driver.grid
    p = path_ids.size
    x = np.broadcast_to(x0, (p, d)).astype(float).copy()
    status = np.zeros(p, dtype=int)
    fail = np.full(p, -1)
    messages: dict = {}
    for k0 in range(0, grid.n, block):
        k1 = min(grid.n, k0 + block)
        dws = driver.increments(path_ids, k0, k1)
        for k in range(k0, k1):
            dw = dws[k - k0]
            t0, t1 = grid.node(k), grid.node(k + 1)
            dx = np.zeros_like(x)
            live = np.flatnonzero(status == OK)
            while live.size:
                try:
                    if live.size == p:
                        dx = _step(coef, t0, t1, x, dw, convention)
                    else:
                        dx[live] = _step(coef, t0, t1, x[live], dw[live], convention)
                    break
                except EvaluationDomainError as err:
                    bad = live[np.unique(err.index % live.size)]
                    status[bad] = ABORTED
                    fail[bad] = k
                    for i in bad:
                        messages[int(path_ids[i])] = str(err)
                    dx[bad] = 0.0
                    live = np.flatnonzero(status == OK)
            with np.errstate(invalid="ignore", over="ignore"):
                xn = x + dx
            finite = np.all(np.isfinite(xn), axis=-1)
            if not finite.all():
                i = int(np.flatnonzero(~finite)[0])
                raise SimulationAbort("non-finite state", int(path_ids[i]), k)
            big = (np.max(np.abs(xn), axis=-1) > DIVERGENCE_BOUND) & (status == OK)
            if big.any():
                status[big] = DIVERGED
                fail[big] = k + 1
                for i in np.flatnonzero(big):
                    messages[int(path_ids[i])] = f"diverged (|x| > {DIVERGENCE_BOUND:g})"
            yield k, x, dx, dw, status, fail, messages
            x = xn


def integrate_sde(
    drift,
    diffusion,
    x0,
    driver: BrownianDriver,
    path_ids,
    convention: str = "ito",
    domain=None,
) -> SemimartingalePath:
    """Euler–Maruyama (Itô) or Heun (Stratonovich) integration of dX = b dt + σ dW."""
    path_ids = np.atleast_1d(np.asarray(path_ids, dtype=np.int64))
    grid = driver.grid
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[-1]
    p = path_ids.size
    xs = np.empty((grid.n + 1, p, d))
    dxs = np.empty((grid.n, p, d))
    dws = np.empty((grid.n, p, driver.dim))
    xs[0] = np.broadcast_to(x0, (p, d))
    status = fail = None
    messages: dict = {}
    for k, x, dx, dw, status, fail, messages in iterate_sde(
        drift, diffusion, x0, driver, path_ids, convention, domain
    ):
        dxs[k] = dx
        dws[k] = dw
        xs[k + 1] = x + dx
    return SemimartingalePath(grid, xs, dxs, path_ids, dws, status.copy(), fail.copy(), dict(messages))


def quadratic_covariation(path: SemimartingalePath, cumulative: bool = False) -> np.ndarray:
    """Realized bracket increments Δx_k Δx_kᵀ, shape ``(n, P, d, d)``.

    With ``cumulative=True`` returns the running sums at the nodes,
    shape ``(n + 1, P, d, d)`` starting from zero.
    """
    inc = np.einsum("...i,...j->...ij", path.dx, path.dx)
    if not cumulative:
        return inc
    out = np.zeros((inc.shape[0] + 1,) + inc.shape[1:])
    np.cumsum(inc, axis=0, out=out[1:])
    return out
