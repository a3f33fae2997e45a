"""Monte Carlo tests of the (∇(t))-martingale property and intrinsic integrals.

Both martingale tests reduce a path functional to per-bucket increments:
the time grid is cut into M equal buckets, each bucket increment is averaged
over paths, and the largest |mean| / stderr over buckets and components is
compared with a fixed threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tempogeo import fields as F
from tempogeo.frame import horizontal_lift
from tempogeo.geometry import ConnectionFamily, MetricFamily
from tempogeo.parallel import map_chunks
from tempogeo.sde import (
    BrownianDriver,
    SemimartingalePath,
    TimeGrid,
    integrate_sde,
    iterate_sde,
)

BUCKETS = 8
THRESHOLD = 3.3
MIN_SURVIVAL = 0.9


class MartingaleError(Exception):
    pass


class InsufficientPaths(MartingaleError):
    pass


def drift_increments(path: SemimartingalePath, connection: ConnectionFamily) -> np.ndarray:
    """m_k = Δx_k + ½ Γ(t_k, x_k)(Δx_k, Δx_k), shape (n, P, d)."""
    out = np.empty_like(path.dx)
    for k in range(path.grid.n):
        gam = connection.christoffel(path.grid.node(k), path.x[k])
        dx = path.dx[k]
        out[k] = dx + 0.5 * np.einsum("...ijl,...j,...l->...i", gam, dx, dx)
    return out


def bucket_edges(n: int, buckets: int = BUCKETS) -> np.ndarray:
    return np.array([round(b * n / buckets) for b in range(buckets + 1)])


def bucket_sums(increments: np.ndarray, buckets: int = BUCKETS) -> np.ndarray:
    """Sum step increments (n, P, c) over equal time buckets, giving (M, P, c)."""
    edges = bucket_edges(increments.shape[0], buckets)
    return np.stack([increments[a:b].sum(axis=0) for a, b in zip(edges[:-1], edges[1:])])


@dataclass
class DriftStatistic:
    """Bucketed z-statistic for zero drift of a vector-valued functional."""

    name: str
    means: np.ndarray  # (M, c)
    stderrs: np.ndarray  # (M, c)
    terminal_mean: np.ndarray  # (c,)
    terminal_stderr: np.ndarray  # (c,)
    statistic: float
    threshold: float
    n_paths: int
    n_survived: int
    labels: list = field(default_factory=list)

    @property
    def buckets(self) -> int:
        return self.means.shape[0]

    @property
    def decision(self) -> str:
        return "rejected" if self.statistic > self.threshold else "consistent"

    def rows(self) -> list[list]:
        """One row per (bucket, component) followed by a summary row."""
        out = []
        labels = self.labels or [f"c{i + 1}" for i in range(self.means.shape[1])]
        for b in range(self.buckets):
            for c, lab in enumerate(labels):
                m, s = self.means[b, c], self.stderrs[b, c]
                out.append([self.name, str(b), lab, m, s, _zscore(m, s), "", ""])
        out.append(
            [self.name, "summary", "max", np.nan, np.nan, self.statistic, self.threshold, self.decision]
        )
        return out

    header = ["test", "bucket", "component", "mean", "stderr", "z", "threshold", "decision"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for row in self.rows():
                w.writerow([format_value(v) for v in row])


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _zscore(mean: float, stderr: float) -> float:
    if stderr > 0:
        return abs(mean) / stderr
    return 0.0 if mean == 0 else np.inf


def drift_statistic(
    sums: np.ndarray,
    name: str,
    threshold: float = THRESHOLD,
    n_paths: Optional[int] = None,
    labels: Sequence[str] = (),
) -> DriftStatistic:
    """Statistic from bucket increments of shape (M, P, c) over surviving paths."""
    m, p, c = sums.shape
    if p < 2:
        raise InsufficientPaths("need at least two surviving paths")
    means = sums.mean(axis=1)
    stderrs = sums.std(axis=1, ddof=1) / np.sqrt(p)
    term = sums.sum(axis=0)
    z = np.vectorize(_zscore)(means, stderrs)
    return DriftStatistic(
        name,
        means,
        stderrs,
        term.mean(axis=0),
        term.std(axis=0, ddof=1) / np.sqrt(p),
        float(np.max(z)),
        threshold,
        p if n_paths is None else n_paths,
        p,
        list(labels),
    )


def default_test_functions(d: int) -> list[str]:
    """Coordinates, squares and exp(±x_i): a heuristic battery."""
    out = []
    for i in range(1, d + 1):
        out += [f"x{i}", f"x{i}^2", f"exp(x{i})", f"exp(-x{i})"]
    return out


@dataclass
class EnsembleSpec:
    """Ensemble of N paths of an SDE (or a g(t)-Brownian motion) on a grid."""

    connection: ConnectionFamily
    n_paths: int
    grid: TimeGrid
    seed: int
    x0: Sequence[float]
    drift: Optional[Sequence] = None
    diffusion: Optional[Sequence[Sequence]] = None
    convention: str = "ito"
    brownian_metric: Optional[MetricFamily] = None
    chunk: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("an ensemble needs N >= 2")
        if self.brownian_metric is None and (self.drift is None or self.diffusion is None):
            raise ValueError("give drift and diffusion, or a metric for a g(t)-Brownian motion")

    @property
    def dim(self) -> int:
        return len(self.x0)

    @property
    def noise_dim(self) -> int:
        return self.dim if self.brownian_metric is not None else len(self.diffusion[0])

    def driver(self) -> BrownianDriver:
        return BrownianDriver(self.seed, self.noise_dim, self.grid)

    def simulate(self, path_ids) -> SemimartingalePath:
        if self.brownian_metric is not None:
            from tempogeo.heatlab import gt_brownian_motion

            return gt_brownian_motion(self.brownian_metric, self.x0, self.driver(), path_ids)[0]
        domain = self.connection.domain
        return integrate_sde(
            self.drift, self.diffusion, self.x0, self.driver(), path_ids, self.convention, domain
        )


def _hessian_increments(path: SemimartingalePath, connection, fs, gammas=None) -> np.ndarray:
    """f(x_{k+1}) − f(x_k) − ½ Hess^{∇(t_k)} f(x_k)(Δx, Δx) for each test function.

    Test functions are time-independent, so their derivatives are evaluated
    over all nodes in one batch; only Γ depends on the step time.
    """
    grid = path.grid
    xw = connection.domain.wrap(path.x)
    if gammas is None:
        gammas = np.stack([connection.christoffel(grid.node(k), path.x[k]) for k in range(grid.n)])
    dx = path.dx
    inc = np.empty(dx.shape[:2] + (len(fs),))
    for a, f in enumerate(fs):
        vals, grad, hess = F.hessian(f, 0.0, xw[:-1])
        last = f(0.0, xw[-1:])
        inc[..., a] = np.diff(np.concatenate([vals, last]), axis=0)
        cov = hess - np.einsum("...kij,...k->...ij", gammas[: grid.n], grad)
        inc[..., a] -= 0.5 * np.einsum("...ij,...i,...j->...", cov, dx, dx)
    return inc


@dataclass
class _ChunkResult:
    antidev: np.ndarray  # (M, P_alive, d)
    hess: np.ndarray  # (M, P_alive, n_f)
    n_alive: int
    failures: dict


def _chunk(spec: EnsembleSpec, fs, buckets: int, path_ids) -> _ChunkResult:
    path = spec.simulate(path_ids)
    alive = path.alive
    failures = {int(pid): path.messages.get(int(pid), "") for pid in path.path_ids[~alive]}
    path = path.select(alive)
    if path.n_paths == 0:
        d = spec.dim
        return _ChunkResult(np.zeros((buckets, 0, d)), np.zeros((buckets, 0, len(fs))), 0, failures)
    lift = horizontal_lift(path, spec.connection, keep_christoffel=True)
    antidev = bucket_sums(lift.dz, buckets)
    hess = bucket_sums(_hessian_increments(path, spec.connection, fs, lift.extras["christoffel"]), buckets)
    return _ChunkResult(antidev, hess, path.n_paths, failures)


@dataclass
class MartingaleReport:
    antidevelopment: DriftStatistic
    hessian: DriftStatistic
    failures: dict

    @property
    def agree(self) -> bool:
        return self.antidevelopment.decision == self.hessian.decision


def martingale_tests(
    spec: EnsembleSpec,
    test_functions: Optional[Sequence] = None,
    buckets: int = BUCKETS,
    threshold: float = THRESHOLD,
) -> MartingaleReport:
    """Both martingale criteria on one simulated ensemble."""
    d = spec.dim
    srcs = list(test_functions) if test_functions is not None else default_test_functions(d)
    fs = [F.as_field(f, d) for f in srcs]
    if any("t" in F.variables(f.expression) for f in fs):
        raise ValueError("test functions must not depend on t")
    parts = map_chunks(
        lambda ids: _chunk(spec, fs, buckets, ids), np.arange(spec.n_paths), spec.chunk, spec.workers
    )
    alive = sum(p.n_alive for p in parts)
    failures: dict = {}
    for p in parts:
        failures.update(p.failures)
    if alive < MIN_SURVIVAL * spec.n_paths:
        worst = sorted(failures.items())[:5]
        raise InsufficientPaths(f"only {alive} of {spec.n_paths} paths survived; first failures: {worst}")
    antidev = np.concatenate([p.antidev for p in parts], axis=1)
    hess = np.concatenate([p.hess for p in parts], axis=1)
    return MartingaleReport(
        drift_statistic(antidev, "antidevelopment", threshold, spec.n_paths, [f"z{i + 1}" for i in range(d)]),
        drift_statistic(hess, "hessian", threshold, spec.n_paths, [str(f) for f in srcs]),
        failures,
    )


def test_antidevelopment(spec: EnsembleSpec, buckets: int = BUCKETS, threshold: float = THRESHOLD) -> DriftStatistic:
    """Zero-drift test for the antidevelopment Z of the ensemble."""
    return _single(spec, None, buckets, threshold, "antidevelopment")


def test_hessian_functional(
    spec: EnsembleSpec,
    test_functions: Optional[Sequence] = None,
    buckets: int = BUCKETS,
    threshold: float = THRESHOLD,
) -> DriftStatistic:
    """Zero-drift test for f(X_t) − f(X_0) − ½ Σ Hess f(Δx, Δx) over a function battery."""
    return _single(spec, test_functions, buckets, threshold, "hessian")


# keep pytest from collecting these when imported into test modules
test_antidevelopment.__test__ = False
test_hessian_functional.__test__ = False


def _single(spec, fs, buckets, threshold, which):
    report = martingale_tests(spec, fs, buckets, threshold)
    return report.antidevelopment if which == "antidevelopment" else report.hessian


def intrinsic_qv(path: SemimartingalePath, lift, bilinear) -> tuple[np.ndarray, np.ndarray]:
    """Running ∫B(dX, dX), directly and through the frame, each of shape (n + 1, P).

    The frame-side value contracts B(U e_i, U e_j) with ΔZ^i ΔZ^j using the
    same midpoint frames that define ΔZ.
    """
    grid = path.grid
    frames = lift.e_mid if lift.e_mid is not None else lift.e[:-1]
    direct = np.zeros(path.x.shape[:2])
    framed = np.zeros(path.x.shape[:2])
    for k in range(grid.n):
        b = bilinear(grid.node(k), path.x[k])
        dx = path.dx[k]
        direct[k + 1] = direct[k] + np.einsum("...ij,...i,...j->...", b, dx, dx)
        e = frames[k]
        be = np.swapaxes(e, -1, -2) @ b @ e
        dz = lift.dz[k]
        framed[k + 1] = framed[k] + np.einsum("...ij,...i,...j->...", be, dz, dz)
    return direct, framed


def integrate_one_form(path: SemimartingalePath, lift, psi: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Running Stratonovich ∫Ψ(∘dX) by the midpoint rule, directly and via Ψ(U e_i)∘dZ^i."""
    grid = path.grid
    d = path.dim
    comps = [F.as_field(c, d) for c in psi]
    frames = lift.e_mid if lift.e_mid is not None else lift.e[:-1]

    def covector(k):
        return np.stack([c(grid.node(k), path.x[k]) for c in comps], axis=-1)

    direct = np.zeros(path.x.shape[:2])
    framed = np.zeros(path.x.shape[:2])
    left = covector(0)
    for k in range(grid.n):
        right = covector(k + 1)
        mid = 0.5 * (left + right)
        direct[k + 1] = direct[k] + np.einsum("...i,...i->...", mid, path.dx[k])
        on_frame = np.einsum("...i,...ij->...j", mid, frames[k])
        framed[k + 1] = framed[k] + np.einsum("...j,...j->...", on_frame, lift.dz[k])
        left = right
    return direct, framed


@dataclass
class CounterexampleResult:
    """Ensemble means of a finite intrinsic quantity and a divergent one."""

    qv_name: str
    qv_mean: float
    qv_stderr: float
    other_name: str
    other_mean: float
    other_stderr: float
    n_paths: int
    diverged: int

    def rows(self) -> list[list]:
        return [
            [self.qv_name, self.qv_mean, self.qv_stderr],
            [self.other_name, self.other_mean, self.other_stderr],
        ]


def streamed_brackets(
    drift,
    diffusion,
    x0,
    driver: BrownianDriver,
    path_ids,
    metric: Optional[MetricFamily] = None,
    convention: str = "ito",
    domain=None,
) -> dict:
    """Stream an SDE without storing it, accumulating per path

    ``g0_qv`` = Σ |Δx_k|², ``g_qv`` = Σ g(t_k, x_k)(Δx_k, Δx_k) when a metric is
    given, ``displacement`` = X_T − X_0 and the final ``status``.
    """
    path_ids = np.atleast_1d(np.asarray(path_ids))
    p = path_ids.size
    d = len(x0)
    plain = np.zeros(p)
    weighted = np.zeros(p) if metric is not None else None
    disp = np.zeros((p, d))
    status = np.zeros(p, dtype=int)
    grid = driver.grid
    for k, x, dx, dw, status, fail, msgs in iterate_sde(
        drift, diffusion, x0, driver, path_ids, convention, domain
    ):
        plain += np.einsum("...i,...i->...", dx, dx)
        if weighted is not None:
            g = metric(grid.node(k), x)
            weighted += np.einsum("...ij,...i,...j->...", g, dx, dx)
        disp += dx
    out = {"g0_qv": plain, "displacement": disp, "status": status.copy()}
    if weighted is not None:
        out["g_qv"] = weighted
    return out


def _ensemble_brackets(
    drift, diffusion, x0, driver, n_paths, metric, chunk, workers, domain=None, convention="ito"
) -> dict:
    parts = map_chunks(
        lambda ids: streamed_brackets(drift, diffusion, x0, driver, ids, metric, convention, domain),
        np.arange(n_paths),
        chunk,
        workers,
    )
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def counterexample_qv(
    a: str,
    sigma: str,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    x0: float = 0.0,
    chunk: int = 500,
    workers: int = 1,
) -> CounterexampleResult:
    """u = exp(a(t) x), σ = σ(t), b = −¼ a σ²: Euclidean QV stays finite while X drifts."""
    drift = [f"-0.25*({a})*({sigma})^2"]
    res = _ensemble_brackets(drift, [[sigma]], [x0], BrownianDriver(seed, 1, grid), n_paths, None, chunk, workers)
    qv = _mean_se(res["g0_qv"])
    disp = _mean_se(res["displacement"][:, 0])
    return CounterexampleResult(
        "g0_qv", *qv, "displacement", *disp, n_paths, int(np.count_nonzero(res["status"]))
    )


def counterexample_riemannian_qv(
    u: str, grid: TimeGrid, n_paths: int, seed: int, x0: float = 0.0, chunk: int = 500, workers: int = 1
) -> CounterexampleResult:
    """u = u(t), σ = 1, b = 0: ∫ g(s)(dX, dX) is finite while X is a Brownian motion."""
    metric = MetricFamily([[u]])
    if metric.entry(0, 0).depends_on("x1"):
        raise ValueError("the weight must depend on t only")
    res = _ensemble_brackets(["0"], [["1"]], [x0], BrownianDriver(seed, 1, grid), n_paths, metric, chunk, workers)
    return CounterexampleResult(
        "g_qv", *_mean_se(res["g_qv"]), "g0_qv", *_mean_se(res["g0_qv"]), n_paths, 0
    )
