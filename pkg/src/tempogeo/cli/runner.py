"""Execute a scenario's analyses and write CSV reports."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from tempogeo import fields as F
from tempogeo import frame as FR
from tempogeo import heatlab as H
from tempogeo import martingale as MG
from tempogeo.cli.scenario import ConfigError, Scenario, resolve
from tempogeo.geometry import operator_norm
from tempogeo.sde import TimeGrid


def fmt(v) -> str:
    """CSV cell: floats with 17 significant digits, everything else as text."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path: str, header: list, rows: list):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def config_hash(doc: dict) -> str:
    """Git blob hash of the canonical JSON form of the resolved scenario."""
    body = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


@dataclass
class AnalysisResult:
    analysis: str
    rows: list  # (quantity, value, reference, ok)
    files: dict = field(default_factory=dict)  # file name -> (header, rows)

    @property
    def passed(self) -> bool:
        return all(r[3] for r in self.rows)


@dataclass
class RunReport:
    scenario: str
    seed: int
    config_hash: str
    results: list
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def summary_rows(self) -> list:
        return [
            [self.scenario, r.analysis, q, v, ref, "pass" if ok else "fail"]
            for r in self.results
            for q, v, ref, ok in r.rows
        ]

    def table(self) -> str:
        lines = [f"scenario {self.scenario}  seed {self.seed}  config {self.config_hash[:12]}"]
        for _, analysis, q, v, ref, status in self.summary_rows():
            lines.append(f"  {analysis:<22} {q:<28} {fmt(v):<24} {ref:<28} {status}")
        lines.append(f"  wall time {self.wall_time:.2f} s")
        return "\n".join(lines)


def _in_range(v: float, r) -> bool:
    lo, hi = r
    return (lo is None or v >= lo) and (hi is None or v <= hi)


def _range_text(r) -> str:
    lo, hi = r
    return f"[{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}]"


class _Context:
    def __init__(self, scenario: Scenario, workers: int):
        self.scenario = scenario
        self.workers = workers
        self.cache: dict = {}


def _martingale(ctx: _Context, params: dict, which: str) -> AnalysisResult:
    sc = ctx.scenario
    hess_params = next((a for a in sc.doc["analysis"] if a["type"] == "test_hessian"), {})
    fs = hess_params.get("test_functions")
    threshold = params.get("threshold", MG.THRESHOLD)
    buckets = params.get("buckets", MG.BUCKETS)
    key = ("martingale", tuple(fs) if fs else None, threshold, buckets)
    if key not in ctx.cache:
        proc = sc.process
        spec = MG.EnsembleSpec(
            sc.connection,
            sc.n_paths,
            sc.grid,
            sc.seed,
            proc["x0"],
            proc.get("drift"),
            proc.get("diffusion"),
            proc.get("convention", "ito"),
            sc.metric if sc.brownian else None,
            sc.chunk,
            ctx.workers,
        )
        ctx.cache[key] = MG.martingale_tests(spec, fs, buckets, threshold)
    report = ctx.cache[key]
    stat = report.antidevelopment if which == "test_antidevelopment" else report.hessian
    expect = params.get("expect", "consistent")
    rows = [("decision", stat.decision, expect, stat.decision == expect)]
    ref = f"> {threshold}" if expect == "rejected" else f"<= {threshold}"
    rows.append(("statistic", stat.statistic, ref, True))
    if "min_statistic" in params:
        m = params["min_statistic"]
        rows.append(("statistic_min", stat.statistic, f"> {m}", stat.statistic > m))
    rows.append(("surviving_paths", stat.n_survived, f">= {MG.MIN_SURVIVAL * sc.n_paths:g}", True))
    return AnalysisResult(which, rows, {f"{which}.csv": (MG.DriftStatistic.header, stat.rows())})


def _bilinear(sc: Scenario, params: dict):
    b = params.get("bilinear", "metric")
    if b == "metric":
        return sc.metric
    from tempogeo.geometry import SymmetricBilinearField

    return SymmetricBilinearField(b, sc.domain)


def _intrinsic_qv(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    bil = _bilinear(sc, params)

    def run(path):
        lift = FR.horizontal_lift(path, sc.connection)
        direct, framed = MG.intrinsic_qv(path, lift, bil)
        return direct[-1], framed[-1]

    parts = sc.simulate_chunks(params.get("paths", sc.n_paths), run, ctx.workers)
    direct = np.concatenate([p[0] for p in parts])
    framed = np.concatenate([p[1] for p in parts])
    rel = float(np.max(np.abs(direct - framed) / np.maximum(np.abs(direct), 1e-300)))
    mean = float(direct.mean())
    se = float(direct.std(ddof=1) / np.sqrt(direct.size))
    rows = [("direct_vs_frame_rel", rel, "<= 1e-06", rel <= 1e-6), ("mean", mean, "", True), ("stderr", se, "", True)]
    if "expected" in params:
        tol = params.get("tolerance", 0.05)
        ok = abs(mean - params["expected"]) <= tol
        rows.append(("mean_vs_expected", mean, f"{params['expected']} ± {tol}", ok))
    files = {"intrinsic_qv.csv": (["path", "direct", "frame"], [[i, a, b] for i, (a, b) in enumerate(zip(direct, framed))])}
    return AnalysisResult("intrinsic_qv", rows, files)


def _orthonormality(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    halvings = params.get("halvings", 3)
    paths = np.arange(params.get("paths", min(sc.n_paths, 20)))
    max_defect = params.get("max_defect", 0.02)
    lo, hi = params.get("ratio_range", [0.33, 0.67])
    defects, hs = [], []
    for level in range(halvings + 1):
        grid = TimeGrid(sc.grid.t0, sc.grid.T, sc.grid.n * 2**level)
        lift = sc.riemann_lift(paths, grid)[1]
        defects.append(float(FR.orthonormality_defect(lift, sc.metric).max()))
        hs.append(grid.h)
    rows = [("max_defect", defects[0], f"<= {max_defect}", defects[0] <= max_defect)]
    table = [[hs[0], defects[0], ""]]
    for level in range(1, halvings + 1):
        ratio = defects[level] / defects[level - 1] if defects[level - 1] > 0 else np.nan
        rows.append((f"ratio_{level}", ratio, f"[{lo}, {hi}]", bool(lo <= ratio <= hi)))
        table.append([hs[level], defects[level], ratio])
    return AnalysisResult("orthonormality", rows, {"orthonormality.csv": (["h", "max_defect", "ratio"], table)})


def _transport_oracle(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    u = sc.metric.entry(0, 0)
    if u.depends_on("t"):
        raise ConfigError(["transport_oracle needs a static metric"])
    tol = params.get("tolerance", 1e-3)

    def run(path):
        lift = FR.horizontal_lift(path, sc.connection)
        par = FR.parallel_transport(lift, 0, sc.grid.n).matrix[:, 0, 0]
        oracle = np.sqrt(u(0.0, path.x[0]) / u(0.0, path.x[-1]))
        return par, oracle

    parts = sc.simulate_chunks(params.get("paths", min(sc.n_paths, 100)), run, ctx.workers)
    par = np.concatenate([p[0] for p in parts])
    oracle = np.concatenate([p[1] for p in parts])
    rel = np.abs(par / oracle - 1.0)
    rows = [("max_relative_error", float(rel.max()), f"<= {tol}", bool(rel.max() <= tol))]
    table = [[i, a, b, c] for i, (a, b, c) in enumerate(zip(par, oracle, rel))]
    return AnalysisResult("transport_oracle", rows, {"transport_oracle.csv": (["path", "transport", "oracle", "rel_error"], table)})


def _counterexample_qv(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    proc = sc.process
    if sc.brownian:
        raise ConfigError(["counterexample_qv needs an sde process"])
    from tempogeo.sde import BrownianDriver

    driver = BrownianDriver(sc.seed, sc.noise_dim, sc.grid)
    want_g = "g_qv" in params
    res = MG._ensemble_brackets(
        proc["drift"], proc["diffusion"], proc["x0"], driver, sc.n_paths,
        sc.metric if want_g else None, sc.chunk, ctx.workers, sc.domain, proc.get("convention", "ito"),
    )
    rows = []
    table = []
    quantities = {"g0_qv": res["g0_qv"], "displacement": res["displacement"][:, 0]}
    if want_g:
        quantities["g_qv"] = res["g_qv"]
    for name, values in quantities.items():
        mean, se = MG._mean_se(values)
        table.append([name, mean, se])
        if name in params:
            rows.append((f"mean_{name}", mean, _range_text(params[name]), _in_range(mean, params[name])))
        else:
            rows.append((f"mean_{name}", mean, "", True))
    diverged = int(np.count_nonzero(res["status"]))
    rows.append(("diverged_paths", diverged, "", True))
    return AnalysisResult("counterexample_qv", rows, {"counterexample_qv.csv": (["quantity", "mean", "stderr"], table)})


def _lift_relation(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    halvings = params.get("halvings", 1)
    paths = np.arange(params.get("paths", min(sc.n_paths, 20)))
    lo, hi = params.get("ratio_range", [1 / 6, 1 / 2.5])
    res, hs = [], []
    for level in range(halvings + 1):
        grid = TimeGrid(sc.grid.t0, sc.grid.T, sc.grid.n * 2**level)
        path = sc.simulate(paths, grid)
        lc = FR.horizontal_lift(path, sc.connection)
        lr = FR.riemann_horizontal_lift(path, sc.metric)
        res.append(float(FR.lift_relation_check(lc, lr, sc.metric).max()))
        hs.append(grid.h)
    rows = [("max_residual", res[0], "", True)]
    table = [[hs[0], res[0], ""]]
    for level in range(1, halvings + 1):
        ratio = res[level] / res[level - 1] if res[level - 1] > 0 else np.nan
        rows.append((f"ratio_{level}", ratio, f"[{lo:.4g}, {hi:.4g}]", bool(lo <= ratio <= hi)))
        table.append([hs[level], res[level], ratio])
    return AnalysisResult("lift_relation", rows, {"lift_relation.csv": (["h", "max_residual", "ratio"], table)})


def arbitrary_frames(path, e0: np.ndarray, amplitude: float = 0.2) -> np.ndarray:
    """A smooth non-horizontal frame path ẽ_k = e0 (I + a sin(φ_k) N), starting at e0.

    φ_k = (t_k − t_0) + Σ_i (x^i_k − x^i_0) and N is a fixed matrix of norm ≤ 1.
    """
    d = path.dim
    nmat = np.eye(d) if d == 1 else (np.eye(d) + np.diag(np.ones(d - 1), 1) - np.diag(np.ones(d - 1), -1)) / 2.0
    phi = (path.grid.times - path.grid.t0)[:, None] + (path.x - path.x[0]).sum(axis=-1)
    mod = np.eye(d) + amplitude * np.sin(phi)[..., None, None] * nmat
    return np.broadcast_to(e0, path.x.shape[:2] + (d, d)) @ mod


def gprocess_discrepancy(sc: Scenario, path) -> dict:
    out = {}
    flavors = [FR.CONNECTION] + ([FR.RIEMANN] if sc.metric is not None else [])
    for flavor in flavors:
        if flavor == FR.CONNECTION:
            direct = FR.horizontal_lift(path, sc.connection)
            geo = sc.connection
        else:
            direct = FR.riemann_horizontal_lift(path, sc.metric)
            geo = sc.metric
        et = arbitrary_frames(path, direct.e[0])
        lifted = FR.g_process_lift(path, geo, et, flavor)
        out[flavor] = float(max(np.max(np.abs(lifted.e - direct.e)), np.max(np.abs(lifted.z - direct.z))))
    return out


def _gprocess(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    tol = params.get("tolerance", 1e-6)
    path = sc.simulate(np.arange(params.get("paths", min(sc.n_paths, 8))))
    disc = gprocess_discrepancy(sc, path)
    rows = [(f"max_node_error_{k}", v, f"<= {tol}", v <= tol) for k, v in disc.items()]
    return AnalysisResult("gprocess_crosscheck", rows)


def _heat_solution(ctx: _Context) -> H.HeatSolution:
    if "heat" not in ctx.cache:
        sc = ctx.scenario
        heat = sc.doc["heat"]
        ctx.cache["heat"] = H.solve_heat_1d(
            sc.metric, heat["u_init"], heat["T1"], heat["T2"], heat.get("n_theta", 256), period=sc.domain.period
        )
    return ctx.cache["heat"]


def _heat(ctx: _Context, params: dict) -> AnalysisResult:
    sol = _heat_solution(ctx)
    rows = [("time_steps", sol.times.size - 1, "", True)]
    if "oracle" in params:
        oracle = F.as_field(params["oracle"], 1)
        exact = oracle(float(sol.times[-1]), sol.theta[:, None])
        err = float(np.max(np.abs(sol.values[-1] - exact)))
        tol = params.get("tolerance", 1e-3)
        rows.append(("max_error_vs_oracle", err, f"<= {tol}", err <= tol))
    every = params.get("csv_every", max(1, (sol.times.size - 1) // 20))
    table = [
        [sol.times[k], th, sol.values[k, j]]
        for k in range(0, sol.times.size, every)
        for j, th in enumerate(sol.theta)
    ]
    return AnalysisResult("heat", rows, {"heat_solution.csv": (["t", "theta", "u"], table)})


def _representation(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    sol = _heat_solution(ctx)
    res = H.representation_check(
        sc.metric,
        sol,
        params.get("x", 0.7),
        params.get("v", 1.0),
        params.get("paths", sc.n_paths),
        sc.seed,
        sc.grid.n,
        params.get("tolerance", 2e-3),
        ctx.workers,
        sc.chunk,
    )
    bound = 3.0 * res.stderr + res.tolerance
    rows = [("abs_difference", abs(res.lhs - res.rhs), f"<= {bound:.6g}", res.consistent)]
    row = res.row()
    files = {"representation.csv": (list(row), [list(row.values())])}
    return AnalysisResult("representation", rows, files)


def _liouville(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    sol = _heat_solution(ctx)
    res = H.liouville_bound_check(sc.metric, sol, params.get("K", 1.0))
    rows = [("observed_ratio", res.observed, f"<= {res.bound * 1.005:.6g}", res.holds)]
    files = {"liouville.csv": (["observed", "bound", "min_eigenvalue", "holds"], [[res.observed, res.bound, res.min_eigenvalue, res.holds]])}
    return AnalysisResult("liouville", rows, files)


def roundtrip_error(sc: Scenario, paths: int = 4, horizon: Optional[float] = None, steps: Optional[int] = None) -> float:
    """sup |develop(antidevelopment(L)) − L| over nodes, for every lift flavor available."""
    span = sc.grid.T - sc.grid.t0
    horizon = min(span, 1.0) if horizon is None else horizon
    steps = min(sc.grid.n, 200) if steps is None else steps
    grid = TimeGrid(sc.grid.t0, sc.grid.t0 + horizon, steps)
    ids = np.arange(paths)
    if sc.process is not None:
        path = sc.simulate(ids, grid)
    else:
        from tempogeo.sde import BrownianDriver

        x0 = np.zeros(sc.dim)
        path = H.gt_brownian_motion(sc.metric, x0, BrownianDriver(sc.seed, sc.dim, grid), ids)[0]
    worst = 0.0
    lifts = [(FR.horizontal_lift(path, sc.connection), sc.connection, FR.CONNECTION)]
    if sc.metric is not None:
        lifts.append((FR.riemann_horizontal_lift(path, sc.metric), sc.metric, FR.RIEMANN))
    for lift, geo, flavor in lifts:
        back = FR.develop(lift.dz, lift.e[0], lift.x[0], geo, grid, flavor)
        worst = max(worst, float(np.max(np.abs(back.x - lift.x))), float(np.max(np.abs(back.e - lift.e))))
    return worst


def _roundtrip(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    tol = params.get("tolerance", 1e-9)
    err = roundtrip_error(sc, params.get("paths", 4), params.get("horizon"), params.get("steps"))
    return AnalysisResult("roundtrip", [("sup_error", err, f"<= {tol}", err <= tol)])


def _damped(ctx: _Context, params: dict) -> AnalysisResult:
    sc = ctx.scenario
    agree_tol = params.get("agreement", 5e-3)
    rate = params.get("decay_rate")
    tol = params.get("tolerance", 1e-3)

    def run(path):
        brown = FR.damped_transport(path, sc.metric, "brownian")
        general = FR.damped_transport(path, sc.metric, "general")
        diff = np.max(np.abs(brown.theta - general.theta), axis=(0, 2, 3))
        norm = operator_norm(brown.theta[-1], sc.metric(sc.grid.t0, path.x[0]), sc.metric(sc.grid.T, path.x[-1]))
        return diff, norm

    parts = sc.simulate_chunks(params.get("paths", min(sc.n_paths, 100)), run, ctx.workers)
    diff = np.concatenate([p[0] for p in parts])
    norm = np.concatenate([p[1] for p in parts])
    rows = [("max_form_disagreement", float(diff.max()), f"<= {agree_tol}", bool(diff.max() <= agree_tol))]
    if rate is not None:
        target = float(np.exp(-rate * (sc.grid.T - sc.grid.t0) / 2.0))
        err = float(np.max(np.abs(norm - target)))
        rows.append(("max_norm_error", err, f"<= {tol} (target {target:.6g})", err <= tol))
    table = [[i, a, b] for i, (a, b) in enumerate(zip(norm, diff))]
    return AnalysisResult("damped_transport", rows, {"damped_transport.csv": (["path", "norm", "form_disagreement"], table)})


ANALYSES: dict[str, Callable] = {
    "test_antidevelopment": lambda ctx, p: _martingale(ctx, p, "test_antidevelopment"),
    "test_hessian": lambda ctx, p: _martingale(ctx, p, "test_hessian"),
    "intrinsic_qv": _intrinsic_qv,
    "orthonormality": _orthonormality,
    "transport_oracle": _transport_oracle,
    "counterexample_qv": _counterexample_qv,
    "lift_relation": _lift_relation,
    "gprocess_crosscheck": _gprocess,
    "heat": _heat,
    "representation": _representation,
    "liouville": _liouville,
    "roundtrip": _roundtrip,
    "damped_transport": _damped,
}


def run(doc: dict, seed: Optional[int] = None, workers: int = 1, out: Optional[str] = None, write: bool = True) -> RunReport:
    """Execute every analysis of a scenario document and write its CSVs."""
    start = time.perf_counter()
    doc = resolve(doc, seed)
    sc = Scenario.from_doc(doc)
    ctx = _Context(sc, workers)
    results = [ANALYSES[a["type"]](ctx, a) for a in doc["analysis"]]
    report = RunReport(sc.name, sc.seed, config_hash(doc), results)
    if write:
        out = out or doc.get("output") or os.path.join("runs", sc.name)
        os.makedirs(out, exist_ok=True)
        used = set()
        for r in results:
            for name, (header, rows) in r.files.items():
                fname = name if name not in used else f"{len(used)}_{name}"
                used.add(fname)
                write_csv(os.path.join(out, fname), header, rows)
        write_csv(
            os.path.join(out, "summary.csv"),
            ["scenario", "analysis", "quantity", "value", "reference", "status"],
            report.summary_rows(),
        )
        meta = {"scenario": sc.name, "seed": sc.seed, "config_hash": report.config_hash, "passed": report.passed}
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    report.wall_time = time.perf_counter() - start
    return report
