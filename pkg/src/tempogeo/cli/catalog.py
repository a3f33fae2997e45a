"""Built-in scenarios."""

from __future__ import annotations

import copy

_BM1 = {"kind": "sde", "x0": [0.0], "drift": ["0"], "diffusion": [["1"]]}
_CIRCLE = {"dim": 1, "domain": "circle", "period": 6.283185307179586}

_BUILTINS = [
    {
        "name": "example55",
        "description": "Unit-noise diffusion on the line with metric e^x dx^2 and the compensating drift -1/4; both drift tests should be consistent",
        "anchor": "example: martingales of a conformal metric on the line, drift -(log u)'σ²/4",
        "manifold": {"dim": 1},
        "geometry": {"metric": [["exp(x1)"]]},
        "process": {"kind": "sde", "x0": [0.0], "drift": ["-0.25"], "diffusion": [["1"]]},
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 10000, "seed": 20240601, "chunk": 1000},
        "analysis": [
            {"type": "test_antidevelopment", "expect": "consistent"},
            {"type": "test_hessian", "expect": "consistent"},
        ],
    },
    {
        "name": "example55_wrongdrift",
        "description": "Same metric u = e^x with the drift removed (b = 0); both drift tests should reject",
        "anchor": "example: exponential metric on the line, drift omitted",
        "manifold": {"dim": 1},
        "geometry": {"metric": [["exp(x1)"]]},
        "process": {"kind": "sde", "x0": [0.0], "drift": ["0"], "diffusion": [["1"]]},
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 10000, "seed": 20240601, "chunk": 1000},
        "analysis": [
            {"type": "test_antidevelopment", "expect": "rejected", "min_statistic": 5},
            {"type": "test_hessian", "expect": "rejected", "min_statistic": 5},
        ],
    },
    {
        "name": "counterexample62",
        "description": "Metric e^{a(t)x}dx^2 with a = e^{2t} and noise e^{-t/2}: the g0 quadratic variation stays near ∫e^{-t}dt while the mean displacement drifts to about -(e^5-1)/4",
        "anchor": "counterexample: time-dependent exponential metric, finite bracket but divergent process",
        "manifold": {"dim": 1},
        "geometry": {"metric": [["exp(exp(2*t)*x1)"]]},
        "process": {
            "kind": "sde",
            "x0": [0.0],
            "drift": ["-0.25*exp(2*t)*exp(-t)"],
            "diffusion": [["exp(-t/2)"]],
        },
        "grid": {"t0": 0.0, "T": 5.0, "n": 200000},
        "ensemble": {"N": 1000, "seed": 20240602, "chunk": 1000},
        "analysis": [
            {"type": "counterexample_qv", "g0_qv": [0.9, 1.05], "displacement": [None, -30.0]},
        ],
    },
    {
        "name": "counterexample63",
        "description": "Shrinking metric u(t) = e^{-t} along a standard Brownian motion: ∫_0^t g(s)(dX_s,dX_s) = ∫_0^t u(s) ds stays below 1 while the g0 bracket grows like t",
        "anchor": "counterexample: ∫_0^t g(s)(dX_s,dX_s) = ∫_0^t u(s) ds",
        "manifold": {"dim": 1},
        "geometry": {"metric": [["exp(-t)"]]},
        "process": dict(_BM1),
        "grid": {"t0": 0.0, "T": 10.0, "n": 1000},
        "ensemble": {"N": 1000, "seed": 20240603},
        "analysis": [
            {"type": "counterexample_qv", "g_qv": [0.9, 1.05], "g0_qv": [9.5, 10.5]},
            {"type": "intrinsic_qv", "bilinear": "metric", "expected": 0.99995460007023751, "tolerance": 0.05},
        ],
    },
    {
        "name": "orthonormality2d",
        "description": "Riemann-horizontal frames for g = e^{2t}I on the plane stay g(t)-orthonormal; the defect halves with the step",
        "anchor": "proposition: Riemann-horizontal frames are g(t)-orthonormal at every time",
        "manifold": {"dim": 2},
        "geometry": {"metric": [["exp(2*t)", "0"], ["0", "exp(2*t)"]]},
        "process": {"kind": "gt_brownian", "x0": [0.0, 0.0]},
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 20, "seed": 20240604},
        "analysis": [
            {"type": "orthonormality", "halvings": 3, "max_defect": 0.02, "ratio_range": [0.33, 0.67]},
        ],
    },
    {
        "name": "transport1d",
        "description": "Parallel transport on the line with metric e^x against the closed form sqrt(u(X_0)/u(X_T))",
        "anchor": "parallel transport //_{0,t} = U_t U_0^{-1}, one-dimensional closed form",
        "manifold": {"dim": 1},
        "geometry": {"metric": [["exp(x1)"]]},
        "process": dict(_BM1),
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 100, "seed": 20240605},
        "analysis": [{"type": "transport_oracle", "tolerance": 1e-3}],
    },
    {
        "name": "lift_relation",
        "description": "Connection and Riemann-horizontal lifts of the same path differ by the frame rotation driven by ∂g/∂t; the residual falls at first order",
        "anchor": "Riemann-horizontal lift versus horizontal lift, vertical correction -½∂g/∂t",
        "manifold": {"dim": 1},
        "geometry": {"metric": [["exp(t+x1)"]]},
        "process": dict(_BM1),
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 20, "seed": 20240606},
        "analysis": [{"type": "lift_relation", "halvings": 1, "ratio_range": [0.16666666666666666, 0.4]}],
    },
    {
        "name": "gprocess_crosscheck",
        "description": "Lift obtained by correcting a non-horizontal frame path with the G-process, compared with the direct lift on an evolving sphere",
        "anchor": "horizontal lift as ẽ·G with G solving the gauge equation",
        "manifold": {"dim": 2},
        "geometry": {
            "metric": [
                ["4*exp(t)/(1+x1^2+x2^2)^2", "0"],
                ["0", "4*exp(t)/(1+x1^2+x2^2)^2"],
            ]
        },
        "process": {
            "kind": "sde",
            "x0": [0.1, 0.2],
            "drift": ["0", "0"],
            "diffusion": [["0.5", "0"], ["0", "0.5"]],
        },
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 8, "seed": 20240607},
        "analysis": [{"type": "gprocess_crosscheck", "tolerance": 1e-6}],
    },
    {
        "name": "heat_circle",
        "description": "Heat equation ∂u/∂t = ½Δ_{g(t)}u on the circle with g = e^t dθ², against exp(-(1-e^{-t})/2) sin θ",
        "anchor": "heat equation for a time-dependent metric",
        "manifold": _CIRCLE,
        "geometry": {"metric": [["exp(t)"]]},
        "heat": {"u_init": "sin(x1)", "T1": 0.0, "T2": 1.0, "n_theta": 256},
        "grid": {"t0": 0.0, "T": 1.0, "n": 200},
        "ensemble": {"N": 2, "seed": 20240608},
        "analysis": [{"type": "heat", "oracle": "exp(-0.5*(1-exp(-t)))*sin(x1)", "tolerance": 1e-3}],
    },
    {
        "name": "representation_circle",
        "description": "Derivative of the heat solution at (T2, x) against the expectation of du along damped transport of a g(t)-Brownian motion run backwards",
        "anchor": "representation of the differential through damped transport",
        "manifold": _CIRCLE,
        "geometry": {"metric": [["exp(t)"]]},
        "heat": {"u_init": "sin(x1)", "T1": 0.0, "T2": 1.0, "n_theta": 256},
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 10000, "seed": 20240609, "chunk": 1000},
        "analysis": [{"type": "representation", "x": 0.7, "v": 1.0, "tolerance": 2e-3}],
    },
    {
        "name": "liouville_circle",
        "description": "Gradient decay of the heat flow under super Ricci flow with K = 1 over a horizon of 2",
        "anchor": "theorem: |du(T2)| ≤ e^{-K(T2-T1)/2} sup |du(T1)| under super Ricci flow",
        "manifold": _CIRCLE,
        "geometry": {"metric": [["exp(t)"]]},
        "heat": {"u_init": "sin(x1)", "T1": 0.0, "T2": 2.0, "n_theta": 256},
        "grid": {"t0": 0.0, "T": 2.0, "n": 200},
        "ensemble": {"N": 2, "seed": 20240610},
        "analysis": [{"type": "liouville", "K": 1.0}],
    },
    {
        "name": "damped_circle",
        "description": "Damped transport on the circle for ĝ(t) = e^{-t}dθ²: norm e^{-1/2} at time 1, general and Brownian forms agree",
        "anchor": "damped parallel transport, exponential decay under super Ricci flow",
        "manifold": _CIRCLE,
        "geometry": {"metric": [["exp(-t)"]]},
        "process": {"kind": "gt_brownian", "x0": [0.0]},
        "grid": {"t0": 0.0, "T": 1.0, "n": 1000},
        "ensemble": {"N": 100, "seed": 20240611},
        "analysis": [{"type": "damped_transport", "decay_rate": 1.0, "tolerance": 1e-3, "agreement": 5e-3}],
    },
    {
        "name": "damped_sphere",
        "description": "General and Brownian forms of damped transport agree on a shrinking sphere of radius 4",
        "anchor": "damped parallel transport with curvature and ∂g/∂t",
        "manifold": {"dim": 2},
        "geometry": {
            "metric": [
                ["4*(16-2*t)/(1+x1^2+x2^2)^2", "0"],
                ["0", "4*(16-2*t)/(1+x1^2+x2^2)^2"],
            ]
        },
        "process": {"kind": "gt_brownian", "x0": [0.0, 0.0]},
        "grid": {"t0": 0.0, "T": 0.5, "n": 500},
        "ensemble": {"N": 100, "seed": 20240612},
        "analysis": [{"type": "damped_transport", "agreement": 5e-3}],
    },
]

BUILTINS = {s["name"]: s for s in _BUILTINS}


def names() -> list[str]:
    return list(BUILTINS)


def get(name: str) -> dict:
    return copy.deepcopy(BUILTINS[name])
