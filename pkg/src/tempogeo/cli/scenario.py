"""Turn a validated scenario document into geometry, grid and path simulators."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from tempogeo.frame import riemann_horizontal_lift
from tempogeo.geometry import ConnectionFamily, Domain, MetricFamily
from tempogeo.heatlab import gt_brownian_motion
from tempogeo.parallel import map_chunks
from tempogeo.sde import BrownianDriver, SemimartingalePath, TimeGrid, integrate_sde


class ConfigError(Exception):
    """Invalid scenario; carries the diagnostics list."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


def _domain(manifold: dict) -> Domain:
    kind = manifold.get("domain", "euclidean")
    if kind == "euclidean":
        return Domain()
    return Domain(float(manifold.get("period", 2.0 * np.pi)))


@dataclass
class Scenario:
    doc: dict
    name: str
    dim: int
    domain: Domain
    metric: Optional[MetricFamily]
    connection: ConnectionFamily
    grid: TimeGrid
    n_paths: int
    seed: int
    chunk: int
    process: Optional[dict]

    @classmethod
    def from_doc(cls, doc: dict) -> "Scenario":
        from tempogeo.cli.schema import diagnostics

        diags = diagnostics(doc)
        if diags:
            raise ConfigError(diags)
        doc = copy.deepcopy(doc)
        d = doc["manifold"]["dim"]
        domain = _domain(doc["manifold"])
        geo = doc["geometry"]
        if "metric" in geo:
            metric = MetricFamily(geo["metric"], domain)
            connection = ConnectionFamily.levi_civita(metric)
        else:
            metric = None
            connection = ConnectionFamily.explicit(geo["christoffel"], domain)
        g = doc["grid"]
        grid = TimeGrid(float(g.get("t0", 0.0)), float(g["T"]), int(g["n"]))
        ens = doc["ensemble"]
        return cls(
            doc,
            doc["name"],
            d,
            domain,
            metric,
            connection,
            grid,
            int(ens["N"]),
            int(ens["seed"]),
            int(ens.get("chunk", 500)),
            doc.get("process"),
        )

    @property
    def brownian(self) -> bool:
        return self.process is not None and self.process["kind"] == "gt_brownian"

    @property
    def noise_dim(self) -> int:
        if self.brownian:
            return self.dim
        return len(self.process["diffusion"][0])

    def simulate(self, path_ids, grid: Optional[TimeGrid] = None) -> SemimartingalePath:
        """Paths of the scenario process on ``grid`` (default: the scenario grid)."""
        if self.process is None:
            raise ConfigError(["$.process: this analysis needs a process"])
        grid = self.grid if grid is None else grid
        driver = BrownianDriver(self.seed, self.noise_dim, grid)
        x0 = self.process["x0"]
        if self.brownian:
            return gt_brownian_motion(self.metric, x0, driver, path_ids)[0]
        return integrate_sde(
            self.process["drift"],
            self.process["diffusion"],
            x0,
            driver,
            path_ids,
            self.process.get("convention", "ito"),
            self.domain,
        )

    def riemann_lift(self, path_ids, grid: Optional[TimeGrid] = None):
        """Paths with their Riemann-horizontal lift.

        A g(t)-Brownian motion is built by development, which already yields the
        lift of the path it produces; other processes are lifted afterwards.
        """
        grid = self.grid if grid is None else grid
        if self.brownian:
            driver = BrownianDriver(self.seed, self.noise_dim, grid)
            return gt_brownian_motion(self.metric, self.process["x0"], driver, path_ids)
        path = self.simulate(path_ids, grid)
        return path, riemann_horizontal_lift(path, self.metric)

    def simulate_chunks(self, n_paths: int, fn, workers: int = 1, grid: Optional[TimeGrid] = None) -> list:
        """Apply ``fn(path)`` to fixed-size chunks of simulated paths, in chunk order."""
        return map_chunks(lambda ids: fn(self.simulate(ids, grid)), np.arange(n_paths), self.chunk, workers)


def resolve(doc: Any, seed: Optional[int] = None) -> dict:
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc.setdefault("ensemble", {})["seed"] = int(seed)
    return doc
