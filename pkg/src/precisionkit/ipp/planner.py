"""Greedy receding-horizon planner over a multi-altitude waypoint lattice."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .grid import GridMap, SensorModel, Waypoint, footprint_cells

SCORE_RTOL = 1e-9
COST_ATOL = 1e-9


@dataclass
class Lattice:
    """Candidate waypoints with their footprints stored as padded flat cell indices.

    Padding points at an extra slot past the last cell, whose variance is
    always zero, so it contributes no gain.
    """

    waypoints: list
    positions: np.ndarray
    footprints: np.ndarray
    variances: np.ndarray
    n_cells: int

    def __len__(self):
        return len(self.waypoints)


def build_lattice(grid: GridMap, sensor: SensorModel, spacing=2, no_fly=None, levels=None) -> Lattice:
    """Waypoints over cell centres every ``spacing`` cells at each altitude level.

    ``no_fly`` is a boolean ``(height, width)`` mask; cells set there never
    host a waypoint (their ground can still be seen from neighbours).
    """
    if spacing < 1:
        raise ValidationError("lattice spacing must be at least one cell")
    levels = range(sensor.levels) if levels is None else levels
    start = spacing // 2
    cs = grid.cell_size
    wps = []
    for level in levels:
        sensor.check_level(level)
        for i in range(start, grid.height, spacing):
            for j in range(start, grid.width, spacing):
                if no_fly is not None and no_fly[i, j]:
                    continue
                wps.append(Waypoint((j + 0.5) * cs, (i + 0.5) * cs, level))
    if not wps:
        raise ValidationError("lattice is empty")
    return lattice_from_waypoints(grid, sensor, wps)


def lattice_from_waypoints(grid: GridMap, sensor: SensorModel, waypoints) -> Lattice:
    waypoints = list(waypoints)
    n_cells = grid.width * grid.height
    cells = []
    for wp in waypoints:
        sensor.check_level(wp.level)
        rows, cols = footprint_cells(grid.width, grid.height, grid.cell_size, wp.x, wp.y,
                                     sensor.footprint_radius[wp.level])
        cells.append(rows * grid.width + cols)
    width = max(1, max(c.size for c in cells))
    fp = np.full((len(waypoints), width), n_cells, dtype=np.int64)
    for k, c in enumerate(cells):
        fp[k, :c.size] = c
    pos = np.array([wp.position(sensor) for wp in waypoints])
    r = np.array([sensor.measurement_variance[wp.level] for wp in waypoints])
    return Lattice(waypoints, pos, fp, r, n_cells)


def candidate_gains(variance_flat: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Exact variance reduction of a single capture at every lattice point."""
    v = np.append(variance_flat, 0.0)[lattice.footprints]
    r = lattice.variances[:, None]
    return np.sum(v * v / (v + r), axis=1)


def select_best(scores, costs, eligible):
    """Index of the best eligible candidate, or ``None``.

    Highest score wins; near-equal scores go to the cheaper candidate, then
    to the lower index.
    """
    idx = np.flatnonzero(eligible)
    if idx.size == 0:
        return None
    s = scores[idx]
    best = s.max()
    near = idx[s >= best - SCORE_RTOL * max(abs(best), 1e-300)]
    c = costs[near]
    near = near[c <= c.min() + COST_ATOL]
    return int(near.min())


@dataclass
class PlannedPath:
    waypoints: list = field(default_factory=list)
    indices: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    status: str = "ok"

    @property
    def cost(self) -> float:
        return float(sum(self.costs))

    @property
    def gain(self) -> float:
        return float(sum(self.gains))

    def __len__(self):
        return len(self.waypoints)


def plan_path(grid: GridMap, pose: Waypoint, sensor: SensorModel, budget: float, horizon: int,
              lattice: Lattice, max_leg: float = np.inf) -> PlannedPath:
    """Greedy sequence of up to ``horizon`` waypoints maximizing gain per metre.

    Each choice updates a virtual variance map before the next. The path stops
    early once nothing affordable offers a positive gain. When the very first
    step has no affordable waypoint the status is ``budget_exhausted``.
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    if len(lattice) == 0:
        raise ValidationError("lattice is empty")
    var = grid.variance.ravel().copy()
    here = pose.position(sensor)
    remaining = float(budget)
    out = PlannedPath()
    for step in range(horizon):
        costs = np.linalg.norm(lattice.positions - here, axis=1)
        reachable = (costs > 0) & (costs <= min(remaining, max_leg))
        if not reachable.any():
            if step == 0:
                out.status = "budget_exhausted"
            break
        gains = candidate_gains(var, lattice)
        scores = np.where(costs > 0, gains / np.where(costs > 0, costs, 1.0), 0.0)
        k = select_best(scores, costs, reachable & (gains > 0))
        if k is None:
            if step == 0:
                out.status = "no_gain"
            break
        cells = lattice.footprints[k]
        cells = cells[cells < lattice.n_cells]
        v, r = var[cells], lattice.variances[k]
        var[cells] = v * r / (v + r)
        out.waypoints.append(lattice.waypoints[k])
        out.indices.append(k)
        out.gains.append(float(gains[k]))
        out.costs.append(float(costs[k]))
        remaining -= costs[k]
        here = lattice.positions[k]
    return out
