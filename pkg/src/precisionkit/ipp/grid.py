"""Occupancy map with per-cell Kalman fusion and a Bernoulli detector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BoundaryError, DimensionError, ValidationError


@dataclass
class GridMap:
    """Per-cell occupancy estimate (``mean``) and its variance, indexed ``[row, col]``.

    Row ``i`` spans ``y`` in ``[i, i+1) * cell_size``; column ``j`` spans ``x``.
    """

    width: int
    height: int
    cell_size: float
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        shape = (self.height, self.width)
        if self.mean.shape != shape or self.variance.shape != shape:
            raise DimensionError(f"mean and variance must have shape {shape}")
        if self.cell_size <= 0:
            raise ValidationError("cell_size must be positive")
        if not np.all(self.variance > 0):
            raise ValidationError("variance must be positive everywhere")

    @classmethod
    def uniform(cls, width, height, cell_size=1.0, mean=0.5, variance=0.25) -> "GridMap":
        return cls(width, height, cell_size, np.full((height, width), float(mean)),
                   np.full((height, width), float(variance)))

    @property
    def extent(self):
        return self.width * self.cell_size, self.height * self.cell_size

    def copy(self) -> "GridMap":
        return GridMap(self.width, self.height, self.cell_size, self.mean.copy(), self.variance.copy())

    def trace(self) -> float:
        """Sum of cell variances (trace of the diagonal covariance)."""
        return float(self.variance.sum())

    def mean_variance(self) -> float:
        return float(self.variance.mean())

    def classify(self, threshold=0.5) -> np.ndarray:
        return self.mean >= threshold

    def cell_centers(self):
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return (xs + 0.5) * self.cell_size, (ys + 0.5) * self.cell_size


@dataclass(frozen=True)
class SensorModel:
    """Downward camera plus detector; index ``k`` of each tuple is altitude level ``k``."""

    footprint_radius: tuple = (2.0, 4.0, 6.0)
    measurement_variance: tuple = (0.05, 0.10, 0.15)
    level_height: tuple = (5.0, 10.0, 15.0)
    false_positive_rate: float = 0.05
    false_negative_rate: float = 0.05

    def __post_init__(self):
        n = len(self.footprint_radius)
        if n == 0 or len(self.measurement_variance) != n or len(self.level_height) != n:
            raise ValidationError("per-level tuples must be non-empty and of equal length")
        if any(r < 0 for r in self.footprint_radius):
            raise ValidationError("footprint radius must be non-negative")
        if any(not v > 0 for v in self.measurement_variance):
            raise ValidationError("measurement variance must be positive")
        for rate in (self.false_positive_rate, self.false_negative_rate):
            if not 0 <= rate < 0.5:
                raise ValidationError("detector error rates must lie in [0, 0.5)")

    @property
    def levels(self) -> int:
        return len(self.footprint_radius)

    def check_level(self, level):
        if not 0 <= level < self.levels:
            raise ValidationError(f"altitude level {level} not in 0..{self.levels - 1}")


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    level: int

    def position(self, sensor: SensorModel) -> np.ndarray:
        return np.array([self.x, self.y, sensor.level_height[self.level]])


def travel_cost(a: Waypoint, b: Waypoint, sensor: SensorModel) -> float:
    """Straight-line flight distance in metres, altitude change included."""
    return float(np.linalg.norm(a.position(sensor) - b.position(sensor)))


def path_cost(start: Waypoint, path, sensor: SensorModel) -> float:
    total, here = 0.0, start
    for wp in path:
        total += travel_cost(here, wp, sensor)
        here = wp
    return total


@dataclass(frozen=True)
class Measurement:
    cell: tuple
    value: float
    variance: float


def _check_pose(pose: Waypoint, width, height, cell_size):
    if not (0 <= pose.x <= width * cell_size and 0 <= pose.y <= height * cell_size):
        raise BoundaryError(f"pose ({pose.x}, {pose.y}) outside the world")


def footprint_cells(width, height, cell_size, x, y, radius):
    """Row and column indices of cells whose centres lie within ``radius`` of ``(x, y)``."""
    reach = int(np.ceil(radius / cell_size)) + 1
    cx, cy = int(np.floor(x / cell_size)), int(np.floor(y / cell_size))
    cols = np.arange(max(cx - reach, 0), min(cx + reach + 1, width))
    rows = np.arange(max(cy - reach, 0), min(cy + reach + 1, height))
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    d2 = ((cc + 0.5) * cell_size - x) ** 2 + ((rr + 0.5) * cell_size - y) ** 2
    keep = d2 <= radius * radius + 1e-12
    return rr[keep], cc[keep]


def observe(truth, pose: Waypoint, sensor: SensorModel, seed, cell_size=1.0, forced=None):
    """Simulated detections for every cell in the footprint of ``pose``.

    ``seed`` may be an integer or a ``numpy`` Generator. ``forced`` maps cells
    to a detection value that overrides the draw (used to stage spurious
    detections).
    """
    truth = np.asarray(truth)
    if truth.ndim != 2:
        raise DimensionError("ground truth must be a 2-D grid")
    height, width = truth.shape
    sensor.check_level(pose.level)
    _check_pose(pose, width, height, cell_size)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rows, cols = footprint_cells(width, height, cell_size, pose.x, pose.y, sensor.footprint_radius[pose.level])
    occupied = truth[rows, cols].astype(bool)
    u = rng.random(rows.size)
    hit = np.where(occupied, u >= sensor.false_negative_rate, u < sensor.false_positive_rate)
    r = sensor.measurement_variance[pose.level]
    out = []
    for i, j, h in zip(rows.tolist(), cols.tolist(), hit.tolist()):
        value = float(h)
        if forced is not None and (i, j) in forced:
            value = float(forced[(i, j)])
        out.append(Measurement((i, j), value, r))
    return out


def fuse_measurement(grid: GridMap, measurements) -> GridMap:
    """Scalar Kalman update of each observed cell; returns a new map."""
    new = grid.copy()
    for m in measurements:
        i, j = m.cell
        if not (0 <= i < grid.height and 0 <= j < grid.width):
            raise BoundaryError(f"cell {m.cell} outside the map")
        if not m.variance > 0:
            raise ValidationError("measurement variance must be positive")
        var = new.variance[i, j]
        if np.isinf(m.variance):
            continue
        # weighted average form of mean + K (z - mean); avoids cancellation near 0 and 1
        mean = (m.variance * new.mean[i, j] + var * m.value) / (var + m.variance)
        new.mean[i, j] = min(max(mean, 0.0), 1.0)
        new.variance[i, j] = var * m.variance / (var + m.variance)
    return new


def expected_precision_gain(grid: GridMap, candidate_path, sensor: SensorModel) -> float:
    """Drop in total map variance if every waypoint of ``candidate_path`` were observed.

    The variance recursion does not depend on the measured values, so this is exact.
    """
    var = grid.variance.copy()
    gain = 0.0
    for wp in candidate_path:
        sensor.check_level(wp.level)
        rows, cols = footprint_cells(grid.width, grid.height, grid.cell_size, wp.x, wp.y,
                                     sensor.footprint_radius[wp.level])
        r = sensor.measurement_variance[wp.level]
        v = var[rows, cols]
        gain += float(np.sum(v * v / (v + r)))
        var[rows, cols] = v * r / (v + r)
    return gain
