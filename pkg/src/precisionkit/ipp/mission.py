"""Mission loop: plan, fly, capture and fuse until the map is certain or the budget runs out."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .grid import GridMap, SensorModel, Waypoint, fuse_measurement, observe, travel_cost
from .planner import build_lattice, plan_path

PERCEPTION = "perception"
ACTION = "action"
SCHEDULER_MODES = ("cycles", "oscillatory")


@dataclass(frozen=True)
class SchedulerConfig:
    """Oscillatory precision gate ``base + amplitude * sin(2 pi frequency t)``.

    In ``cycles`` mode the gate is ignored and the mission alternates a whole
    flight leg with one capture. ``ticks_per_period`` sets the time step of
    the oscillatory simulation.
    """

    mode: str = "cycles"
    base: float = 1.0
    amplitude: float = 1.0
    frequency: float = 4.0
    threshold: float = 1.0
    ticks_per_period: int = 40

    def __post_init__(self):
        if self.mode not in SCHEDULER_MODES:
            raise ValidationError(f"scheduler mode must be one of {SCHEDULER_MODES}")
        if self.amplitude < 0:
            raise ValidationError("amplitude must be non-negative")
        if not self.frequency > 0:
            raise ValidationError("frequency must be positive")
        if self.ticks_per_period < 2:
            raise ValidationError("need at least two ticks per period")


def precision_signal(t: float, cfg: SchedulerConfig) -> float:
    return cfg.base + cfg.amplitude * math.sin(2.0 * math.pi * cfg.frequency * t)


def precision_scheduler(t: float, cfg: SchedulerConfig) -> str:
    """``perception`` while the precision signal is at or above threshold, else ``action``."""
    return PERCEPTION if precision_signal(t, cfg) >= cfg.threshold else ACTION


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 5
    lattice_spacing: int = 2
    max_leg: float = math.inf


@dataclass(frozen=True)
class StopConfig:
    variance_threshold: float = 0.005
    budget: float = 5000.0
    max_time: float = math.inf
    max_cycles: int = 100000


@dataclass
class MissionState:
    map: GridMap
    ground_truth: np.ndarray
    pose: Waypoint
    budget_remaining: float
    log: list = field(default_factory=list)
    phase: str = PERCEPTION
    precision_signal: float = 0.0
    time: float = 0.0


@dataclass
class MissionResult:
    state: MissionState
    metrics: dict


def confusion_counts(grid: GridMap, truth, threshold=0.5) -> dict:
    pred = grid.classify(threshold)
    truth = np.asarray(truth).astype(bool)
    return {
        "tp": int(np.sum(pred & truth)), "fp": int(np.sum(pred & ~truth)),
        "tn": int(np.sum(~pred & ~truth)), "fn": int(np.sum(~pred & truth)),
    }


class _Tracker:
    """Bookkeeping shared by both mission modes."""

    def __init__(self, state, sensor, truth, rng, cell_size, spurious, stop):
        self.state, self.sensor, self.truth, self.rng = state, sensor, truth, rng
        self.cell_size, self.stop = cell_size, stop
        self.spurious = {tuple(c): {"visits": 0, "first_class": None} for c in spurious}
        self.fusion_trace = []
        self.cycle_trace = []
        self.path_length = 0.0

    def capture(self, t):
        forced = {c: 1.0 for c, info in self.spurious.items() if info["visits"] == 0}
        ms = observe(self.truth, self.state.pose, self.sensor, self.rng, self.cell_size, forced=forced)
        if not ms:
            return False
        self.state.map = fuse_measurement(self.state.map, ms)
        seen = {m.cell for m in ms}
        for c, info in self.spurious.items():
            if c in seen:
                info["visits"] += 1
                if info["first_class"] is None:
                    info["first_class"] = bool(self.state.map.mean[c] >= 0.5)
        trace = self.state.map.trace()
        self.fusion_trace.append(trace)
        self.state.log.append({"event": "fusion", "t": t, "phase": self.state.phase, "cells": len(ms),
                               "x": self.state.pose.x, "y": self.state.pose.y, "level": self.state.pose.level,
                               "trace": trace})
        return True

    def move(self, t, new_pose, distance):
        old = self.state.pose
        self.state.pose = new_pose
        self.state.budget_remaining = max(self.state.budget_remaining - distance, 0.0)
        self.path_length += distance
        self.state.log.append({"event": "move", "t": t, "phase": self.state.phase,
                               "from": (old.x, old.y, old.level), "to": (new_pose.x, new_pose.y, new_pose.level),
                               "distance": distance})

    def certain(self):
        return self.state.map.mean_variance() < self.stop.variance_threshold


def run_mission(truth, sensor: SensorModel, planner: PlannerConfig = PlannerConfig(),
                scheduler: SchedulerConfig = SchedulerConfig(), stop: StopConfig = StopConfig(), *,
                prior: GridMap | None = None, start: Waypoint | None = None, no_fly=None,
                speed: float = 5.0, capture_time: float = 0.1, seed=0, spurious=(),
                on_cycle=None) -> MissionResult:
    """Fly a mission over ``truth`` (a 0/1 grid) and return the final state and metrics.

    ``spurious`` lists cells whose first detection is forced to 1, staging a
    false positive that later visits must correct. ``on_cycle(state, cycle)``
    runs after each planning cycle.
    """
    truth = np.asarray(truth)
    height, width = truth.shape
    grid = prior.copy() if prior is not None else GridMap.uniform(width, height)
    if (grid.height, grid.width) != truth.shape:
        raise ValidationError("prior map and ground truth differ in shape")
    if speed <= 0:
        raise ValidationError("speed must be positive")
    start = start if start is not None else Waypoint(0.5 * grid.cell_size, 0.5 * grid.cell_size, sensor.levels - 1)
    lattice = build_lattice(grid, sensor, planner.lattice_spacing, no_fly)
    rng = np.random.default_rng(seed)
    state = MissionState(grid, truth, start, float(stop.budget))
    tr = _Tracker(state, sensor, truth, rng, grid.cell_size, spurious, stop)
    initial_trace = grid.trace()
    if scheduler.mode == "cycles":
        reason, cycles = _run_cycles(tr, lattice, planner, stop, speed, capture_time, on_cycle)
    else:
        reason, cycles = _run_oscillatory(tr, lattice, planner, scheduler, stop, speed, on_cycle)
    metrics = {
        "termination": reason, "cycles": cycles, "fusions": len(tr.fusion_trace),
        "path_length": tr.path_length, "budget_remaining": state.budget_remaining, "time": state.time,
        "initial_trace": initial_trace, "final_trace": state.map.trace(),
        "final_mean_variance": state.map.mean_variance(),
        "trace_per_fusion": tr.fusion_trace, "trace_per_cycle": tr.cycle_trace,
        **confusion_counts(state.map, truth),
        "spurious": {c: {**info, "final_class": bool(state.map.mean[c] >= 0.5)} for c, info in tr.spurious.items()},
    }
    n_occ = metrics["tp"] + metrics["fn"]
    metrics["recall"] = metrics["tp"] / n_occ if n_occ else 1.0
    return MissionResult(state, metrics)


def _plan(tr, lattice, planner):
    s = tr.state
    return plan_path(s.map, s.pose, tr.sensor, s.budget_remaining, planner.horizon, lattice, planner.max_leg)


def _run_cycles(tr, lattice, planner, stop, speed, capture_time, on_cycle):
    s = tr.state
    cycles = 0
    while True:
        if tr.certain():
            return "variance_threshold", cycles
        if cycles >= stop.max_cycles or s.time >= stop.max_time:
            return "limit", cycles
        path = _plan(tr, lattice, planner)
        if not path.waypoints:
            return path.status, cycles
        fused = False
        for wp in path.waypoints:
            s.phase = ACTION
            d = travel_cost(s.pose, wp, tr.sensor)
            tr.move(s.time, wp, d)
            s.time += d / speed
            s.phase = PERCEPTION
            fused |= tr.capture(s.time)
            s.time += capture_time
            if tr.certain():
                break
        cycles += 1
        if fused:
            tr.cycle_trace.append(s.map.trace())
        if on_cycle is not None:
            on_cycle(s, cycles)


def _step_towards(pose: Waypoint, target: Waypoint, sensor, distance):
    """Pose after flying ``distance`` metres straight towards ``target`` (snapping on arrival)."""
    a, b = pose.position(sensor), target.position(sensor)
    gap = float(np.linalg.norm(b - a))
    if distance >= gap:
        return target, gap
    p = a + (b - a) * (distance / gap)
    # altitude levels are discrete: keep the departure level until arrival
    return Waypoint(float(p[0]), float(p[1]), pose.level), distance


def _run_oscillatory(tr, lattice, planner, scheduler, stop, speed, on_cycle):
    s = tr.state
    if scheduler.base - scheduler.amplitude >= scheduler.threshold and not math.isfinite(stop.max_time):
        # the gate never opens for action: one capture is all that can happen
        s.phase = PERCEPTION
        tr.capture(0.0)
        return "no_action_phase", 0
    dt = 1.0 / (scheduler.frequency * scheduler.ticks_per_period)
    queue, cycles, fused_in_cycle = [], 0, False
    prev_phase = None
    tick = 0
    while True:
        if tr.certain():
            return "variance_threshold", cycles
        if s.time >= stop.max_time:
            return "limit", cycles
        if not queue:
            if cycles and fused_in_cycle:
                tr.cycle_trace.append(s.map.trace())
            if cycles and on_cycle is not None:
                on_cycle(s, cycles)
            if cycles >= stop.max_cycles:
                return "limit", cycles
            path = _plan(tr, lattice, planner)
            if not path.waypoints:
                return path.status, cycles
            queue = list(path.waypoints)
            cycles += 1
            fused_in_cycle = False
        mid = (tick + 0.5) * dt
        s.precision_signal = precision_signal(mid, scheduler)
        s.phase = precision_scheduler(mid, scheduler)
        if s.phase == PERCEPTION:
            if prev_phase != PERCEPTION:
                fused_in_cycle |= tr.capture(mid)
        else:
            reach = min(speed * dt, s.budget_remaining)
            new, moved = _step_towards(s.pose, queue[0], tr.sensor, reach)
            if moved > 0 or new != s.pose:
                tr.move(mid, new, moved)
            if new == queue[0]:
                queue.pop(0)
            elif reach <= 0:
                queue.clear()
        prev_phase = s.phase
        tick += 1
        s.time = tick * dt


# -- scenarios ---------------------------------------------------------------------
@dataclass(frozen=True)
class Scenario:
    """World, sensor and mission settings for one search mission.

    ``no_fly`` is ``(row0, row1, col0, col1)`` (half-open) or ``None``.
    ``spurious_count`` empty cells get a staged first detection.
    """

    width: int = 40
    height: int = 40
    cell_size: float = 1.0
    n_targets: int = 7
    no_fly: tuple | None = (16, 24, 16, 24)
    prior_mean: float = 0.5
    prior_variance: float = 0.25
    start_level: int = 2
    speed: float = 5.0
    capture_time: float = 0.1
    spurious_count: int = 0
    sensor: SensorModel = SensorModel()
    planner: PlannerConfig = PlannerConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    stop: StopConfig = StopConfig()

    def no_fly_mask(self) -> np.ndarray:
        mask = np.zeros((self.height, self.width), bool)
        if self.no_fly is not None:
            r0, r1, c0, c1 = self.no_fly
            mask[r0:r1, c0:c1] = True
        return mask


def make_world(scenario: Scenario, seed):
    """Seeded ground truth and staged spurious cells, both kept off the no-fly block."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    free = np.flatnonzero(~scenario.no_fly_mask().ravel())
    need = scenario.n_targets + scenario.spurious_count
    if need > free.size:
        raise ValidationError("not enough free cells for targets")
    picks = rng.choice(free, size=need, replace=False)
    truth = np.zeros((scenario.height, scenario.width), dtype=np.int8)
    truth.ravel()[picks[:scenario.n_targets]] = 1
    spurious = [tuple(int(v) for v in divmod(int(c), scenario.width)) for c in picks[scenario.n_targets:]]
    return truth, spurious


def run_scenario(scenario: Scenario, seed: int, on_cycle=None) -> MissionResult:
    truth, spurious = make_world(scenario, seed)
    prior = GridMap.uniform(scenario.width, scenario.height, scenario.cell_size,
                            scenario.prior_mean, scenario.prior_variance)
    cs = scenario.cell_size
    start = Waypoint(0.5 * cs, 0.5 * cs, scenario.start_level)
    return run_mission(truth, scenario.sensor, scenario.planner, scenario.scheduler, scenario.stop,
                       prior=prior, start=start, no_fly=scenario.no_fly_mask(), speed=scenario.speed,
                       capture_time=scenario.capture_time,
                       seed=np.random.SeedSequence(seed, spawn_key=(2,)), spurious=spurious, on_cycle=on_cycle)


def write_map_snapshot(grid: GridMap, directory, tag) -> tuple:
    """Write ``mean_<tag>.txt`` and ``variance_<tag>.txt`` as row-major space-separated grids."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = (directory / f"mean_{tag}.txt", directory / f"variance_{tag}.txt")
    np.savetxt(paths[0], grid.mean, fmt="%.6g")
    np.savetxt(paths[1], grid.variance, fmt="%.6g")
    return paths
