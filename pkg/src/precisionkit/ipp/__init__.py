"""Occupancy-map fusion, uncertainty-driven path planning and the precision gate."""
from .grid import (
    GridMap,
    Measurement,
    SensorModel,
    Waypoint,
    expected_precision_gain,
    footprint_cells,
    fuse_measurement,
    observe,
    path_cost,
    travel_cost,
)
from .mission import (
    MissionResult,
    MissionState,
    PlannerConfig,
    Scenario,
    SchedulerConfig,
    StopConfig,
    make_world,
    precision_scheduler,
    precision_signal,
    run_mission,
    run_scenario,
    write_map_snapshot,
)
from .planner import Lattice, PlannedPath, build_lattice, candidate_gains, lattice_from_waypoints, plan_path

__all__ = [
    "GridMap", "Lattice", "Measurement", "MissionResult", "MissionState", "PlannedPath", "PlannerConfig",
    "Scenario", "SchedulerConfig", "SensorModel", "StopConfig", "Waypoint", "build_lattice", "candidate_gains",
    "expected_precision_gain", "footprint_cells", "fuse_measurement", "lattice_from_waypoints", "make_world",
    "observe", "path_cost", "plan_path", "precision_scheduler", "precision_signal", "run_mission",
    "run_scenario", "travel_cost", "write_map_snapshot",
]
