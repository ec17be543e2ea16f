"""Experiment runners: fan seeds out, gather per-seed results, write deterministic outputs."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ..dem.learning import LearningSchedule
from ..dem.studies import (
    MODES,
    BenchmarkSetup,
    NoiseStudyConfig,
    crossover_level,
    embedding_order_run,
    lambda_slope,
    median_and_mad,
    noise_robustness_study,
    run_sysid,
    summarize,
    sweep_prior_precision,
)
from ..errors import ConfigError
from ..ipp.grid import SensorModel
from ..ipp.mission import PlannerConfig, Scenario, SchedulerConfig, StopConfig, run_scenario, write_map_snapshot
from .config import ExperimentConfig


@dataclass
class RunSummary:
    experiment: str
    seed: int
    metrics: dict
    wall_seconds: float = 0.0


@dataclass
class ExperimentResult:
    summaries: list
    files: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
    return path


@contextmanager
def _mapper(workers):
    if workers <= 1:
        yield map
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield ex.map


def _timed(fn, seed):
    t0 = time.perf_counter()
    out = fn(seed)
    return out, time.perf_counter() - t0


def _setup(s) -> BenchmarkSetup:
    return BenchmarkSetup(mass=s.mass, stiffness=s.stiffness, damping=s.damping, dt=s.dt, duration=s.duration,
                          kernel_width=s.kernel_width, sigma_z=s.sigma_z, sigma_w=s.sigma_w, order=s.order,
                          input_order=s.input_order, input_prior_precision=s.input_prior_precision)


def _schedule(s) -> LearningSchedule:
    return LearningSchedule(max_iter=s.max_iter, tol=s.tol)


# -- fig2 ------------------------------------------------------------------------
@dataclass(frozen=True)
class _Fig2Job:
    setup: BenchmarkSetup
    orders: tuple
    input_prior_precision: float

    def __call__(self, seed):
        return _timed(lambda s: embedding_order_run(self.setup, s, self.orders, self.input_prior_precision,
                                                    keep_estimates=True), seed)


def run_fig2(cfg: ExperimentConfig) -> ExperimentResult:
    s = cfg.settings
    if not s.orders or any(p < 1 or p > 6 for p in s.orders):
        raise ConfigError("orders must be a non-empty subset of 1..6")
    orders = tuple(sorted(set(s.orders)))
    job = _Fig2Job(_setup(s), orders, s.input_prior_precision)
    with _mapper(cfg.workers) as m:
        results = list(m(job, cfg.seeds))
    rows, summaries = [], []
    for seed, (seed_rows, wall) in zip(cfg.seeds, results):
        rows.extend(seed_rows)
        summaries.append(RunSummary(cfg.experiment, seed, {f"sse_input_p{r['order']}": r["sse_input"]
                                                           for r in seed_rows}, wall))
    head = cfg.header_lines()
    files = [write_csv(cfg.out / "fig2_runs.csv", head, ["seed", "order", "sse_state", "sse_input"], rows)]
    st, inp = summarize(rows, "order", "sse_state"), summarize(rows, "order", "sse_input")
    table = [{"order": p, "median_sse_state": st[p][0], "mad_sse_state": st[p][1],
              "median_sse_input": inp[p][0], "mad_sse_input": inp[p][1]} for p in orders]
    files.append(write_csv(cfg.out / "fig2_summary.csv", head, list(table[0]), table))
    first = [r for r in results[0][0]]
    trace = []
    for k in range(first[0]["t"].size):
        row = {"t": first[0]["t"][k], "u_true": first[0]["u_true"][k]}
        for r in first:
            row[f"u_hat_p{r['order']}"] = r["u_hat"][k]
        trace.append(row)
    files.append(write_csv(cfg.out / "fig2_input_estimates.csv", head + [f"trace_seed={cfg.seeds[0]}"],
                           list(trace[0]), trace))
    return ExperimentResult(summaries, files, {"summary": table})


# -- fig3 ------------------------------------------------------------------------
@dataclass(frozen=True)
class _Fig3Job:
    setup: BenchmarkSetup
    schedule: LearningSchedule
    prior_precision: float

    def __call__(self, seed):
        return _timed(lambda s: run_sysid(self.setup, s, self.schedule, P_free=self.prior_precision), seed)


def run_fig3(cfg: ExperimentConfig) -> ExperimentResult:
    s = cfg.settings
    setup = _setup(s)
    job = _Fig3Job(setup, _schedule(s), s.prior_precision)
    with _mapper(cfg.workers) as m:
        results = list(m(job, cfg.seeds))
    head = cfg.header_lines()
    runs, trace, summaries = [], [], []
    for seed, (run, wall) in zip(cfg.seeds, results):
        post = run.posterior
        row = {"seed": seed, "status": "ok" if run.ok else "failed", "failure": run.failure,
               "max_error": run.max_error, "sse": run.sse,
               "iterations": post.n_iter if run.ok else None, "converged": post.converged if run.ok else False,
               "lambda_z": post.lam[0] if run.ok else None, "lambda_w": post.lam[1] if run.ok else None}
        for name, a, b in zip(("theta3", "theta4", "theta6"), run.initial, run.estimate):
            row[f"{name}_init"], row[name] = a, b
        runs.append(row)
        if run.ok:
            trace.extend({"seed": seed, **h} for h in post.history)
        summaries.append(RunSummary(cfg.experiment, seed, {k: v for k, v in row.items() if k != "seed"}, wall))
    cols = ["seed", "status", "theta3_init", "theta4_init", "theta6_init", "theta3", "theta4", "theta6",
            "max_error", "sse", "lambda_z", "lambda_w", "iterations", "converged", "failure"]
    files = [write_csv(cfg.out / "fig3_runs.csv", head + [f"truth={_truth_line(setup)}"], cols, runs)]
    if trace:
        files.append(write_csv(cfg.out / "fig3_trace.csv", head, list(trace[0]), trace))
    return ExperimentResult(summaries, files)


def _truth_line(setup):
    th = setup.true_theta()
    return ",".join(repr(float(th[i])) for i in (2, 3, 5))


# -- fig4 ------------------------------------------------------------------------
def run_fig4(cfg: ExperimentConfig) -> ExperimentResult:
    s = cfg.settings
    grid = tuple(sorted(s.prior_grid))
    if not grid or min(grid) <= 0:
        raise ConfigError("prior_grid must hold positive values")
    t0 = time.perf_counter()
    with _mapper(cfg.workers) as m:
        rows = sweep_prior_precision(_setup(s), grid, cfg.seeds, _schedule(s), mapper=m)
    wall = time.perf_counter() - t0
    rows.sort(key=lambda r: (r["seed"], r["P_theta"]))
    head = cfg.header_lines()
    files = [write_csv(cfg.out / "fig4_runs.csv", head, ["seed", "P_theta", "sse", "iterations", "failure"], rows)]
    summ = summarize(rows, "P_theta", "sse")
    table = [{"P_theta": p, "median_sse": v[0], "mad_sse": v[1]} for p, v in summ.items()]
    files.append(write_csv(cfg.out / "fig4_summary.csv", head, ["P_theta", "median_sse", "mad_sse"], table))
    summaries = [RunSummary(cfg.experiment, seed, {f"sse_P{r['P_theta']:g}": r["sse"] for r in rows
                                                   if r["seed"] == seed}, wall / len(cfg.seeds))
                 for seed in cfg.seeds]
    return ExperimentResult(summaries, files, {"summary": table})


# -- fig5 ------------------------------------------------------------------------
def run_fig5(cfg: ExperimentConfig) -> ExperimentResult:
    s = cfg.settings
    grid = tuple(sorted(s.sigma_z_grid))
    if not grid or min(grid) <= 0:
        raise ConfigError("sigma_z_grid must hold positive values")
    ncfg = NoiseStudyConfig(s.over_exposed_precision, s.biased_precision, s.biased_offset)
    t0 = time.perf_counter()
    with _mapper(cfg.workers) as m:
        rows = noise_robustness_study(_setup(s), grid, cfg.seeds, MODES, ncfg, _schedule(s), mapper=m)
    wall = time.perf_counter() - t0
    rows.sort(key=lambda r: (r["seed"], r["sigma_z"], MODES.index(r["mode"])))
    head = cfg.header_lines()
    cols = ["seed", "sigma_z", "mode", "sse", "lambda_z_true", "lambda_z_hat", "lambda_w_hat", "failure"]
    files = [write_csv(cfg.out / "fig5_runs.csv", head, cols, rows)]
    table = []
    for sz in grid:
        for mode in MODES:
            sel = [r for r in rows if r["sigma_z"] == sz and r["mode"] == mode]
            med, mad = median_and_mad([r["sse"] for r in sel])
            table.append({"sigma_z": sz, "mode": mode, "median_sse": med, "mad_sse": mad,
                          "lambda_z_true": sel[0]["lambda_z_true"],
                          "median_lambda_z_hat": float(np.nanmedian([r["lambda_z_hat"] for r in sel]))})
    files.append(write_csv(cfg.out / "fig5_summary.csv", head, list(table[0]), table))
    stats = {"crossover_sigma_z": crossover_level(rows), "lambda_slope_over_exposed": lambda_slope(rows),
             "lambda_slope_biased": lambda_slope(rows, "biased")}
    files.append(write_csv(cfg.out / "fig5_stats.csv", head, ["statistic", "value"],
                           [{"statistic": k, "value": v} for k, v in stats.items()]))
    summaries = [RunSummary(cfg.experiment, seed, {f"sse_{r['mode']}_{r['sigma_z']:g}": r["sse"] for r in rows
                                                   if r["seed"] == seed}, wall / len(cfg.seeds))
                 for seed in cfg.seeds]
    return ExperimentResult(summaries, files, {"summary": table, **stats})


# -- ipp -------------------------------------------------------------------------
def scenario_from(s) -> Scenario:
    sensor = SensorModel(tuple(s.footprint_radius), tuple(s.measurement_variance), tuple(s.level_height),
                         s.false_positive_rate, s.false_negative_rate)
    sched = SchedulerConfig(s.scheduler_mode, s.precision_base, s.precision_amplitude, s.precision_frequency,
                            s.precision_threshold, s.ticks_per_period)
    return Scenario(width=s.width, height=s.height, cell_size=s.cell_size, n_targets=s.n_targets,
                    no_fly=tuple(s.no_fly) if s.no_fly is not None else None, prior_mean=s.prior_mean,
                    prior_variance=s.prior_variance, start_level=s.start_level, speed=s.speed,
                    capture_time=s.capture_time, spurious_count=s.spurious_count, sensor=sensor,
                    planner=PlannerConfig(s.horizon, s.lattice_spacing, s.max_leg), scheduler=sched,
                    stop=StopConfig(s.variance_threshold, s.budget, s.max_time))


@dataclass(frozen=True)
class _IppJob:
    scenario: Scenario
    snapshot_dir: object
    snapshot_seed: int
    snapshot_every: int

    def __call__(self, seed):
        t0 = time.perf_counter()
        hook = None
        if seed == self.snapshot_seed and self.snapshot_every > 0:
            def hook(state, cycle):
                if cycle % self.snapshot_every == 0:
                    write_map_snapshot(state.map, self.snapshot_dir, f"cycle{cycle:05d}")
        res = run_scenario(self.scenario, seed, on_cycle=hook)
        if hook is not None:
            write_map_snapshot(res.state.map, self.snapshot_dir, "final")
        moves = [e for e in res.state.log if e["event"] == "move"]
        return res.metrics, moves, time.perf_counter() - t0


def run_ipp(cfg: ExperimentConfig) -> ExperimentResult:
    s = cfg.settings
    try:
        scenario = scenario_from(s)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    snap_dir = cfg.out / "snapshots"
    job = _IppJob(scenario, snap_dir, cfg.seeds[0], s.snapshot_every)
    with _mapper(cfg.workers) as m:
        results = list(m(job, cfg.seeds))
    head = cfg.header_lines()
    runs, cycles, path, summaries = [], [], [], []
    for seed, (met, moves, wall) in zip(cfg.seeds, results):
        row = {"seed": seed, **{k: met[k] for k in ("termination", "cycles", "fusions", "path_length",
                                                    "budget_remaining", "tp", "fp", "tn", "fn", "recall",
                                                    "initial_trace", "final_trace", "final_mean_variance")}}
        row["n_spurious"] = len(met["spurious"])
        row["spurious_flagged_first"] = sum(bool(v["first_class"]) for v in met["spurious"].values())
        row["spurious_cleared"] = sum(not v["final_class"] for v in met["spurious"].values())
        row["spurious_min_visits"] = min((v["visits"] for v in met["spurious"].values()), default=None)
        runs.append(row)
        n_cells = s.width * s.height
        for k, tr in enumerate(met["trace_per_cycle"], start=1):
            cycles.append({"seed": seed, "cycle": k, "trace": tr, "mean_variance": tr / n_cells})
        for k, e in enumerate(moves):
            path.append({"seed": seed, "step": k, "t": e["t"], "x": e["to"][0], "y": e["to"][1],
                         "level": e["to"][2], "distance": e["distance"]})
        summaries.append(RunSummary(cfg.experiment, seed, {**row, "trace_per_cycle": met["trace_per_cycle"]}, wall))
    prefix = cfg.experiment
    files = [write_csv(cfg.out / f"{prefix}_runs.csv", head, list(runs[0]), runs),
             write_csv(cfg.out / f"{prefix}_variance_trace.csv", head, ["seed", "cycle", "trace", "mean_variance"],
                       cycles),
             write_csv(cfg.out / f"{prefix}_path.csv", head, ["seed", "step", "t", "x", "y", "level", "distance"],
                       path)]
    conf = {k: sum(r[k] for r in runs) for k in ("tp", "fp", "tn", "fn")}
    files.append(write_csv(cfg.out / f"{prefix}_confusion.csv", head, ["truth", "predicted", "count"], [
        {"truth": "occupied", "predicted": "occupied", "count": conf["tp"]},
        {"truth": "occupied", "predicted": "empty", "count": conf["fn"]},
        {"truth": "empty", "predicted": "occupied", "count": conf["fp"]},
        {"truth": "empty", "predicted": "empty", "count": conf["tn"]},
    ]))
    return ExperimentResult(summaries, files, {"confusion": conf})


RUNNERS = {
    "fig2_embedding": run_fig2,
    "fig3_sysid": run_fig3,
    "fig4_explore": run_fig4,
    "fig5_noise": run_fig5,
    "ipp_mission": run_ipp,
    "ipp_fp": run_ipp,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.experiment](cfg)
