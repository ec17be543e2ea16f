"""Spring-damper benchmark and the parameter/precision studies built on it."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DivergenceError, ValidationError
from ..gencoords import SmoothnessSpec
from ..ltisim import NoiseSpec, Trajectory, gaussian_bump_input, make_mass_spring_damper, simulate
from .estimation import FreeEnergyEvaluator
from .learning import LearningSchedule, learn_parameters
from .model import EmbeddedData, GenerativeModel, Posterior, embed_data

# theta = [vec A, vec B, vec C]; -k/m, -b/m and 1/m sit at these positions
UNKNOWN_ENTRIES = (2, 3, 5)
MODES = ("over_exposed", "biased")


@dataclass(frozen=True)
class BenchmarkSetup:
    """Everything needed to simulate and embed one spring-damper data set."""

    mass: float = 1.4
    stiffness: float = 0.8
    damping: float = 0.4
    dt: float = 0.1
    duration: float = 32.0
    kernel_width: float = 0.5
    sigma_z: float = 0.1
    sigma_w: float = 0.05
    process_rows: tuple | None = (1,)
    order: int = 6
    input_order: int = 2
    input_prior_precision: float = 1e4

    def plant(self):
        return make_mass_spring_damper(self.mass, self.stiffness, self.damping)

    def true_theta(self) -> np.ndarray:
        return self.plant().theta

    def true_lambda(self) -> np.ndarray:
        """Log precisions of the simulated noise (``inf`` when a source is off)."""
        with np.errstate(divide="ignore"):
            return -2.0 * np.log(np.array([self.sigma_z, self.sigma_w], dtype=float))

    def simulate(self, seed) -> Trajectory:
        noise = NoiseSpec(self.kernel_width, self.sigma_w, self.sigma_z, self.process_rows)
        return simulate(self.plant(), gaussian_bump_input, self.dt, self.duration, noise, seed)

    def embed(self, traj: Trajectory, order=None, known_input=True) -> EmbeddedData:
        order = self.order if order is None else order
        eta_u = traj.inputs if known_input else None
        return embed_data(traj.outputs, self.dt, order, eta_u=eta_u, d=self.input_order, r=traj.inputs.shape[1])

    def with_(self, **changes) -> "BenchmarkSetup":
        return replace(self, **changes)


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Generator independent of the simulation streams of the same seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2 + purpose,)))


def initial_guess(seed: int, low=-2.0, high=2.0, size=len(UNKNOWN_ENTRIES)) -> np.ndarray:
    """Random starting values (and prior means) for the unknown entries."""
    return stream(seed, 0).uniform(low, high, size)


def sysid_model(setup: BenchmarkSetup, eta_free, P_free=1.0, order=None) -> GenerativeModel:
    order = setup.order if order is None else order
    return GenerativeModel.from_plant(
        setup.plant(), free=list(UNKNOWN_ENTRIES), P_free=P_free, eta_free=eta_free,
        P_u=np.eye(1) * setup.input_prior_precision,
        smoothness=SmoothnessSpec(setup.kernel_width, order), input_order=setup.input_order,
    )


def parameter_sse(theta, setup: BenchmarkSetup) -> float:
    idx = list(UNKNOWN_ENTRIES)
    return float(np.sum((np.asarray(theta)[idx] - setup.true_theta()[idx]) ** 2))


@dataclass
class SysIdRun:
    seed: int
    initial: np.ndarray
    estimate: np.ndarray
    max_error: float
    sse: float
    posterior: Posterior | None
    failure: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failure


def run_sysid(setup: BenchmarkSetup, seed: int, schedule: LearningSchedule = LearningSchedule(),
              P_free=1.0, eta_free=None) -> SysIdRun:
    """Identify the three unknown entries from one simulated data set.

    Prior means (and starting values) default to a seeded draw from [-2, 2].
    A :class:`DivergenceError` is caught and reported in ``failure``.
    """
    init = initial_guess(seed) if eta_free is None else np.asarray(eta_free, dtype=float)
    traj = setup.simulate(seed)
    data = setup.embed(traj)
    model = sysid_model(setup, init, P_free)
    idx = list(UNKNOWN_ENTRIES)
    truth = setup.true_theta()[idx]
    try:
        post = learn_parameters(model, data, schedule)
    except DivergenceError as exc:
        nan = np.full(len(idx), np.nan)
        return SysIdRun(seed, init, nan, np.nan, np.nan, None, failure=str(exc))
    est = post.theta[idx]
    return SysIdRun(seed, init, est, float(np.max(np.abs(est - truth))), parameter_sse(post.theta, setup), post)


# -- embedding order ---------------------------------------------------------
def scoring_mask(centers, n_samples, margin):
    """Centers at least ``margin`` samples away from both ends."""
    centers = np.asarray(centers)
    return (centers >= margin) & (centers <= n_samples - 1 - margin)


def embedding_order_run(setup: BenchmarkSetup, seed: int, orders=range(1, 7), input_prior_precision=1.0,
                        keep_estimates=False):
    """State and input SSE of the estimator at each embedding order, for one seed.

    Parameters and noise precisions are fixed at their true values and the
    input prior is centred on zero, so the input has to be inferred from the
    outputs. Every order is scored on the same samples (the margin of the
    largest order). With ``keep_estimates`` each row also carries the scored
    sample indices and the estimated input there.
    """
    orders = list(orders)
    if not orders or min(orders) < 1 or max(orders) > 6:
        raise ValidationError("embedding orders must lie in 1..6")
    traj = setup.simulate(seed)
    lam = setup.true_lambda()
    margin = max(orders)
    rows = []
    for p in orders:
        data = setup.embed(traj, order=p, known_input=False)
        model = GenerativeModel.from_plant(
            setup.plant(), P_u=np.eye(1) * input_prior_precision,
            smoothness=SmoothnessSpec(setup.kernel_width, p), input_order=setup.input_order,
        )
        ev = FreeEnergyEvaluator(model, data)
        X, *_ = ev.solve_states(model.eta_theta, lam)
        keep = scoring_mask(data.centers, len(traj), margin)
        c = data.centers[keep]
        n = model.n
        x_hat = X[keep, :n]
        u_hat = X[keep, ev.ops.nx: ev.ops.nx + model.r]
        row = {
            "seed": seed, "order": p,
            "sse_state": float(np.sum((x_hat - traj.states[c]) ** 2)),
            "sse_input": float(np.sum((u_hat - traj.inputs[c]) ** 2)),
        }
        if keep_estimates:
            row.update(centers=c, t=traj.t[c], u_true=traj.inputs[c, 0], u_hat=u_hat[:, 0])
        rows.append(row)
    return rows


def embedding_order_study(setup: BenchmarkSetup, orders=range(1, 7), seeds=range(20), input_prior_precision=1.0,
                          mapper=map):
    """Rows of :func:`embedding_order_run` over ``seeds`` (``mapper`` may run them in parallel)."""
    chunks = mapper(_EmbeddingJob(setup, tuple(orders), input_prior_precision), list(seeds))
    return [row for chunk in chunks for row in chunk]


@dataclass(frozen=True)
class _EmbeddingJob:
    setup: BenchmarkSetup
    orders: tuple
    input_prior_precision: float

    def __call__(self, seed):
        return embedding_order_run(self.setup, seed, self.orders, self.input_prior_precision)


def median_and_mad(values):
    v = np.asarray(values, dtype=float)
    med = float(np.median(v))
    return med, float(np.median(np.abs(v - med)))


def summarize(rows, by, value):
    """``{key: (median, MAD)}`` of ``value`` grouped by ``by``."""
    groups = {}
    for row in rows:
        groups.setdefault(row[by], []).append(row[value])
    return {k: median_and_mad(v) for k, v in sorted(groups.items())}


# -- prior precision sweep -----------------------------------------------------
@dataclass(frozen=True)
class _SweepJob:
    setup: BenchmarkSetup
    grid: tuple
    schedule: LearningSchedule

    def __call__(self, seed):
        wrong = initial_guess(seed)
        rows = []
        for P in self.grid:
            run = run_sysid(self.setup, seed, self.schedule, P_free=P, eta_free=wrong)
            rows.append({"P_theta": float(P), "seed": seed, "sse": run.sse,
                         "iterations": run.posterior.n_iter if run.ok else -1, "failure": run.failure})
        return rows


def sweep_prior_precision(setup: BenchmarkSetup, grid, seeds, schedule: LearningSchedule = LearningSchedule(),
                          mapper=map):
    """Parameter SSE for every prior precision in ``grid`` with wrong prior means.

    Prior means are a seeded draw from [-2, 2] shared across the grid, so only
    the precision changes along a seed's row.
    """
    grid = tuple(float(g) for g in grid)
    if not grid or min(grid) <= 0:
        raise ValidationError("prior precision grid must be non-empty and positive")
    chunks = mapper(_SweepJob(setup, grid, schedule), list(seeds))
    return [row for chunk in chunks for row in chunk]


# -- noise robustness ------------------------------------------------------------
@dataclass(frozen=True)
class NoiseStudyConfig:
    """Prior settings of the two learner types.

    ``over_exposed`` trusts the data (weak prior, random means in [-2, 2]);
    ``biased`` holds a confident prior whose means sit ``biased_offset`` from
    the truth.
    """

    over_exposed_precision: float = 1.0
    biased_precision: float = 1e6
    biased_offset: float = 0.1


@dataclass(frozen=True)
class _NoiseJob:
    setup: BenchmarkSetup
    grid: tuple
    modes: tuple
    cfg: NoiseStudyConfig
    schedule: LearningSchedule

    def __call__(self, seed):
        rows = []
        truth = self.setup.true_theta()[list(UNKNOWN_ENTRIES)]
        signs = np.where(stream(seed, 1).random(truth.size) < 0.5, -1.0, 1.0)
        for sz in self.grid:
            setup = self.setup.with_(sigma_z=float(sz))
            for mode in self.modes:
                if mode == "over_exposed":
                    run = run_sysid(setup, seed, self.schedule, P_free=self.cfg.over_exposed_precision)
                else:
                    eta = truth + signs * self.cfg.biased_offset
                    run = run_sysid(setup, seed, self.schedule, P_free=self.cfg.biased_precision, eta_free=eta)
                lam_hat = run.posterior.lam if run.ok else np.full(2, np.nan)
                rows.append({
                    "sigma_z": float(sz), "mode": mode, "seed": seed, "sse": run.sse,
                    "lambda_z_true": float(setup.true_lambda()[0]), "lambda_z_hat": float(lam_hat[0]),
                    "lambda_w_hat": float(lam_hat[1]), "failure": run.failure,
                })
        return rows


def noise_robustness_study(setup: BenchmarkSetup, sigma_z_grid, seeds, modes=MODES,
                           cfg: NoiseStudyConfig = NoiseStudyConfig(),
                           schedule: LearningSchedule = LearningSchedule(), mapper=map):
    """Parameter SSE and learned sensor log-precision per noise level and learner type."""
    modes = tuple(modes)
    bad = set(modes) - set(MODES)
    if bad:
        raise ValidationError(f"unknown modes {sorted(bad)}")
    grid = tuple(float(s) for s in sigma_z_grid)
    if not grid or min(grid) <= 0:
        raise ValidationError("noise grid must be non-empty and positive")
    chunks = mapper(_NoiseJob(setup, grid, modes, cfg, schedule), list(seeds))
    return [row for chunk in chunks for row in chunk]


def crossover_level(rows):
    """Largest grid noise at which the over-exposed learner still matches or beats
    the biased one, provided the biased learner wins on median SSE at every
    higher level. ``None`` when no level fits.
    """
    med = {}
    for row in rows:
        med.setdefault((row["sigma_z"], row["mode"]), []).append(row["sse"])
    levels = sorted({k[0] for k in med})
    wins = [np.nanmedian(med[(s, "biased")]) < np.nanmedian(med[(s, "over_exposed")]) for s in levels]
    for i in range(len(levels) - 1):
        if not wins[i] and all(wins[i + 1:]):
            return levels[i]
    return None


def lambda_slope(rows, mode="over_exposed"):
    """Least-squares slope of learned vs. true sensor log-precision."""
    pts = np.array([(r["lambda_z_true"], r["lambda_z_hat"]) for r in rows
                    if r["mode"] == mode and np.isfinite(r["lambda_z_hat"])])
    slope, _ = np.polyfit(pts[:, 0], pts[:, 1], 1)
    return float(slope)
