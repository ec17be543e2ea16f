import math

import numpy as np
import pytest

from precisionkit.dem import GenerativeModel, embed_data
from precisionkit.gencoords import SmoothnessSpec
from precisionkit.ltisim import NoiseSpec, StateSpaceModel, simulate

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one verdict line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


def random_small_problem(seed, p=2, n_samples=60, free=None, sigma=0.05, companion=False):
    """Stable 2-state, 1-input, 1-output system with short noisy data.

    ``companion`` draws a spring-damper-like plant with only the benchmark's
    three entries free; a fully free ``A`` can wander to unobservable
    realizations where the state curvature turns singular.
    """
    rng = np.random.default_rng(seed)
    if companion:
        A = np.array([[0.0, 1.0], [-rng.uniform(0.3, 1.5), -rng.uniform(0.2, 1.0)]])
        B = np.array([[0.0], [rng.uniform(0.5, 1.5)]])
        C = np.array([[1.0, 0.0]])
        if free is None:
            free = np.isin(np.arange(8), (2, 3, 5))
    else:
        while True:
            A = rng.normal(0, 0.8, (2, 2))
            if np.all(np.linalg.eigvals(A).real < -0.1):
                break
        B = rng.normal(0, 1, (2, 1))
        C = rng.normal(0, 1, (1, 2))
    plant = StateSpaceModel(A, B, C)
    traj = simulate(plant, lambda t: np.sin(0.7 * t) + 0.5 * np.cos(1.3 * t), 0.1, (n_samples - 1) * 0.1,
                    NoiseSpec(0.5, sigma, sigma), seed=seed)
    free = np.ones(plant.theta.size, bool) if free is None else free
    P = np.where(free, 1.0, 1e6)
    model = GenerativeModel(2, 1, 1, plant.theta + rng.normal(0, 0.1, plant.theta.size) * free, P,
                            free=free, smoothness=SmoothnessSpec(0.5, p), input_order=min(2, p),
                            P_u=np.eye(1) * 10.0)
    data = embed_data(traj.outputs, 0.1, p, eta_u=traj.inputs, d=min(2, p))
    return plant, traj, model, data


def brute_force_pick(grid, pose, sensor, waypoints, budget=math.inf):
    """Exhaustive argmax of gain per metre with the documented tie rules, in plain Python."""
    here = pose.position(sensor)
    best = None
    for k, wp in enumerate(waypoints):
        cost = float(np.linalg.norm(wp.position(sensor) - here))
        if not 0 < cost <= budget:
            continue
        radius, r = sensor.footprint_radius[wp.level], sensor.measurement_variance[wp.level]
        gain = 0.0
        for i in range(grid.height):
            for j in range(grid.width):
                if ((j + 0.5) * grid.cell_size - wp.x) ** 2 + ((i + 0.5) * grid.cell_size - wp.y) ** 2 \
                        <= radius * radius + 1e-12:
                    v = grid.variance[i, j]
                    gain += v * v / (v + r)
        if gain <= 0:
            continue
        cand = (gain / cost, cost, k)
        if best is None:
            best = cand
            continue
        near = abs(cand[0] - best[0]) <= 1e-9 * max(abs(cand[0]), abs(best[0]))
        if (not near and cand[0] > best[0]) or (near and (cand[1] < best[1] - 1e-9 or
                                                          (abs(cand[1] - best[1]) <= 1e-9 and k < best[2]))):
            best = cand
    return None if best is None else best[2]
