import csv

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from precisionkit.errors import DimensionError, ValidationError
from precisionkit.ltisim import (
    NoiseSpec,
    StateSpaceModel,
    gaussian_bump_input,
    make_mass_spring_damper,
    simulate,
)

BENCH = make_mass_spring_damper(1.4, 0.8, 0.4)


def test_benchmark_matrices():
    np.testing.assert_allclose(BENCH.A, [[0, 1], [-0.5714, -0.2857]], atol=1e-4)
    np.testing.assert_allclose(BENCH.B, [[0], [0.7143]], atol=1e-4)
    np.testing.assert_array_equal(BENCH.C, [[1, 0]])


def test_double_integrator_and_arithmetic_case():
    np.testing.assert_array_equal(make_mass_spring_damper(1, 0, 0).A, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(make_mass_spring_damper(2, 2, 4).A, [[0, 1], [-1, -2]])


@pytest.mark.parametrize("mass", [0.0, -1.0])
def test_non_positive_mass_rejected(mass):
    with pytest.raises(ValidationError):
        make_mass_spring_damper(mass, 1.0, 1.0)


def test_state_space_validation():
    with pytest.raises(DimensionError):
        StateSpaceModel(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 2)))
    with pytest.raises(ValidationError):
        StateSpaceModel(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((1, 2)),
                        sensor_noise_prec=np.array([[-1.0]]))


def test_bump_input():
    assert gaussian_bump_input(12.0) == 1.0
    assert gaussian_bump_input(10.0) == pytest.approx(0.3679, abs=1e-4)
    assert gaussian_bump_input(1e3) == 0.0


def test_zero_input_zero_noise_stays_at_rest():
    traj = simulate(BENCH, None, 0.1, 10.0)
    assert not traj.states.any() and not traj.outputs.any()


def test_matches_reference_integrator():
    traj = simulate(BENCH, gaussian_bump_input, 0.1, 32.0)
    ref = solve_ivp(lambda t, x: BENCH.A @ x + BENCH.B[:, 0] * gaussian_bump_input(t),
                    (0.0, 32.0), [0.0, 0.0], t_eval=traj.t, rtol=1e-11, atol=1e-13, method="DOP853")
    assert np.max(np.abs(traj.outputs[:, 0] - ref.y[0])) < 1e-6


def test_sensor_noise_leaves_states_untouched():
    clean = simulate(BENCH, gaussian_bump_input, 0.1, 20.0)
    noisy = simulate(BENCH, gaussian_bump_input, 0.1, 20.0, NoiseSpec(0.5, 0.0, 0.1), seed=4)
    np.testing.assert_array_equal(noisy.states, clean.states)
    assert np.any(noisy.outputs != clean.outputs)


def test_outputs_are_observation_plus_sensor_noise():
    traj = simulate(BENCH, gaussian_bump_input, 0.1, 20.0, NoiseSpec(0.5, 0.05, 0.1, (1,)), seed=9)
    np.testing.assert_array_equal(traj.outputs, traj.states @ BENCH.C.T + traj.sensor_noise)
    assert not traj.process_noise[:, 0].any() and traj.process_noise[:, 1].any()


def test_energy_is_non_increasing_without_forcing():
    model = make_mass_spring_damper(1.4, 0.8, 0.4)
    # start away from rest by driving briefly, then let it ring down
    traj = simulate(model, lambda t: np.where(t < 1.0, 1.0, 0.0), 0.01, 30.0)
    after = traj.t >= 1.0
    x, v = traj.states[after, 0], traj.states[after, 1]
    energy = 0.5 * 1.4 * v**2 + 0.5 * 0.8 * x**2
    assert np.all(np.diff(energy) <= 1e-12)


def test_linearity_in_input():
    base = simulate(BENCH, gaussian_bump_input, 0.1, 20.0)
    scaled = simulate(BENCH, lambda t: -2.5 * gaussian_bump_input(t), 0.1, 20.0)
    np.testing.assert_allclose(scaled.states, -2.5 * base.states, rtol=1e-12, atol=1e-15)


def test_reproducible_for_same_seed():
    spec = NoiseSpec(0.5, 0.05, 0.1)
    a = simulate(BENCH, gaussian_bump_input, 0.1, 10.0, spec, seed=3)
    b = simulate(BENCH, gaussian_bump_input, 0.1, 10.0, spec, seed=3)
    c = simulate(BENCH, gaussian_bump_input, 0.1, 10.0, spec, seed=4)
    np.testing.assert_array_equal(a.outputs, b.outputs)
    assert np.any(a.outputs != c.outputs)


def test_bad_step_rejected():
    with pytest.raises(ValidationError):
        simulate(BENCH, None, 0.0, 1.0)
    with pytest.raises(ValidationError):
        simulate(BENCH, None, 0.5, 0.1)


def test_csv_export(tmp_path):
    traj = simulate(BENCH, gaussian_bump_input, 0.5, 2.0)
    path = tmp_path / "traj.csv"
    traj.to_csv(path, header_lines=["seed=0"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=0"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["t", "x1", "x2", "y1", "u1"]
    assert len(rows) == 1 + len(traj)
    np.testing.assert_array_equal(np.array(rows[1:], float)[:, 3], traj.outputs[:, 0])
