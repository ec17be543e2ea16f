import numpy as np
import pytest

from precisionkit.dem import LearningSchedule
from precisionkit.dem.studies import (
    BenchmarkSetup,
    crossover_level,
    embedding_order_run,
    initial_guess,
    lambda_slope,
    median_and_mad,
    noise_robustness_study,
    scoring_mask,
    summarize,
    sweep_prior_precision,
)
from precisionkit.errors import ValidationError

SHORT = LearningSchedule(max_iter=3)


def _noise_rows(medians):
    rows = []
    for (level, mode), sse in medians.items():
        rows.append({"sigma_z": level, "mode": mode, "sse": sse})
    return rows


def test_median_and_mad():
    assert median_and_mad([1.0, 2.0, 3.0, 4.0, 100.0]) == (3.0, 1.0)


def test_summarize_groups_sorted():
    rows = [{"k": 2, "v": 1.0}, {"k": 1, "v": 5.0}, {"k": 2, "v": 3.0}]
    assert summarize(rows, "k", "v") == {1: (5.0, 0.0), 2: (2.0, 1.0)}


def test_scoring_mask_drops_both_ends():
    mask = scoring_mask(np.arange(3, 18), 21, 5)
    np.testing.assert_array_equal(np.arange(3, 18)[mask], np.arange(5, 16))


def test_initial_guess_seeded_and_in_range():
    a, b = initial_guess(4), initial_guess(4)
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= -2) & (a <= 2))
    assert np.any(initial_guess(5) != a)


def test_crossover_requires_a_switch():
    levels = (0.01, 0.1, 1.0)
    rows = _noise_rows({(0.01, "over_exposed"): 1e-4, (0.01, "biased"): 1e-2,
                        (0.1, "over_exposed"): 1e-2, (0.1, "biased"): 1e-2,
                        (1.0, "over_exposed"): 1.0, (1.0, "biased"): 1e-2})
    assert crossover_level(rows) == 0.1
    # biased winning everywhere has no crossover
    everywhere = _noise_rows({(s, m): (1.0 if m == "over_exposed" else 0.1) for s in levels
                              for m in ("over_exposed", "biased")})
    assert crossover_level(everywhere) is None
    # a loss above the candidate level breaks it
    rows[-1]["sse"] = 10.0
    assert crossover_level(rows) is None


def test_lambda_slope_of_exact_tracking():
    rows = [{"mode": "over_exposed", "lambda_z_true": t, "lambda_z_hat": 2 * t + 1} for t in (1.0, 2.0, 5.0)]
    assert lambda_slope(rows) == pytest.approx(2.0)


def test_embedding_order_rows_and_validation():
    rows = embedding_order_run(BenchmarkSetup(sigma_z=0.01, sigma_w=0.005), 0, orders=(1, 3), keep_estimates=True)
    assert [r["order"] for r in rows] == [1, 3]
    assert rows[0]["t"].shape == rows[0]["u_hat"].shape
    # both orders are scored on the same samples
    np.testing.assert_array_equal(rows[0]["centers"], rows[1]["centers"])
    with pytest.raises(ValidationError):
        embedding_order_run(BenchmarkSetup(), 0, orders=(0, 7))


def test_single_point_sweep_gives_one_row():
    rows = sweep_prior_precision(BenchmarkSetup(), [10.0], [0], SHORT)
    assert len(rows) == 1 and rows[0]["P_theta"] == 10.0
    with pytest.raises(ValidationError):
        sweep_prior_precision(BenchmarkSetup(), [], [0], SHORT)


def test_noise_study_shape_and_validation():
    rows = noise_robustness_study(BenchmarkSetup(), [0.1], [0], schedule=SHORT)
    assert sorted(r["mode"] for r in rows) == ["biased", "over_exposed"]
    assert rows[0]["lambda_z_true"] == pytest.approx(-2 * np.log(0.1))
    with pytest.raises(ValidationError):
        noise_robustness_study(BenchmarkSetup(), [0.1], [0], modes=("cautious",))


def test_biased_prior_is_held():
    rows = noise_robustness_study(BenchmarkSetup(), [1.0], [2], modes=("biased",))
    # prior sits 0.1 from the truth on each of three entries and barely moves
    assert rows[0]["sse"] == pytest.approx(3 * 0.01, rel=0.05)
