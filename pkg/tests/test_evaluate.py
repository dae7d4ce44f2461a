import tempfile
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from src.action_set import AffineConstraint, action_set_for_bundle, build_action_set
from src.calibration import pare_calibrate
from src.data import FeatureSpec, load_dataset, write_toy_dataset
from src.errors import ConfigError, DataError
from src.evaluate import (
    SweepSettings,
    actionable_noise,
    distinguisher_algorithm,
    distribution_probe,
    evaluate_model,
    found_recourse_points,
    model_brittleness,
    noise_std,
    performance_metrics,
    precision_threshold,
    recourse_disparity,
    recourse_metrics,
    recourse_rates,
    recourse_robustness,
    summarize_sweep,
    sweep,
)
from src.network import MlpParams, init_params, predict, predict_scores, zero_params
from src.recourse import ADVERSARIAL, GRADIENT_DESCENT, compute_recourses
from src.training import TrainConfig, train
from tests.conftest import write_dataset


def logistic(weights, bias, threshold=0.5):
    return MlpParams(weights=[np.array(weights, dtype=float)[:, None]], biases=[np.array([bias], dtype=float)],
                     threshold=threshold)


def test_performance_metrics_identities(toy_bundle):
    params = init_params(toy_bundle.n_features, widths=(6,), seed=4)
    report = performance_metrics(params, toy_bundle, "test")
    X, y = toy_bundle.rows("test")
    predicted = predict(params, X)

    assert report.n == len(y)
    assert report.tp == int(((predicted == 1) & (y == 1)).sum())
    assert report.fn == int(((predicted == 0) & (y == 1)).sum())
    assert report.accuracy == pytest.approx((predicted == y).mean())
    assert 0.0 <= report.f1 <= 1.0


def test_performance_metrics_empty_split(workdir):
    config = write_dataset(workdir, "x,label\n" + "\n".join(f"{i},{i % 2}" for i in range(10)) + "\n", {
        "label_column": "label",
        "positive_label": "1",
        "features": [{"name": "x"}],
    })
    bundle = load_dataset(str(config))
    with pytest.raises(DataError):
        performance_metrics(zero_params(1, widths=(2,)), bundle, "test")


def test_recourse_rates_example():
    rates = recourse_rates(np.array([0.2, 0.6, 0.4]), np.array([0.7, 0.6, 0.3]), 0.5, ADVERSARIAL)
    assert (rates.n_positive, rates.n_negative, rates.n_recourse_found) == (1, 2, 1)
    assert rates.recourse_neg == 0.5
    assert rates.recourse_all == pytest.approx(2 / 3)
    assert not rates.vacuous


def test_recourse_rates_without_negatives():
    rates = recourse_rates(np.array([0.2, 0.4]), np.array([0.2, 0.4]), 0.0, ADVERSARIAL)
    assert rates.recourse_neg == 1.0
    assert rates.recourse_all == 1.0
    assert rates.vacuous


def test_recourse_all_falls_with_threshold(toy_bundle, toy_aset):
    """recourse_all of a trained model is non-increasing over an 11-point threshold grid"""
    params = train(toy_bundle, toy_aset, TrainConfig(epochs=2, widths=(8,), seed=7)).params
    rates = [
        recourse_metrics(params.with_threshold(t), toy_aset, toy_bundle, "lp").recourse_all
        for t in np.linspace(0.0, 1.0, 11)
    ]
    assert rates[0] == 1.0
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_noise_std():
    assert noise_std(0.1) == 0.1
    assert noise_std(0.01, "variance") == pytest.approx(0.1)
    with pytest.raises(ConfigError):
        noise_std(0.1, "range")
    with pytest.raises(ConfigError):
        noise_std(-0.1)


def test_actionable_noise_skips_fixed_columns():
    aset = build_action_set([FeatureSpec(name="a", actionable=True), FeatureSpec(name="b")])
    noise = actionable_noise(aset, 50, 1.0, seed=3)
    assert noise.shape == (50, 2)
    assert np.all(noise[:, 1] == 0.0)
    assert np.any(noise[:, 0] != 0.0)


def robustness_case():
    params = logistic([1.0, 0.0], -0.5)
    aset = build_action_set([FeatureSpec(name="a", actionable=True), FeatureSpec(name="b", actionable=True)])
    X = np.array([[0.0, 0.0], [0.1, 0.0], [2.0, 0.0], [-5.0, 0.0]])
    return params, aset, X, compute_recourses(params, aset, X, "lp")


def test_recourse_robustness_without_noise():
    """Row 2 is already positive and row 3 has no recourse, so two rows are measured"""
    params, aset, X, results = robustness_case()
    robustness, count = recourse_robustness(params, aset, X, results, noise=0.0)
    assert count == 2
    assert robustness == 1.0


def test_recourse_robustness_matches_seeded_oracle():
    params, aset, X, results = robustness_case()
    robustness, count = recourse_robustness(params, aset, X, results, noise=0.5, seed=11)
    picked = [0, 1]
    noisy = X[picked] + np.vstack([results[i].delta for i in picked]) + actionable_noise(aset, 2, 0.5, 11)
    assert robustness == float((predict_scores(params, noisy) >= 0.5).mean())
    assert count == 2


def test_recourse_robustness_with_nothing_to_measure():
    params = zero_params(2, widths=(3,), threshold=0.9)
    aset = build_action_set([FeatureSpec(name="a", actionable=True), FeatureSpec(name="b")])
    X = np.zeros((3, 2))
    assert recourse_robustness(params, aset, X, compute_recourses(params, aset, X, "lp")) == (None, 0)


def test_model_brittleness(rng):
    params = logistic([1.0, 1.0], 0.0)
    aset = build_action_set([FeatureSpec(name="a", actionable=True), FeatureSpec(name="b")])
    X = rng.normal(size=(40, 2))
    assert model_brittleness(params, aset, X, noise=0.0) == 1.0
    # far from the boundary nothing flips
    assert model_brittleness(params, aset, X + 100.0, noise=0.1) == 1.0
    with pytest.raises(DataError):
        model_brittleness(params, aset, np.zeros((0, 2)))


def test_precision_threshold():
    scores = np.array([0.2, 0.4, 0.6, 0.8])
    labels = np.array([0, 1, 0, 1])
    assert precision_threshold(scores, labels, 0.65) == (0.21, pytest.approx(2 / 3), False)
    assert precision_threshold(scores, labels, 1.0) == (0.61, 1.0, False)

    threshold, precision, flag = precision_threshold(scores, np.zeros(4, dtype=int), 0.65)
    assert flag
    assert precision == 0.0


def test_recourse_disparity(toy_bundle, toy_aset):
    params = init_params(toy_bundle.n_features, widths=(8,), seed=2)
    report = recourse_disparity(params, toy_aset, toy_bundle)
    groups = toy_bundle.group_values("test")

    assert report.n_majority + report.n_minority == len(groups)
    assert report.n_majority >= report.n_minority
    assert report.gap == report.recourse_all_majority - report.recourse_all_minority
    assert 0.0 <= report.recourse_all_minority <= 1.0


def test_recourse_disparity_needs_two_groups(toy_bundle, toy_aset):
    single = replace(toy_bundle, groups=np.full(len(toy_bundle.y), "a"))
    with pytest.raises(ConfigError):
        recourse_disparity(zero_params(toy_bundle.n_features, widths=(2,)), toy_aset, single)


def test_probe_cannot_tell_identical_points():
    """Constant features leave only the intercept, so the balanced test split scores 0.5"""
    points = np.zeros((100, 3))
    assert 0.4 <= distribution_probe(points, points.copy(), seed=0) <= 0.6


def test_probe_spots_shifted_points(rng):
    originals = rng.normal(size=(100, 3))
    assert distribution_probe(originals, originals + 10.0, seed=1) >= 0.95


def test_probe_needs_both_sets():
    with pytest.raises(DataError):
        distribution_probe(np.zeros((0, 2)), np.ones((5, 2)))


def test_evaluate_model_report(toy_bundle, toy_aset):
    params = init_params(toy_bundle.n_features, widths=(8,), seed=5)
    X, _ = toy_bundle.rows("test")
    params = params.with_threshold(float(np.median(predict_scores(params, X))))
    report = evaluate_model(params, toy_aset, toy_bundle, algorithms=("lp", "linear"), noise=0.1)

    assert set(report.recourse) == {"adversarial-training", "linear-approximation"}
    assert 0.0 <= report.brittleness <= 1.0
    assert report.disparity is not None
    row = report.as_row()
    assert "recourse_neg[linear-approximation]" in row
    assert row["disparity_gap"] == report.disparity.gap

    originals, points = found_recourse_points(params, toy_aset, X)
    if len(originals) >= 2:
        assert report.probe_accuracy == distribution_probe(originals, points, seed=0)
    else:
        assert report.probe_accuracy is None


def test_threshold_sweep(toy_paths):
    config_path, _ = toy_paths
    settings = SweepSettings(config_path=str(config_path), seeds=(0, 1), train=TrainConfig(epochs=2, widths=(8,)))
    seen = []
    table, summary = sweep("threshold", [0.3, 0.5, 0.7], settings, on_row=seen.append)

    assert len(table) == 6
    assert len(seen) == 6
    assert list(summary["value"]) == [0.3, 0.5, 0.7]
    assert list(summary["n_seeds"]) == [2, 2, 2]
    column = "recourse_all[adversarial-training]_mean"
    assert list(summary[column]) == sorted(summary[column], reverse=True)


def test_lambda_sweep_retrains(toy_paths):
    config_path, _ = toy_paths
    settings = SweepSettings(config_path=str(config_path), seeds=(3,), train=TrainConfig(epochs=1, widths=(4,)))
    table, summary = sweep("lambda", [0.0, 0.8], settings)
    assert list(table["value"]) == [0.0, 0.8]
    assert set(table["seed"]) == {3}
    assert "f1_mean" in summary.columns
    assert table["disparity_gap"].notna().all()
    assert "disparity_gap_mean" in summary.columns


def test_sweep_rejects_bad_axis(toy_paths):
    settings = SweepSettings(config_path=str(toy_paths[0]))
    with pytest.raises(ConfigError):
        sweep("dropout", [0.1], settings)
    with pytest.raises(ConfigError):
        sweep("lambda", [], settings)


def test_summarize_sweep_mean_and_sem():
    table = pd.DataFrame({
        "axis": ["lambda"] * 4,
        "value": [0.0, 0.0, 0.8, 0.8],
        "seed": [0, 1, 0, 1],
        "f1": [0.5, 0.7, 0.6, 0.6],
    })
    summary = summarize_sweep(table)
    assert list(summary["f1_mean"]) == pytest.approx([0.6, 0.6])
    assert summary["f1_sem"].iloc[0] == pytest.approx(0.1)
    assert summary["f1_sem"].iloc[1] == 0.0


def race_dataset(workdir, majority=None):
    """400 rows, African-American the most frequent race value"""
    races = ["African-American"] * 10 + ["Caucasian"] * 7 + ["Hispanic"] * 3
    rows = [f"{(i * 37) % 100 / 10.0},{races[i % 20]},{i % 2}" for i in range(400)]
    config = {
        "label_column": "label",
        "positive_label": "1",
        "features": [
            {"name": "x", "actionable": True},
            {"name": "race", "kind": "categorical", "group_key": True},
        ],
        "test_holdout": 100,
    }
    if majority is not None:
        config["group_majority"] = majority
    bundle = load_dataset(str(write_dataset(workdir, "x,race,label\n" + "\n".join(rows) + "\n", config)), seed=0)
    return bundle, action_set_for_bundle(bundle)


def test_recourse_disparity_uses_configured_majority(workdir):
    bundle, aset = race_dataset(workdir, majority="Caucasian")
    params = zero_params(bundle.n_features, widths=(2,))
    report = recourse_disparity(params, aset, bundle)
    groups = bundle.group_values("test")

    assert report.majority_value == "Caucasian"
    assert report.n_majority == int((groups == "Caucasian").sum())
    assert report.n_minority == len(groups) - report.n_majority


def test_recourse_disparity_falls_back_to_most_frequent(workdir):
    bundle, aset = race_dataset(workdir)
    params = zero_params(bundle.n_features, widths=(2,))
    assert recourse_disparity(params, aset, bundle).majority_value == "African-American"
    assert recourse_disparity(params, aset, bundle, majority="Hispanic").majority_value == "Hispanic"
    with pytest.raises(ConfigError):
        recourse_disparity(params, aset, bundle, majority="Asian")


def test_distinguisher_algorithm():
    box = build_action_set([FeatureSpec(name="a", actionable=True)])
    affine = build_action_set([FeatureSpec(name="a", actionable=True)], extras=[AffineConstraint(np.array([-1.0]), 0.6)])
    assert distinguisher_algorithm(box) == GRADIENT_DESCENT
    assert distinguisher_algorithm(affine) == ADVERSARIAL


def test_found_recourse_points_keep_valid_negatives(toy_bundle, toy_aset):
    params = init_params(toy_bundle.n_features, widths=(8,), seed=5)
    X, _ = toy_bundle.rows("test")
    params = params.with_threshold(float(np.median(predict_scores(params, X))))
    results = compute_recourses(params, toy_aset, X, GRADIENT_DESCENT)
    negative = predict_scores(params, X) < params.threshold
    expected = [i for i, r in enumerate(results) if negative[i] and r.valid]

    originals, points = found_recourse_points(params, toy_aset, X)
    assert np.array_equal(originals, X[expected])
    if expected:
        assert np.all(predict_scores(params, points) >= params.threshold)

    reused, reused_points = found_recourse_points(params, toy_aset, X, results=results)
    assert np.array_equal(reused, originals)
    assert np.array_equal(reused_points, points)


def test_found_recourse_points_under_affine_constraints():
    """delta <= 0.6: the first row crosses, the second cannot, the third is positive"""
    params = logistic([2.0], -1.0)
    aset = build_action_set([FeatureSpec(name="a", actionable=True)], extras=[AffineConstraint(np.array([-1.0]), 0.6)])
    X = np.array([[0.0], [-2.0], [1.0]])
    originals, points = found_recourse_points(params, aset, X)
    assert np.array_equal(originals, [[0.0]])
    assert points == pytest.approx(np.array([[0.6]]))


@pytest.fixture(scope="module")
def large_toy_run():
    """lambda 0.8 on 3000 rows: bundle, action set and the trained model"""
    with tempfile.TemporaryDirectory() as d:
        config_path, _ = write_toy_dataset(d, n=3000, seed=0, separation=1.0)
        bundle = load_dataset(str(config_path), seed=0)
    aset = action_set_for_bundle(bundle)
    run = train(bundle, aset, TrainConfig(epochs=5, lam=0.8, seed=0))
    return bundle, aset, run.params


def test_pare_threshold_delivers_recourse_on_test(large_toy_run):
    """epsilon = alpha = 0.05 on validation: at least 95% of the test split gets recourse"""
    bundle, aset, params = large_toy_run
    X_val, _ = bundle.rows("validation")
    calibrated, result = pare_calibrate(params, aset, X_val, epsilon=0.05, alpha=0.05, algorithm="lp")
    assert result.k_star >= 0
    assert recourse_metrics(calibrated, aset, bundle, "lp").recourse_all >= 0.95


def test_recourses_survive_small_noise(large_toy_run):
    bundle, aset, params = large_toy_run
    X, _ = bundle.rows("test")
    results = compute_recourses(params, aset, X, "lp")
    robustness, count = recourse_robustness(params, aset, X, results, noise=0.1, seed=0)
    assert count > 0
    assert robustness >= 0.8


def test_linear_approximation_finds_no_more_than_gradient_descent():
    """Single free feature, crossing needs delta >= 0.5 - x"""
    params = logistic([2.0], -1.0)
    aset = build_action_set([FeatureSpec(name="a", actionable=True)])
    X = np.array([[-3.0], [-1.0], [-0.5], [-0.15], [0.0], [0.2], [0.8]])
    linear = compute_recourses(params, aset, X, "linear")
    descent = compute_recourses(params, aset, X, "gd")
    for a, b in zip(linear, descent):
        assert not a.valid or b.valid
    assert sum(r.valid for r in linear) <= sum(r.valid for r in descent)
