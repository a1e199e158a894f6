import numpy as np
import pytest

from wxprompt.errors import ConfigError, DataError, ShapeError, UsageError
from wxprompt.metrics import (
    ContingencyCounts,
    ThresholdSet,
    contingency,
    csi,
    denormalize,
    evaluate_task,
    far,
    is_degenerate,
    mean_variance_normalize,
    pod,
    read_reports_csv,
    rmse,
    write_reports_csv,
)


def brute_force_counts(pred, truth, threshold, comparison="ge"):
    """Per-pixel double loop; the reference the fast path must match exactly."""
    hits = misses = fas = cns = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if comparison == "ge":
                p = pred[i, j] >= threshold
                t = truth[i, j] >= threshold
            else:
                p = pred[i, j] <= threshold
                t = truth[i, j] <= threshold
            if p and t:
                hits += 1
            elif not p and t:
                misses += 1
            elif p and not t:
                fas += 1
            else:
                cns += 1
    return ContingencyCounts(hits, misses, fas, cns)


def brute_force_rmse(pred, truth):
    total = 0.0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            total += (pred[i, j] - truth[i, j]) ** 2
    return np.sqrt(total / pred.size)


# ---------------------------------------------------------------------------
# rmse


def test_rmse_zero_for_identical():
    frame = np.random.default_rng(0).standard_normal((8, 8))
    assert rmse(frame, frame) == 0.0


def test_rmse_one_sigma_offset_is_one():
    rng = np.random.default_rng(1)
    truth = rng.standard_normal((16, 16)) * 7.0 + 3.0
    stats = (float(truth.mean()), float(truth.std()))
    pred = truth + stats[1]  # +1 sigma everywhere in raw units
    assert rmse(pred, truth, stats) == pytest.approx(1.0, abs=1e-12)


def test_rmse_matches_brute_force():
    rng = np.random.default_rng(2)
    pred = rng.standard_normal((8, 8))
    truth = rng.standard_normal((8, 8))
    assert abs(rmse(pred, truth) - brute_force_rmse(pred, truth)) < 1e-12


def test_rmse_shape_mismatch():
    with pytest.raises(ShapeError):
        rmse(np.zeros((2, 2)), np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# contingency


def test_contingency_perfect_prediction():
    rng = np.random.default_rng(3)
    truth = rng.uniform(0, 255, (16, 16))
    c = contingency(truth, truth, 74.0)
    assert c.misses == 0 and c.false_alarms == 0
    assert c.total == truth.size


def test_contingency_all_wrong():
    truth = np.full((4, 4), 100.0)
    pred = np.full((4, 4), -100.0)
    c = contingency(pred, truth, 50.0)
    assert c.hits == 0 and c.misses == 16 and c.false_alarms == 0


def test_contingency_matches_brute_force():
    rng = np.random.default_rng(4)
    for comparison in ("ge", "le"):
        pred = rng.uniform(0, 255, (16, 16))
        truth = rng.uniform(0, 255, (16, 16))
        fast = contingency(pred, truth, 74.0, comparison)
        slow = brute_force_counts(pred, truth, 74.0, comparison)
        assert fast == slow


# ---------------------------------------------------------------------------
# ratios


def test_ratio_hand_case():
    c = ContingencyCounts(3, 1, 0, 12)
    assert csi(c) == pytest.approx(0.75)
    assert pod(c) == pytest.approx(0.75)
    assert far(c) == 0.0
    assert not is_degenerate(c)


def test_zero_denominator_convention():
    c = ContingencyCounts(0, 0, 0, 16)
    assert csi(c) == 0.0 and pod(c) == 0.0 and far(c) == 0.0
    assert is_degenerate(c)


def test_perfect_binary_prediction():
    truth = (np.arange(16).reshape(4, 4) > 7).astype(float)
    c = contingency(truth, truth, 0.5)
    assert csi(c) == 1.0 and pod(c) == 1.0 and far(c) == 0.0


def test_csi_never_exceeds_pod():
    rng = np.random.default_rng(5)
    for _ in range(200):
        counts = ContingencyCounts(*rng.integers(0, 20, size=4))
        assert csi(counts) <= pod(counts) + 1e-15


def test_binarization_invariant_under_monotone_transform():
    rng = np.random.default_rng(6)
    pred = rng.uniform(0, 255, (12, 12))
    truth = rng.uniform(0, 255, (12, 12))
    base = contingency(pred, truth, 74.0)
    for a, b in ((2.0, 10.0), (0.5, -3.0)):
        scaled = contingency(a * pred + b, a * truth + b, a * 74.0 + b)
        assert scaled == base


# ---------------------------------------------------------------------------
# evaluate_task


def test_duplicate_samples_match_single():
    rng = np.random.default_rng(7)
    pred = rng.uniform(0, 255, (8, 8))
    truth = rng.uniform(0, 255, (8, 8))
    ts = ThresholdSet("synthetic-a", (16.0, 74.0, 133.0), "ge")
    stats = (100.0, 50.0)
    single = evaluate_task([pred], [truth], ts, stats)
    double = evaluate_task([pred, pred], [truth, truth], ts, stats)
    assert single.rmse == pytest.approx(double.rmse)
    for a, b in zip(single.per_threshold, double.per_threshold):
        assert a.csi == pytest.approx(b.csi)
        assert a.pod == pytest.approx(b.pod)
        assert a.far == pytest.approx(b.far)


def test_report_averages_match_rows():
    rng = np.random.default_rng(8)
    preds = [rng.uniform(0, 255, (8, 8)) for _ in range(3)]
    truths = [rng.uniform(0, 255, (8, 8)) for _ in range(3)]
    ts = ThresholdSet("synthetic-a", (16.0, 74.0, 133.0, 160.0), "ge")
    report = evaluate_task(preds, truths, ts, (100.0, 50.0))
    assert report.avg_csi == pytest.approx(np.mean([m.csi for m in report.per_threshold]), abs=1e-12)
    assert report.avg_pod == pytest.approx(np.mean([m.pod for m in report.per_threshold]), abs=1e-12)
    assert report.avg_far == pytest.approx(np.mean([m.far for m in report.per_threshold]), abs=1e-12)


def test_pooled_counts_match_brute_force_over_samples():
    rng = np.random.default_rng(9)
    preds = [rng.uniform(0, 255, (8, 8)) for _ in range(5)]
    truths = [rng.uniform(0, 255, (8, 8)) for _ in range(5)]
    ts = ThresholdSet("synthetic-a", (74.0,), "ge")
    report = evaluate_task(preds, truths, ts, (100.0, 50.0))
    pooled = ContingencyCounts(0, 0, 0, 0)
    for p, t in zip(preds, truths):
        pooled = pooled + brute_force_counts(p, t, 74.0)
    row = report.per_threshold[0]
    assert row.counts == pooled
    assert row.csi == pytest.approx(csi(pooled), abs=1e-15)


def test_evaluate_task_length_mismatch():
    with pytest.raises(UsageError):
        evaluate_task([np.zeros((2, 2))], [], ThresholdSet("x", (1.0,)), (0.0, 1.0))


# ---------------------------------------------------------------------------
# normalization


def test_normalize_round_trip():
    rng = np.random.default_rng(10)
    frame = rng.uniform(-5000, 2000, (16, 16))
    stats = (float(frame.mean()), float(frame.std()))
    back = denormalize(mean_variance_normalize(frame, stats), stats)
    np.testing.assert_allclose(back, frame, rtol=1e-6)


def test_normalize_mean_maps_to_zero():
    stats = (42.0, 7.0)
    assert mean_variance_normalize(np.array([[42.0]]), stats)[0, 0] == 0.0


def test_zero_std_rejected():
    with pytest.raises(DataError):
        mean_variance_normalize(np.zeros((2, 2)), (0.0, 0.0))
    with pytest.raises(DataError):
        denormalize(np.zeros((2, 2)), (0.0, -1.0))


# ---------------------------------------------------------------------------
# threshold sets and CSV


def test_threshold_set_monotonicity():
    ThresholdSet("a", (1.0, 2.0, 3.0))
    ThresholdSet("a", (3.0, 2.0, 1.0), "le")  # descending is fine
    with pytest.raises(ConfigError):
        ThresholdSet("a", (1.0, 3.0, 2.0))
    with pytest.raises(ConfigError):
        ThresholdSet("a", (1.0, 2.0), "between")


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    ts = ThresholdSet("synthetic-a", (16.0, 74.0), "ge")
    report = evaluate_task(
        [rng.uniform(0, 255, (8, 8))],
        [rng.uniform(0, 255, (8, 8))],
        ts,
        (100.0, 50.0),
        task_id="demo",
        prompt_policy="random",
    )
    path = tmp_path / "report.csv"
    write_reports_csv([(report, ts)], path)
    rows = read_reports_csv(path)
    assert len(rows) == len(ts.thresholds) + 1
    threshold_rows = [r for r in rows if r["row_kind"] == "threshold"]
    summary = [r for r in rows if r["row_kind"] == "summary"][0]
    assert float(summary["rmse"]) == pytest.approx(report.rmse)
    recomputed_avg = np.mean([float(r["csi"]) for r in threshold_rows])
    assert float(summary["csi"]) == pytest.approx(recomputed_avg, abs=1e-15)
