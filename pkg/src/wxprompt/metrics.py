"""Weather verification metrics: RMSE plus thresholded contingency scores.

Conventions, fixed across the harness:

* RMSE is computed in mean-variance-normalized space (scores land below 1
  for reasonable predictions).
* Binarization happens on raw-unit frames against raw-unit thresholds;
  modalities whose events are cold extremes use a <= comparison.
* Zero-denominator ratios score 0 and are flagged degenerate, never NaN.
* Multi-sample evaluation pools the integer counts before forming ratios
  (micro-averaging); RMSE is averaged per sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError, UsageError


@dataclass(frozen=True)
class ContingencyCounts:
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int

    def __post_init__(self):
        for name in ("hits", "misses", "false_alarms", "correct_negatives"):
            if getattr(self, name) < 0:
                raise UsageError(f"contingency count {name} must be non-negative")

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_negatives

    def __add__(self, other: "ContingencyCounts") -> "ContingencyCounts":
        return ContingencyCounts(
            self.hits + other.hits,
            self.misses + other.misses,
            self.false_alarms + other.false_alarms,
            self.correct_negatives + other.correct_negatives,
        )


@dataclass(frozen=True)
class ThresholdSet:
    """Raw-unit binarization thresholds for one modality.

    The list must be strictly monotone; descending lists are the natural
    spelling for cold-extreme modalities scored with ``comparison="le"``.
    """

    modality_id: str
    thresholds: tuple[float, ...]
    comparison: str = "ge"

    def __post_init__(self):
        if self.comparison not in ("ge", "le"):
            raise ConfigError(f"comparison must be 'ge' or 'le', got {self.comparison!r}")
        diffs = np.diff(self.thresholds)
        if len(self.thresholds) == 0 or (len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0))):
            raise ConfigError(f"thresholds must be strictly monotone, got {self.thresholds}")


# Default threshold tables. Real-sensor entries follow the standard
# radiance/VIL verification levels; synthetic entries are placed inside
# each observation map's output range.
DEFAULT_THRESHOLD_SETS: dict[str, ThresholdSet] = {
    ts.modality_id: ts
    for ts in (
        ThresholdSet("vil", (16.0, 74.0, 133.0, 160.0, 181.0, 219.0), "ge"),
        ThresholdSet("vis", (2000.0, 3200.0, 4400.0, 5600.0, 6800.0), "ge"),
        ThresholdSet("ir107", (-6000.0, -4000.0, 0.0, 2000.0), "ge"),
        ThresholdSet("ir069", (-4000.0, -5000.0, -6000.0, -7000.0), "le"),
        ThresholdSet("synthetic-a", (16.0, 74.0, 133.0, 160.0, 181.0, 219.0), "ge"),
        ThresholdSet("synthetic-b", (40.0, 90.0, 140.0, 190.0, 230.0), "ge"),
        ThresholdSet("synthetic-c", (-4000.0, -5000.0, -6000.0, -6800.0), "le"),
        ThresholdSet("synthetic-d", (2000.0, 3200.0, 4400.0, 5600.0), "ge"),
    )
}


def threshold_set_for(threshold_set_id: str) -> ThresholdSet:
    try:
        return DEFAULT_THRESHOLD_SETS[threshold_set_id]
    except KeyError:
        raise ConfigError(f"no threshold set registered under {threshold_set_id!r}") from None


@dataclass(frozen=True)
class ThresholdMetrics:
    threshold: float
    counts: ContingencyCounts
    csi: float
    pod: float
    far: float
    degenerate: bool


@dataclass
class MetricReport:
    """Scores for one task evaluation."""

    task_id: str
    rmse: float
    per_threshold: list[ThresholdMetrics]
    sample_count: int
    avg_csi: float = field(init=False)
    avg_pod: float = field(init=False)
    avg_far: float = field(init=False)
    prompt_policy: str = ""
    tag: str = ""

    def __post_init__(self):
        if self.per_threshold:
            self.avg_csi = float(np.mean([m.csi for m in self.per_threshold]))
            self.avg_pod = float(np.mean([m.pod for m in self.per_threshold]))
            self.avg_far = float(np.mean([m.far for m in self.per_threshold]))
        else:
            self.avg_csi = self.avg_pod = self.avg_far = 0.0


def mean_variance_normalize(fieldv: np.ndarray, stats: tuple[float, float]) -> np.ndarray:
    """(x - mean) / std; the exact inverse is :func:`denormalize`."""
    mean_value, std_value = stats
    if std_value <= 0:
        raise DataError(f"normalization std must be positive, got {std_value}")
    return (np.asarray(fieldv, dtype=np.float64) - mean_value) / std_value


def denormalize(fieldv: np.ndarray, stats: tuple[float, float]) -> np.ndarray:
    mean_value, std_value = stats
    if std_value <= 0:
        raise DataError(f"normalization std must be positive, got {std_value}")
    return np.asarray(fieldv, dtype=np.float64) * std_value + mean_value


def rmse(pred: np.ndarray, truth: np.ndarray, stats: tuple[float, float] | None = None) -> float:
    """Root mean squared error, in normalized units when stats are given."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"rmse shape mismatch: {pred.shape} vs {truth.shape}")
    if stats is not None:
        pred = mean_variance_normalize(pred, stats)
        truth = mean_variance_normalize(truth, stats)
    diff = pred - truth
    return float(np.sqrt((diff * diff).mean()))


def contingency(pred: np.ndarray, truth: np.ndarray, threshold: float, comparison: str = "ge") -> ContingencyCounts:
    """Binarize raw-unit frames at ``threshold`` and count the four cells."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"contingency shape mismatch: {pred.shape} vs {truth.shape}")
    if comparison == "ge":
        p = pred >= threshold
        t = truth >= threshold
    elif comparison == "le":
        p = pred <= threshold
        t = truth <= threshold
    else:
        raise ConfigError(f"comparison must be 'ge' or 'le', got {comparison!r}")
    hits = int(np.count_nonzero(p & t))
    misses = int(np.count_nonzero(~p & t))
    false_alarms = int(np.count_nonzero(p & ~t))
    correct_negatives = int(np.count_nonzero(~p & ~t))
    return ContingencyCounts(hits, misses, false_alarms, correct_negatives)


def csi(c: ContingencyCounts) -> float:
    denom = c.hits + c.misses + c.false_alarms
    return c.hits / denom if denom else 0.0


def pod(c: ContingencyCounts) -> float:
    denom = c.hits + c.misses
    return c.hits / denom if denom else 0.0


def far(c: ContingencyCounts) -> float:
    denom = c.hits + c.false_alarms
    return c.false_alarms / denom if denom else 0.0


def is_degenerate(c: ContingencyCounts) -> bool:
    """True when any of the three ratios fell back to the 0 convention."""
    return (
        c.hits + c.misses + c.false_alarms == 0
        or c.hits + c.misses == 0
        or c.hits + c.false_alarms == 0
    )


def evaluate_task(
    preds: list[np.ndarray],
    truths: list[np.ndarray],
    threshold_set: ThresholdSet,
    stats: tuple[float, float],
    task_id: str = "",
    prompt_policy: str = "",
    tag: str = "",
) -> MetricReport:
    """Score aligned prediction/truth frame lists for one task.

    Contingency counts are pooled over all samples before the ratios are
    formed; RMSE is the per-sample average in normalized space.
    """
    if len(preds) != len(truths):
        raise UsageError(f"got {len(preds)} predictions but {len(truths)} truths")
    if not preds:
        raise UsageError("evaluate_task needs at least one sample")

    rmse_values = [rmse(p, t, stats) for p, t in zip(preds, truths)]
    rows: list[ThresholdMetrics] = []
    for threshold in threshold_set.thresholds:
        pooled = ContingencyCounts(0, 0, 0, 0)
        for p, t in zip(preds, truths):
            pooled = pooled + contingency(p, t, threshold, threshold_set.comparison)
        rows.append(
            ThresholdMetrics(
                threshold=float(threshold),
                counts=pooled,
                csi=csi(pooled),
                pod=pod(pooled),
                far=far(pooled),
                degenerate=is_degenerate(pooled),
            )
        )
    return MetricReport(
        task_id=task_id,
        rmse=float(np.mean(rmse_values)),
        per_threshold=rows,
        sample_count=len(preds),
        prompt_policy=prompt_policy,
        tag=tag,
    )


REPORT_CSV_COLUMNS = (
    "task",
    "row_kind",
    "threshold",
    "comparison",
    "hits",
    "misses",
    "false_alarms",
    "correct_negatives",
    "csi",
    "pod",
    "far",
    "degenerate",
    "rmse",
    "samples",
    "policy",
    "tag",
)


def write_reports_csv(reports: list[tuple[MetricReport, ThresholdSet]], path) -> None:
    """One row per (task, threshold) plus one summary row per task."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_CSV_COLUMNS)
        for report, threshold_set in reports:
            for row in report.per_threshold:
                writer.writerow(
                    [
                        report.task_id,
                        "threshold",
                        repr(row.threshold),
                        threshold_set.comparison,
                        row.counts.hits,
                        row.counts.misses,
                        row.counts.false_alarms,
                        row.counts.correct_negatives,
                        repr(row.csi),
                        repr(row.pod),
                        repr(row.far),
                        int(row.degenerate),
                        "",
                        "",
                        report.prompt_policy,
                        report.tag,
                    ]
                )
            writer.writerow(
                [
                    report.task_id,
                    "summary",
                    "",
                    threshold_set.comparison,
                    "",
                    "",
                    "",
                    "",
                    repr(report.avg_csi),
                    repr(report.avg_pod),
                    repr(report.avg_far),
                    "",
                    repr(report.rmse),
                    report.sample_count,
                    report.prompt_policy,
                    report.tag,
                ]
            )


def read_reports_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
