"""Evaluation suite: image/pixel AUROC, pixel AP, pixel F1-max, region overlap.

All metrics are rank-based with explicit tie handling so they agree with
exhaustive brute-force oracles to machine precision:

  auroc              probability a random positive outranks a random
                     negative, ties counted 1/2 (Mann-Whitney form)
  average_precision  sum of (R_k - R_{k-1}) * P_k over the descending-score
                     sweep, tied scores processed as one block
  f1_max             maximum F1 over thresholds at distinct score values
                     (prediction = score >= value)
  pro_score          mean per-region overlap (8-connected ground-truth
                     regions) integrated over false-positive rate up to a
                     cap (0.3) and normalized by the cap
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError, UndefinedMetricError

PRO_FPR_CAP = 0.3
MAX_SWEEP_THRESHOLDS = 50_000
EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

METRIC_FIELDS = ("roc_i", "roc_p", "pro", "ap_p", "f1_p")


def _as_scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise UndefinedMetricError(f"scores ({s.shape}) and labels ({y.shape}) differ in length")
    return s, y


def auroc(scores, labels) -> float:
    """Area under the ROC curve via average ranks (ties get half credit)."""
    s, y = _as_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    # average rank within each tied block
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _descending_blocks(scores, labels):
    """Cumulative TP/FP after each distinct score value, descending."""
    s, y = _as_scores_labels(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s_desc = s[order]
    y_desc = y[order]
    block_ends = np.flatnonzero(np.diff(s_desc)) + 1
    block_ends = np.concatenate((block_ends, [s.size]))
    tp = np.cumsum(y_desc)[block_ends - 1].astype(np.float64)
    fp = block_ends - tp
    values = s_desc[block_ends - 1]
    return values, tp, fp, int(y.sum())


def average_precision(scores, labels) -> float:
    """AP over the descending sweep; tied scores form a single block."""
    _, tp, fp, n_pos = _descending_blocks(scores, labels)
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def f1_max(scores, labels) -> float:
    """Maximum F1 over thresholds at the distinct score values."""
    _, tp, fp, n_pos = _descending_blocks(scores, labels)
    if n_pos == 0:
        raise UndefinedMetricError("F1 needs at least one positive")
    denom = 2.0 * tp + fp + (n_pos - tp)
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2.0 * tp / denom, 0.0)
    return float(f1.max())


def _sweep_thresholds(all_scores: np.ndarray) -> np.ndarray:
    """Distinct values, descending; quantile subset above the sweep cap."""
    distinct = np.unique(all_scores)
    if distinct.size > MAX_SWEEP_THRESHOLDS:
        qs = np.linspace(0.0, 1.0, MAX_SWEEP_THRESHOLDS)
        distinct = np.unique(np.quantile(all_scores, qs))
    return distinct[::-1]


def pro_score(maps: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray], fpr_cap: float = PRO_FPR_CAP) -> float:
    """Per-region-overlap score.

    Regions are 8-connected components of each ground-truth mask.  For every
    threshold, the mean over all regions of |prediction AND region|/|region|
    is paired with the false-positive rate over pooled normal pixels; the
    resulting curve is integrated by trapezoid up to fpr_cap and normalized.
    """
    if len(maps) != len(gt_masks):
        raise UndefinedMetricError("maps and masks counts differ")
    region_sorted: list[np.ndarray] = []
    normal_parts: list[np.ndarray] = []
    for m, g in zip(maps, gt_masks):
        m = np.asarray(m, dtype=np.float64)
        g = np.asarray(g).astype(bool)
        if m.shape != g.shape:
            raise UndefinedMetricError(f"map {m.shape} and mask {g.shape} dims differ")
        labeled, n_regions = ndimage.label(g, structure=EIGHT_CONNECTED)
        for region_id in range(1, n_regions + 1):
            region_sorted.append(np.sort(m[labeled == region_id]))
        normal_parts.append(m[~g])
    if not region_sorted:
        raise UndefinedMetricError("PRO needs at least one anomalous region")
    normal = np.sort(np.concatenate(normal_parts))
    if normal.size == 0:
        raise UndefinedMetricError("PRO needs normal pixels for the FPR axis")

    thresholds = _sweep_thresholds(np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps]))
    # survival fractions at each threshold: fraction of pixels with score >= v
    fprs = 1.0 - np.searchsorted(normal, thresholds, side="left") / normal.size
    overlaps = np.zeros(thresholds.size, dtype=np.float64)
    for region in region_sorted:
        overlaps += 1.0 - np.searchsorted(region, thresholds, side="left") / region.size
    overlaps /= len(region_sorted)

    # curve from (fpr=0, overlap=0) through the sweep; integrate up to the cap
    fprs = np.concatenate(([0.0], fprs))
    overlaps = np.concatenate(([0.0], overlaps))
    return float(_integrate_to_cap(fprs, overlaps, fpr_cap) / fpr_cap)


def _integrate_to_cap(x: np.ndarray, y: np.ndarray, cap: float) -> float:
    """Trapezoidal area under (x, y) for x in [0, cap]; interpolates at the cap."""
    area = 0.0
    for i in range(1, x.size):
        x0, x1 = x[i - 1], x[i]
        y0, y1 = y[i - 1], y[i]
        if x1 <= x0:
            continue
        if x0 >= cap:
            break
        if x1 > cap:
            y1 = y0 + (y1 - y0) * (cap - x0) / (x1 - x0)
            x1 = cap
        area += 0.5 * (y0 + y1) * (x1 - x0)
    return area


@dataclass(frozen=True)
class ClassMetrics:
    roc_i: float
    roc_p: float
    pro: float
    ap_p: float
    f1_p: float

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in METRIC_FIELDS}


@dataclass(frozen=True)
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    mean: ClassMetrics

    def as_dict(self) -> dict:
        return {
            "per_class": {c: m.as_dict() for c, m in sorted(self.per_class.items())},
            "mean": self.mean.as_dict(),
        }

    def render_table(self) -> str:
        """Aligned plain-text table (values in percent, one decimal)."""
        header = ["class", "ROC_I", "ROC_P", "PRO", "AP_P", "F1_P"]
        rows = []
        for cls in sorted(self.per_class):
            m = self.per_class[cls]
            rows.append([cls] + [f"{100 * getattr(m, f):.1f}" for f in METRIC_FIELDS])
        rows.append(["mean"] + [f"{100 * getattr(self.mean, f):.1f}" for f in METRIC_FIELDS])
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def evaluate(results: dict, manifest: Iterable, gt_masks: dict) -> MetricsReport:
    """Per-class five-metric report plus the unweighted class mean.

    results:  sample_id -> (final map array, image score float)
    manifest: SampleRecord iterable (class_name, label, sample_id)
    gt_masks: sample_id -> binary mask for anomalous samples
    """
    by_class: dict[str, list] = {}
    for rec in manifest:
        by_class.setdefault(rec.class_name, []).append(rec)

    per_class: dict[str, ClassMetrics] = {}
    for cls, records in sorted(by_class.items()):
        img_scores, img_labels = [], []
        maps, masks = [], []
        for rec in records:
            if rec.sample_id not in results:
                raise DataError(f"no result for sample {rec.sample_id!r}")
            amap, iscore = results[rec.sample_id]
            amap = np.asarray(amap, dtype=np.float64)
            is_anomaly = rec.label == "anomaly"
            if is_anomaly:
                if rec.sample_id not in gt_masks:
                    raise DataError(f"anomalous sample {rec.sample_id!r} has no ground-truth mask")
                mask = np.asarray(gt_masks[rec.sample_id]).astype(bool)
            else:
                mask = np.zeros(amap.shape, dtype=bool)
            img_scores.append(iscore)
            img_labels.append(int(is_anomaly))
            maps.append(amap)
            masks.append(mask)
        pixel_scores = np.concatenate([m.ravel() for m in maps])
        pixel_labels = np.concatenate([g.ravel() for g in masks]).astype(np.int64)
        per_class[cls] = ClassMetrics(
            roc_i=auroc(img_scores, img_labels),
            roc_p=auroc(pixel_scores, pixel_labels),
            pro=pro_score(maps, masks),
            ap_p=average_precision(pixel_scores, pixel_labels),
            f1_p=f1_max(pixel_scores, pixel_labels),
        )

    mean = ClassMetrics(
        **{f: float(np.mean([getattr(m, f) for m in per_class.values()])) for f in METRIC_FIELDS}
    )
    return MetricsReport(per_class=per_class, mean=mean)
