"""Framewise and segmental evaluation: accuracy, macro/micro F1, and the
overlap-based F1@k scores used for action segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

F1K_THRESHOLDS = (10, 25, 50)


@dataclass(frozen=True)
class Segment:
    label: int
    start: int  # inclusive
    end: int    # exclusive

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"segment must be non-empty: [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class EvalReport:
    accuracy: float
    f1_macro: float
    f1_micro: float
    f1_at_k: dict[int, float]
    counts_at_k: dict[int, tuple[int, int, int]] = field(default_factory=dict)  # k -> (TP, FP, FN)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "f1_micro": self.f1_micro,
            **{f"f1@{k}": v for k, v in self.f1_at_k.items()},
            "counts": {str(k): list(v) for k, v in self.counts_at_k.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _check_pair(gt, pred):
    gt = np.asarray(gt, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gt.shape != pred.shape or gt.ndim != 1:
        raise ValueError(f"length mismatch: gt {gt.shape} vs pred {pred.shape}")
    return gt, pred


def framewise_accuracy(gt, pred) -> float:
    gt, pred = _check_pair(gt, pred)
    return float(np.mean(gt == pred))


def f1_frame(gt, pred, averaging: str, num_classes: int) -> float:
    """Framewise F1. macro averages per-class F1 over classes present in
    gt or pred; micro uses global counts (== accuracy for single-label)."""
    gt, pred = _check_pair(gt, pred)
    if gt.size and (gt.max() >= num_classes or pred.max() >= num_classes or gt.min() < 0 or pred.min() < 0):
        raise ValueError("class ids out of range")
    if averaging == "micro":
        # single-label framewise: TP = matches, FP = FN = mismatches
        return framewise_accuracy(gt, pred)
    if averaging != "macro":
        raise ValueError(f"unknown averaging {averaging!r}")
    scores = []
    for c in range(num_classes):
        in_gt, in_pred = gt == c, pred == c
        if not (in_gt.any() or in_pred.any()):
            continue
        tp = float(np.sum(in_gt & in_pred))
        fp = float(np.sum(~in_gt & in_pred))
        fn = float(np.sum(in_gt & ~in_pred))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def extract_segments(ids) -> list[Segment]:
    """Maximal constant runs, in temporal order."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ValueError(f"expected non-empty 1D id sequence, got shape {ids.shape}")
    bounds = np.flatnonzero(np.diff(ids)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [ids.size]])
    return [Segment(int(ids[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def _iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def segmental_counts(gt_segs: list[Segment], pred_segs: list[Segment],
                     k_percent: float) -> tuple[int, int, int]:
    """Greedy matching in temporal order of predicted segments: each picks
    the unmatched same-class ground-truth segment with maximal IoU (ties to
    the earliest); a TP needs IoU >= k/100. Returns (TP, FP, FN)."""
    matched = [False] * len(gt_segs)
    tp = fp = 0
    thresh = k_percent / 100.0
    for p in pred_segs:
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(gt_segs):
            if matched[j] or g.label != p.label:
                continue
            iou = _iou(p, g)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= thresh:
            tp += 1
            matched[best_j] = True
        else:
            fp += 1
    fn = matched.count(False)
    return tp, fp, fn


def f1_at_k(gt, pred, k_percent: float) -> float:
    gt, pred = _check_pair(gt, pred)
    tp, fp, fn = segmental_counts(extract_segments(gt), extract_segments(pred), k_percent)
    return _f1_from_counts(tp, fp, fn)


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0  # both sides empty of segments; unreachable for T >= 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate(gt, pred, num_classes: int) -> EvalReport:
    gt, pred = _check_pair(gt, pred)
    gt_segs, pred_segs = extract_segments(gt), extract_segments(pred)
    f1k, counts = {}, {}
    for k in F1K_THRESHOLDS:
        tp, fp, fn = segmental_counts(gt_segs, pred_segs, k)
        counts[k] = (tp, fp, fn)
        f1k[k] = _f1_from_counts(tp, fp, fn)
    return EvalReport(
        accuracy=framewise_accuracy(gt, pred),
        f1_macro=f1_frame(gt, pred, "macro", num_classes),
        f1_micro=f1_frame(gt, pred, "micro", num_classes),
        f1_at_k=f1k,
        counts_at_k=counts,
    )


# ---------------------------------------------------------------------------
# timeline rendering (gt track above pred track, one colored rect per segment)
# ---------------------------------------------------------------------------

_PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
            "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]


def timeline_svg(gt, pred, width: int = 800, track_height: int = 28) -> str:
    gt, pred = _check_pair(gt, pred)
    t = gt.size
    height = 2 * track_height + 30
    rows = [('gt', gt, 15), ('pred', pred, 15 + track_height + 6)]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for name, ids, y in rows:
        parts.append(f'<text x="0" y="{y - 3}" font-size="10">{name}</text>')
        for seg in extract_segments(ids):
            x0 = seg.start / t * width
            w = seg.length / t * width
            color = _PALETTE[seg.label % len(_PALETTE)]
            parts.append(
                f'<rect x="{x0:.2f}" y="{y}" width="{w:.2f}" height="{track_height - 8}" '
                f'fill="{color}"><title>class {seg.label}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts)
