"""Desk-scale detection evaluation: IoU, class-wise NMS, interpolated AP,
and the quality-ranked mask-out experiment.

Everything here runs on plain Python floats over handfuls of boxes; exact
reproducibility matters more than throughput.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Box, SceneBundle
from .quality import quality_fields

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class Detection:
    """A scored box; the class label lives on the box itself."""

    box: Box
    score: float

    @property
    def category(self) -> int:
        return self.box.category


@dataclass(frozen=True)
class MaskoutCurve:
    """AP as a function of the percentage of top-quality positions removed."""

    points: tuple[tuple[float, float], ...]

    def to_csv(self) -> str:
        lines = ["ratio_percent,ap"]
        lines += [f"{ratio:.6f},{ap:.6f}" for ratio, ap in self.points]
        return "\n".join(lines) + "\n"


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes (closed geometric areas)."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def nms(detections: Sequence[Detection], threshold: float) -> list[Detection]:
    """Greedy class-wise suppression.

    Detections are visited by descending score (ties keep original order);
    one is kept iff its IoU with every kept detection of the same class is
    strictly below the threshold.  Output preserves that visiting order, so
    it is score-sorted and a subset of the input.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[Detection] = []
    for i in order:
        det = detections[i]
        if all(
            iou(det.box, other.box) < threshold
            for other in kept
            if other.category == det.category
        ):
            kept.append(det)
    return kept


def _class_ap(dets: list[Detection], gts: list[Box], threshold: float) -> float:
    """101-point interpolated AP for one class at one IoU threshold.

    Detections are matched greedily by descending score to the unmatched GT
    with the highest IoU at or above the threshold (ties pick the lowest GT
    index).
    """
    matched = [False] * len(gts)
    flags = []
    for det in dets:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            v = iou(det.box, gt)
            if v >= threshold and v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0:
            matched[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    precisions, recalls = [], []
    tp = 0
    for rank, is_tp in enumerate(flags, start=1):
        if is_tp:
            tp += 1
        precisions.append(tp / rank)
        recalls.append(tp / len(gts))
    total = 0.0
    for i in range(101):
        r = i / 100
        best = 0.0
        for p, rec in zip(precisions, recalls):
            if rec >= r and p > best:
                best = p
        total += best
    return total / 101


def average_precision(
    detections: Sequence[Detection],
    gts: Sequence[Box],
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
) -> float:
    """Mean AP over IoU thresholds and the classes present in the GT.

    Reduction order is fixed: thresholds outer (in the given order), classes
    inner (ascending label), plain float accumulation.  Edge cases: no GT
    and no detections scores 1.0; detections against empty GT score 0.0.
    """
    if not gts:
        return 1.0 if not detections else 0.0
    if not iou_thresholds:
        raise ValueError("need at least one IoU threshold")
    classes = sorted({g.category for g in gts})
    by_class_dets = {
        c: sorted(
            [d for d in detections if d.category == c],
            key=lambda d: -d.score,
        )
        for c in classes
    }
    by_class_gts = {c: [g for g in gts if g.category == c] for c in classes}
    total = 0.0
    n = 0
    for threshold in iou_thresholds:
        for c in classes:
            total += _class_ap(by_class_dets[c], by_class_gts[c], threshold)
            n += 1
    return total / n


def _position_quality(bundle: SceneBundle, xi: float) -> list[tuple[float, int, int, int]]:
    """(quality, level, row, col) for every cell with positive quality.

    Quality is the max over objects (each of which already maxes over
    anchors).
    """
    fields = quality_fields(bundle, xi)
    merged = []
    for lv in bundle.levels:
        i = lv.level_index
        level_max = np.zeros((lv.height, lv.width), dtype=np.float64)
        for f in fields:
            np.maximum(level_max, f.values[i], out=level_max)
        merged.append(level_max)
    out = []
    for i, arr in enumerate(merged):
        for r, c in np.argwhere(arr > 0.0):
            out.append((float(arr[r, c]), i, int(r), int(c)))
    return out


def _all_detections(bundle: SceneBundle, skip: set[tuple[int, int, int]]) -> list[Detection]:
    """One detection per (level, cell, anchor), except masked cells."""
    dets = []
    for lv in bundle.levels:
        i = lv.level_index
        boxes = bundle.teacher_preds.boxes[i].astype(np.float64)
        probs = bundle.teacher_preds.class_probs[i].astype(np.float64)
        anchors = boxes.shape[0]
        for r in range(lv.height):
            for c in range(lv.width):
                if (i, r, c) in skip:
                    continue
                for a in range(anchors):
                    x1, y1, x2, y2 = boxes[a, :, r, c]
                    if not (x1 < x2 and y1 < y2):
                        continue
                    p = probs[a, :, r, c]
                    cat = int(p.argmax())
                    dets.append(
                        Detection(
                            box=Box(float(x1), float(y1), float(x2), float(y2), cat),
                            score=float(p[cat]),
                        )
                    )
    return dets


def maskout_experiment(
    bundle: SceneBundle,
    ratios: Sequence[float],
    xi: float,
    nms_threshold: float = 0.6,
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    workers: int = 1,
) -> MaskoutCurve:
    """AP after removing the predictions of the top X% quality positions.

    Positions with positive quality are ranked by quality descending (ties
    by ascending level/row/col); for each ratio X the top ceil(X% * count)
    positions lose all their predictions before NMS and AP.  Ratio 0 is the
    unmasked baseline.  Ratios are evaluated independently, so `workers`
    only affects wall time, never the curve.
    """
    ratios = list(ratios)
    if not ratios or ratios[0] != 0.0:
        raise ValueError("ratios must start at 0")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise ValueError(f"ratios must strictly increase, got {ratios}")
    if any(not (0.0 <= r <= 100.0) for r in ratios):
        raise ValueError("ratios are percentages in [0, 100]")

    ranked = sorted(
        _position_quality(bundle, xi), key=lambda t: (-t[0], t[1], t[2], t[3])
    )
    count = len(ranked)

    def point_for(ratio: float) -> tuple[float, float]:
        n_masked = math.ceil(ratio / 100.0 * count)
        skip = {(lv, r, c) for _, lv, r, c in ranked[:n_masked]}
        dets = nms(_all_detections(bundle, skip), nms_threshold)
        return (float(ratio), average_precision(dets, bundle.gt, iou_thresholds))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(point_for, ratios))
    else:
        points = [point_for(r) for r in ratios]
    return MaskoutCurve(points=tuple(points))
