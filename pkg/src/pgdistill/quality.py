"""Prediction quality scores: how well each cell's prediction covers a GT box.

A prediction at a cell scores q = 1[center inside box] * p^(1-xi) * iou^xi,
a classification/localization compromise steered by xi.  Per-object fields
take the max over the anchors at each cell; per-image heatmaps additionally
take the max over objects and levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Box, LevelGeometry, SceneBundle, box_cell_mask


def box_quality(p: float, iou: float, inside: bool, xi: float) -> float:
    """Quality of one prediction against one GT box.

    p is the predicted probability for the GT category, iou the overlap
    between predicted and GT box, both in [0, 1]; xi in [0, 1] balances the
    two (xi=0 scores by probability alone, xi=1 by overlap alone).  The
    convention 0^0 = 1 applies, so the reduced forms are exact.
    """
    if not inside:
        return 0.0
    return p ** (1.0 - xi) * iou ** xi


def _pairwise_iou_with_box(box: Box, boxes: np.ndarray) -> np.ndarray:
    """IoU between one GT box and an (A, 4, H, W) array of predicted boxes.

    Predicted boxes with non-positive extent get area zero, hence IoU zero.
    """
    b = boxes.astype(np.float64)
    x1, y1, x2, y2 = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    iw = np.minimum(x2, box.x2) - np.maximum(x1, box.x1)
    ih = np.minimum(y2, box.y2) - np.maximum(y1, box.y1)
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    pred_area = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    union = pred_area + box.area - inter
    # GT area is strictly positive, so union never hits zero.
    return inter / union


@dataclass(frozen=True)
class QualityField:
    """Per-level max-over-anchors quality arrays for a single GT object."""

    object_index: int
    levels: tuple[LevelGeometry, ...]
    values: tuple[np.ndarray, ...]

    def total_mass(self) -> float:
        return float(sum(v.sum(dtype=np.float64) for v in self.values))


def object_quality_field(bundle: SceneBundle, obj: Box | int, xi: float) -> QualityField:
    """Quality field of one GT object across all pyramid levels.

    `obj` is either a GT box of the bundle or its index into bundle.gt.
    """
    if isinstance(obj, Box):
        try:
            index = bundle.gt.index(obj)
        except ValueError:
            raise ValueError("object is not one of the bundle's GT boxes") from None
    else:
        index = int(obj)
        if not (0 <= index < len(bundle.gt)):
            raise IndexError(f"object index {index} out of range for {len(bundle.gt)} boxes")
    box = bundle.gt[index]

    per_level = []
    for lv in bundle.levels:
        i = lv.level_index
        inside = box_cell_mask(lv, box)
        probs = bundle.teacher_preds.class_probs[i][:, box.category].astype(np.float64)
        iou = _pairwise_iou_with_box(box, bundle.teacher_preds.boxes[i])
        q = np.power(probs, 1.0 - xi) * np.power(iou, xi)
        q = q.max(axis=0)
        q[~inside] = 0.0
        per_level.append(q)
    return QualityField(object_index=index, levels=bundle.levels, values=tuple(per_level))


def quality_fields(bundle: SceneBundle, xi: float) -> list[QualityField]:
    return [object_quality_field(bundle, i, xi) for i in range(len(bundle.gt))]


def quality_heatmap(bundle: SceneBundle, xi: float) -> np.ndarray:
    """Max-over-objects-and-levels quality, rendered on the finest grid.

    Cells of coarser levels are replicated over the block of finest cells
    whose centers they cover (nearest-cell replication for non-integer
    stride ratios).
    """
    finest = bundle.levels[0]
    out = np.zeros((finest.height, finest.width), dtype=np.float64)
    fields = quality_fields(bundle, xi)
    for lv in bundle.levels:
        i = lv.level_index
        merged = np.zeros((lv.height, lv.width), dtype=np.float64)
        for field in fields:
            np.maximum(merged, field.values[i], out=merged)
        if i == 0:
            np.maximum(out, merged, out=out)
            continue
        # Map each finest cell center to the coarse cell containing it.
        rows = np.floor(finest.stride * (np.arange(finest.height) + 0.5) / lv.stride)
        cols = np.floor(finest.stride * (np.arange(finest.width) + 0.5) / lv.stride)
        rows = np.clip(rows.astype(int), 0, lv.height - 1)
        cols = np.clip(cols.astype(int), 0, lv.width - 1)
        np.maximum(out, merged[np.ix_(rows, cols)], out=out)
    return out
