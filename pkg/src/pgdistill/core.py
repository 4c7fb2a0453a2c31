"""Shared domain types: pyramid geometry, boxes, feature tensors, configuration.

Every module in the package goes through these types, so the conventions
pinned here (half-cell centers, closed box membership, float32 storage)
hold artifact-wide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """A bundle (or one of its parts) violates an invariant.

    Carries the full list of violations, not just the first one found.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = [str(v) for v in violations]
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class LevelGeometry:
    """One pyramid level: a stride-s grid of height x width cells."""

    level_index: int
    stride: int
    height: int
    width: int

    def __post_init__(self):
        problems = []
        if self.level_index < 0:
            problems.append(f"level_index must be >= 0, got {self.level_index}")
        if self.stride < 1:
            problems.append(f"stride must be >= 1, got {self.stride}")
        if self.height < 1 or self.width < 1:
            problems.append(
                f"grid dims must be >= 1, got {self.height}x{self.width}"
            )
        if problems:
            raise ValidationError(problems)

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """Image-plane center of a grid cell, using the half-cell convention.

        A cell covers stride x stride pixels; its center sits at
        (stride * (col + 0.5), stride * (row + 0.5)).  Raises IndexError
        when (row, col) is outside the grid.
        """
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError(
                f"cell ({row}, {col}) outside {self.height}x{self.width} grid"
            )
        return (self.stride * (col + 0.5), self.stride * (row + 0.5))

    def center_grids(self) -> tuple[np.ndarray, np.ndarray]:
        """(xs, ys) center coordinates: xs has shape (W,), ys has shape (H,)."""
        xs = self.stride * (np.arange(self.width, dtype=np.float64) + 0.5)
        ys = self.stride * (np.arange(self.height, dtype=np.float64) + 0.5)
        return xs, ys


@dataclass(frozen=True)
class Box:
    """Axis-aligned ground-truth box with a category label.

    Corner convention (x1, y1, x2, y2) with x1 < x2 and y1 < y2; membership
    tests are closed on all edges.
    """

    x1: float
    y1: float
    x2: float
    y2: float
    category: int

    def __post_init__(self):
        problems = []
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(v) for v in vals):
            problems.append(f"box coordinates must be finite, got {vals}")
        elif not (self.x1 < self.x2 and self.y1 < self.y2):
            problems.append(f"box must have positive extent, got {vals}")
        if self.category < 0:
            problems.append(f"category must be >= 0, got {self.category}")
        if problems:
            raise ValidationError(problems)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


def point_in_box(point: tuple[float, float], box: Box) -> bool:
    """Closed-box membership: edges and corners count as inside."""
    x, y = point
    return box.x1 <= x <= box.x2 and box.y1 <= y <= box.y2


def cell_center(level: LevelGeometry, row: int, col: int) -> tuple[float, float]:
    return level.cell_center(row, col)


def box_cell_mask(level: LevelGeometry, box: Box) -> np.ndarray:
    """(H, W) bool array: True where the cell center lies inside the box.

    This is the single membership definition used everywhere (quality
    indicator, weighting strategies, background mask).
    """
    xs, ys = level.center_grids()
    in_x = (xs >= box.x1) & (xs <= box.x2)
    in_y = (ys >= box.y1) & (ys <= box.y2)
    return in_y[:, None] & in_x[None, :]


def _as_float32(values, what: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != ndim:
        raise ValidationError([f"{what} must be {ndim}-dimensional, got {arr.ndim}"])
    arr = arr.astype(np.float32, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """A (C, H, W) float32 feature map.  Values must be finite."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float32(self.values, "feature tensor", 3)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(["feature tensor contains non-finite values"])
        if min(arr.shape) < 1:
            raise ValidationError([f"feature tensor dims must be >= 1, got {arr.shape}"])
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureTensor):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


@dataclass(frozen=True, eq=False)
class PredictionField:
    """Decoded teacher predictions on each pyramid level.

    boxes[l] has shape (A, 4, H_l, W_l) holding (x1, y1, x2, y2) in image
    coordinates; class_probs[l] has shape (A, num_classes, H_l, W_l) with
    independent per-class probabilities in [0, 1].
    """

    boxes: tuple[np.ndarray, ...]
    class_probs: tuple[np.ndarray, ...]

    def __post_init__(self):
        problems = []
        boxes = tuple(_as_float32(b, f"pred boxes level {i}", 4) for i, b in enumerate(self.boxes))
        probs = tuple(
            _as_float32(p, f"pred probs level {i}", 4) for i, p in enumerate(self.class_probs)
        )
        if len(boxes) != len(probs):
            problems.append(
                f"boxes cover {len(boxes)} levels but class_probs cover {len(probs)}"
            )
        for i, (b, p) in enumerate(zip(boxes, probs)):
            if b.shape[1] != 4:
                problems.append(f"pred boxes level {i}: axis 1 must be 4, got {b.shape}")
            if not np.all(np.isfinite(b)):
                problems.append(f"pred boxes level {i}: non-finite coordinates")
            if not np.all(np.isfinite(p)):
                problems.append(f"pred probs level {i}: non-finite values")
            elif p.size and (p.min() < 0.0 or p.max() > 1.0):
                problems.append(f"pred probs level {i}: values outside [0, 1]")
            if b.shape[0] != p.shape[0]:
                problems.append(
                    f"level {i}: anchor counts differ between boxes ({b.shape[0]}) "
                    f"and probs ({p.shape[0]})"
                )
            if b.shape[2:] != p.shape[2:]:
                problems.append(
                    f"level {i}: grid dims differ between boxes {b.shape[2:]} "
                    f"and probs {p.shape[2:]}"
                )
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "class_probs", probs)

    @property
    def anchors_per_loc(self) -> int:
        return self.boxes[0].shape[0] if self.boxes else 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, PredictionField):
            return NotImplemented
        if len(self.boxes) != len(other.boxes):
            return False
        for a, b in zip(self.boxes + self.class_probs, other.boxes + other.class_probs):
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """One image's worth of distillation inputs.

    Holds the pyramid geometry, GT boxes, teacher/student head feature maps
    for both the classification and regression branches, and the decoded
    teacher predictions.  Construction validates every invariant and raises
    ValidationError listing all violations at once.
    """

    image_width: int
    image_height: int
    levels: tuple[LevelGeometry, ...]
    gt: tuple[Box, ...]
    teacher_cls_feats: tuple[FeatureTensor, ...]
    teacher_reg_feats: tuple[FeatureTensor, ...]
    student_cls_feats: tuple[FeatureTensor, ...]
    student_reg_feats: tuple[FeatureTensor, ...]
    teacher_preds: PredictionField
    num_classes: int

    def __post_init__(self):
        for name in (
            "levels",
            "gt",
            "teacher_cls_feats",
            "teacher_reg_feats",
            "student_cls_feats",
            "student_reg_feats",
        ):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        problems = self._collect_violations()
        if problems:
            raise ValidationError(problems)

    def _collect_violations(self) -> list[str]:
        problems = []
        if self.image_width < 1 or self.image_height < 1:
            problems.append(
                f"image dims must be >= 1, got {self.image_width}x{self.image_height}"
            )
        if self.num_classes < 1:
            problems.append(f"num_classes must be >= 1, got {self.num_classes}")
        if not self.levels:
            problems.append("bundle must have at least one level")
            return problems
        for pos, lv in enumerate(self.levels):
            if lv.level_index != pos:
                problems.append(
                    f"levels must be ordered by level_index, found {lv.level_index} at position {pos}"
                )
        strides = [lv.stride for lv in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            problems.append(f"strides must strictly increase with level, got {strides}")

        n = len(self.levels)
        for name in (
            "teacher_cls_feats",
            "teacher_reg_feats",
            "student_cls_feats",
            "student_reg_feats",
        ):
            feats = getattr(self, name)
            if len(feats) != n:
                problems.append(f"{name} covers {len(feats)} levels, expected {n}")
                continue
            for lv, f in zip(self.levels, feats):
                if (f.height, f.width) != (lv.height, lv.width):
                    problems.append(
                        f"{name} level {lv.level_index}: grid {f.height}x{f.width} "
                        f"does not match geometry {lv.height}x{lv.width}"
                    )
        for t_name, s_name in (
            ("teacher_cls_feats", "student_cls_feats"),
            ("teacher_reg_feats", "student_reg_feats"),
        ):
            t, s = getattr(self, t_name), getattr(self, s_name)
            if len(t) == n and len(s) == n:
                for lv, (ft, fs) in zip(self.levels, zip(t, s)):
                    if (ft.height, ft.width) != (fs.height, fs.width):
                        problems.append(
                            f"level {lv.level_index}: teacher/student grids differ "
                            f"for {t_name.split('_')[1]} head"
                        )

        preds = self.teacher_preds
        if len(preds.boxes) != n:
            problems.append(f"teacher_preds cover {len(preds.boxes)} levels, expected {n}")
        else:
            anchors = {b.shape[0] for b in preds.boxes}
            if len(anchors) > 1:
                problems.append(f"anchors_per_loc differs across levels: {sorted(anchors)}")
            for lv, (b, p) in zip(self.levels, zip(preds.boxes, preds.class_probs)):
                if b.shape[2:] != (lv.height, lv.width):
                    problems.append(
                        f"pred boxes level {lv.level_index}: grid {b.shape[2:]} does not "
                        f"match geometry {lv.height}x{lv.width}"
                    )
                if p.shape[1] != self.num_classes:
                    problems.append(
                        f"pred probs level {lv.level_index}: {p.shape[1]} classes, "
                        f"expected {self.num_classes}"
                    )

        for i, box in enumerate(self.gt):
            if not (
                0.0 <= box.x1 and box.x2 <= self.image_width
                and 0.0 <= box.y1 and box.y2 <= self.image_height
            ):
                problems.append(f"gt box {i} outside image bounds")
            if box.category >= self.num_classes:
                problems.append(
                    f"gt box {i} category {box.category} >= num_classes {self.num_classes}"
                )
        return problems

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneBundle):
            return NotImplemented
        return (
            self.image_width == other.image_width
            and self.image_height == other.image_height
            and self.levels == other.levels
            and self.gt == other.gt
            and self.teacher_cls_feats == other.teacher_cls_feats
            and self.teacher_reg_feats == other.teacher_reg_feats
            and self.student_cls_feats == other.student_cls_feats
            and self.student_reg_feats == other.student_reg_feats
            and self.teacher_preds == other.teacher_preds
            and self.num_classes == other.num_classes
        )


@dataclass(frozen=True)
class DistillConfig:
    """Hyperparameters for the weighting masks and the distillation losses.

    beta and gamma default to 0.5 * alpha and 1.6 * alpha when left unset,
    so tuning alpha alone keeps the published ratios.
    """

    xi_cls: float = 0.8
    xi_reg: float = 0.6
    k: int = 30
    alpha: float = 0.8
    beta: float | None = None
    gamma: float | None = None
    delta: float = 0.0008
    tau: float = 0.8

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 0.5 * self.alpha)
        if self.gamma is None:
            object.__setattr__(self, "gamma", 1.6 * self.alpha)
        problems = []
        for name in ("xi_cls", "xi_reg"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                problems.append(f"{name} must lie in [0, 1], got {v}")
        if self.k < 1:
            problems.append(f"k must be >= 1, got {self.k}")
        for name in ("alpha", "beta", "gamma", "delta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                problems.append(f"{name} must be a nonnegative real, got {v}")
        if not (np.isfinite(self.tau) and self.tau > 0.0):
            problems.append(f"tau must be > 0, got {self.tau}")
        if problems:
            raise ValidationError(problems)

    @classmethod
    def from_dict(cls, data: dict) -> "DistillConfig":
        allowed = {"xi_cls", "xi_reg", "k", "alpha", "beta", "gamma", "delta", "tau"}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError([f"unknown config keys: {sorted(unknown)}"])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "xi_cls": self.xi_cls,
            "xi_reg": self.xi_reg,
            "k": self.k,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "delta": self.delta,
            "tau": self.tau,
        }
