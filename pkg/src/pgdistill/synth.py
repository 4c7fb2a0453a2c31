"""Seeded synthetic scene bundles with controllable quality structure.

Each object gets a quality bump centered on a (possibly offset) peak cell:
the teacher's class probability and the overlap of its predicted boxes both
follow the bump, so the resulting quality field has a single known mode.
quality_concentration sharpens the bump (high values put nearly all mass on
a few cells), center_offset_fraction moves the peak away from the box
center, and student_noise controls how far student features drift from the
teacher's.

Reproducibility contract: the same spec yields a bit-identical bundle under
this implementation (cross-implementation equality is not promised).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import (
    Box,
    FeatureTensor,
    LevelGeometry,
    PredictionField,
    SceneBundle,
    ValidationError,
)

_PEAK_PROB = 0.9
_BASE_PROB = 0.01
_MAX_PLACEMENT_TRIES = 200


class GenerationError(ValueError):
    """The requested scene cannot be generated (e.g. objects cannot fit)."""


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    image_width: int = 96
    image_height: int = 96
    strides: tuple[int, ...] = (8, 16)
    num_objects: int = 1
    num_classes: int = 4
    channels: int = 4
    quality_concentration: float = 4.0
    center_offset_fraction: float = 0.0
    student_noise: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        problems = []
        if self.seed < 0:
            problems.append(f"seed must be >= 0, got {self.seed}")
        if self.image_width < 1 or self.image_height < 1:
            problems.append("image dims must be >= 1")
        if not self.strides or any(s < 1 for s in self.strides):
            problems.append(f"strides must be positive, got {self.strides}")
        elif any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            problems.append(f"strides must strictly increase, got {self.strides}")
        if self.num_objects < 0:
            problems.append(f"num_objects must be >= 0, got {self.num_objects}")
        if self.num_classes < 1:
            problems.append(f"num_classes must be >= 1, got {self.num_classes}")
        if self.channels < 1:
            problems.append(f"channels must be >= 1, got {self.channels}")
        if not (self.quality_concentration > 0):
            problems.append("quality_concentration must be > 0")
        if not (0.0 <= self.center_offset_fraction <= 0.5):
            problems.append("center_offset_fraction must lie in [0, 0.5]")
        if self.student_noise < 0:
            problems.append("student_noise must be >= 0")
        if problems:
            raise ValidationError(problems)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ValidationError([f"unknown spec keys: {sorted(unknown)}"])
        if "strides" in data:
            data["strides"] = tuple(data["strides"])
        return cls(**data)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["strides"] = list(self.strides)
        return doc

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _contains(a: Box, b: Box) -> bool:
    return a.x1 <= b.x1 and a.y1 <= b.y1 and a.x2 >= b.x2 and a.y2 >= b.y2


def _sample_boxes(rng: np.random.Generator, spec: SynthSpec) -> list[Box]:
    """Integer-coordinate boxes, each at least two finest-stride cells wide,
    none fully containing another.  Coordinates are exact in float32."""
    s0 = spec.strides[0]
    min_dim = 2 * s0
    max_dim = max(min_dim, int(0.45 * min(spec.image_width, spec.image_height)))
    if min_dim > spec.image_width or min_dim > spec.image_height:
        raise GenerationError(
            f"image {spec.image_width}x{spec.image_height} too small for "
            f"objects of minimum size {min_dim}"
        )
    boxes: list[Box] = []
    for obj in range(spec.num_objects):
        placed = False
        for _ in range(_MAX_PLACEMENT_TRIES):
            w = int(rng.integers(min_dim, min(max_dim, spec.image_width) + 1))
            h = int(rng.integers(min_dim, min(max_dim, spec.image_height) + 1))
            x1 = int(rng.integers(0, spec.image_width - w + 1))
            y1 = int(rng.integers(0, spec.image_height - h + 1))
            cat = int(rng.integers(0, spec.num_classes))
            candidate = Box(float(x1), float(y1), float(x1 + w), float(y1 + h), cat)
            if any(_contains(candidate, b) or _contains(b, candidate) for b in boxes):
                continue
            boxes.append(candidate)
            placed = True
            break
        if not placed:
            raise GenerationError(
                f"could not place object {obj} after {_MAX_PLACEMENT_TRIES} tries"
            )
    return boxes


def _peak_point(rng: np.random.Generator, spec: SynthSpec, box: Box,
                finest: LevelGeometry) -> tuple[float, float]:
    """Peak displaced from the box center, snapped to an in-box finest-level
    cell center so the bump's mode coincides with a real grid cell."""
    cx, cy = box.center
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    px = cx + spec.center_offset_fraction * box.width * math.cos(angle)
    py = cy + spec.center_offset_fraction * box.height * math.sin(angle)
    xs, ys = finest.center_grids()
    in_x = np.nonzero((xs >= box.x1) & (xs <= box.x2))[0]
    in_y = np.nonzero((ys >= box.y1) & (ys <= box.y2))[0]
    # Guaranteed non-empty: every box spans at least two finest cells per axis.
    best_x = xs[in_x[np.argmin(np.abs(xs[in_x] - px))]]
    best_y = ys[in_y[np.argmin(np.abs(ys[in_y] - py))]]
    return float(best_x), float(best_y)


def _bump(spec: SynthSpec, box: Box, peak: tuple[float, float],
          xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Quality profile in (0, 1] over a center grid: Gaussian bump on a floor.

    The floor keeps every in-box cell strictly positive so position counts
    stay stable; it shrinks exponentially with the concentration.
    """
    conc = spec.quality_concentration
    sx = box.width / (2.0 * conc)
    sy = box.height / (2.0 * conc)
    floor = math.exp(-2.0 * conc)
    g = np.exp(
        -0.5 * (((xs[None, :] - peak[0]) / sx) ** 2 + ((ys[:, None] - peak[1]) / sy) ** 2)
    )
    return floor + (1.0 - floor) * g


def _scaled_box(box: Box, factor: float) -> tuple[float, float, float, float]:
    """Shrink about the box center; IoU with the original equals factor^2."""
    cx, cy = box.center
    hw = 0.5 * box.width * factor
    hh = 0.5 * box.height * factor
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def generate_bundle(spec: SynthSpec) -> SceneBundle:
    rng = np.random.default_rng(spec.seed)
    levels = tuple(
        LevelGeometry(
            level_index=i,
            stride=s,
            height=-(-spec.image_height // s),
            width=-(-spec.image_width // s),
        )
        for i, s in enumerate(spec.strides)
    )
    boxes = _sample_boxes(rng, spec)
    peaks = [_peak_point(rng, spec, b, levels[0]) for b in boxes]

    pred_boxes, pred_probs, qmaps = [], [], []
    for lv in levels:
        xs, ys = lv.center_grids()
        h, w = lv.height, lv.width
        s = float(lv.stride)

        # Default: one stride-sized prediction per cell, tiny probabilities.
        pb = np.empty((1, 4, h, w), dtype=np.float64)
        pb[0, 0] = xs[None, :] - s / 2
        pb[0, 1] = ys[:, None] - s / 2
        pb[0, 2] = xs[None, :] + s / 2
        pb[0, 3] = ys[:, None] + s / 2
        pp = np.full((1, spec.num_classes, h, w), _BASE_PROB, dtype=np.float64)

        owner_q = np.zeros((h, w), dtype=np.float64)
        qmap = np.zeros((h, w), dtype=np.float64)
        for box, peak in zip(boxes, peaks):
            inside = ((xs >= box.x1) & (xs <= box.x2))[None, :] & (
                (ys >= box.y1) & (ys <= box.y2)
            )[:, None]
            q = _bump(spec, box, peak, xs, ys)
            q_in = np.where(inside, q, 0.0)
            np.maximum(qmap, q_in, out=qmap)
            pp[0, box.category] = np.maximum(pp[0, box.category], _PEAK_PROB * q_in)
            # The best-quality object at each cell owns its predicted box.
            claim = q_in > owner_q
            if claim.any():
                factors = np.sqrt(q)
                for r, c in np.argwhere(claim):
                    pb[0, :, r, c] = _scaled_box(box, float(factors[r, c]))
                owner_q[claim] = q_in[claim]
        pred_boxes.append(pb.astype(np.float32))
        pred_probs.append(pp.astype(np.float32))
        qmaps.append(qmap)

    def head_features(noise: float | None) -> list[np.ndarray]:
        """One draw of per-level feature maps; noise=None means teacher."""
        out = []
        for lv, qmap in zip(levels, qmaps):
            h, w = lv.height, lv.width
            xn = (np.arange(w, dtype=np.float64) + 0.5) / w
            yn = (np.arange(h, dtype=np.float64) + 0.5) / h
            a = rng.standard_normal(spec.channels)
            b = rng.standard_normal(spec.channels)
            fx = rng.uniform(0.5, 2.5, spec.channels)
            fy = rng.uniform(0.5, 2.5, spec.channels)
            phase = rng.uniform(0.0, 2.0 * math.pi, spec.channels)
            waves = np.cos(
                2.0 * math.pi
                * (fx[:, None, None] * xn[None, None, :] + fy[:, None, None] * yn[None, :, None])
                + phase[:, None, None]
            )
            feats = (
                a[:, None, None] * qmap[None]
                + b[:, None, None] * waves
                + 0.05 * rng.standard_normal((spec.channels, h, w))
            )
            out.append(feats.astype(np.float32))
        return out

    teacher_cls = head_features(None)
    teacher_reg = head_features(None)

    def student_from(teacher: list[np.ndarray]) -> list[np.ndarray]:
        out = []
        for t in teacher:
            noise = rng.standard_normal(t.shape).astype(np.float32)
            out.append((t + np.float32(spec.student_noise) * noise).astype(np.float32))
        return out

    student_cls = student_from(teacher_cls)
    student_reg = student_from(teacher_reg)

    return SceneBundle(
        image_width=spec.image_width,
        image_height=spec.image_height,
        levels=levels,
        gt=tuple(boxes),
        teacher_cls_feats=tuple(FeatureTensor(t) for t in teacher_cls),
        teacher_reg_feats=tuple(FeatureTensor(t) for t in teacher_reg),
        student_cls_feats=tuple(FeatureTensor(t) for t in student_cls),
        student_reg_feats=tuple(FeatureTensor(t) for t in student_reg),
        teacher_preds=PredictionField(
            boxes=tuple(pred_boxes), class_probs=tuple(pred_probs)
        ),
        num_classes=spec.num_classes,
    )
