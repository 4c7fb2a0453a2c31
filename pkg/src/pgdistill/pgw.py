"""Foreground weighting masks for feature distillation.

The main chain turns each object's quality field into a smooth spatial
weight: pick the top-K quality cells across all levels, fit a 2-d Gaussian
to their centers by maximum likelihood, score those same cells under the
fitted density, max-merge the per-object scores, and normalize each level
by its nonzero count so every level's weights sum to at most one.

Alternative strategies from the ablation study (uniform box filling, fixed
box Gaussians, central regions, raw quality, equal top-K, kernel density)
share the merge and normalization tail.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Box, DistillConfig, LevelGeometry, SceneBundle, box_cell_mask
from .quality import QualityField, quality_fields

# Eigenvalue floor (relative to trace) below which the covariance is
# considered degenerate and gets lam * I added.
_EIG_RTOL = 1e-6
_REG_LAMBDA = 1.0  # pixel^2


class WeightStrategy(enum.Enum):
    BOX = "box"
    BOX_GAUSS = "boxgauss"
    CENTRE = "centre"
    QUALITY = "quality"
    TOPK_EQUAL = "topkeq"
    KDE = "kde"
    PGW = "pgw"


@dataclass(frozen=True)
class RankedPosition:
    """One selected cell: grid address, image-plane center, quality score."""

    level: int
    row: int
    col: int
    coord: tuple[float, float]
    score: float
    object_index: int


@dataclass(frozen=True)
class GaussianFit:
    """MLE mean/covariance of selected cell centers, in pixel units."""

    mu: tuple[float, float]   # (x, y)
    sigma: np.ndarray         # (2, 2), symmetric positive-definite
    regularized: bool


@dataclass(frozen=True)
class WeightMask:
    """Per-level dense weights plus the explicit support set.

    values[l] is (H_l, W_l) float64; support lists (level, row, col) of
    every strictly positive cell, sorted.
    """

    levels: tuple[LevelGeometry, ...]
    values: tuple[np.ndarray, ...]
    support: tuple[tuple[int, int, int], ...]

    def level_sum(self, level: int) -> float:
        return float(self.values[level].sum(dtype=np.float64))


def select_topk(fields: Sequence[QualityField], k: int) -> list[list[RankedPosition]]:
    """Top-k positive-quality cells per object, pooled across all levels.

    Ties break deterministically: higher score first, then ascending
    (level, row, col).  Objects with fewer than k positive cells keep all
    of them; objects with none get an empty list.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    out = []
    for field in fields:
        entries = []
        for lv, values in zip(field.levels, field.values):
            rows, cols = np.nonzero(values > 0.0)
            for r, c in zip(rows.tolist(), cols.tolist()):
                score = float(values[r, c])
                entries.append((-score, lv.level_index, r, c))
        entries.sort()
        picked = []
        for neg_score, level, r, c in entries[:k]:
            lv = field.levels[level]
            picked.append(
                RankedPosition(
                    level=level,
                    row=r,
                    col=c,
                    coord=lv.cell_center(r, c),
                    score=-neg_score,
                    object_index=field.object_index,
                )
            )
        out.append(picked)
    return out


def fit_gaussian(points: Sequence[tuple[float, float]]) -> GaussianFit:
    """Maximum-likelihood 2-d Gaussian over the given points.

    Uses the biased covariance (divide by K, not K-1).  Degenerate spreads
    (single cell, collinear centers) get lam * I added so the covariance is
    always invertible; `regularized` records whether that happened.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] != 2:
        raise ValueError(f"need a non-empty (K, 2) point set, got shape {pts.shape}")
    mu = pts.mean(axis=0)
    centered = pts - mu
    sigma = centered.T @ centered / pts.shape[0]
    sigma = 0.5 * (sigma + sigma.T)
    min_eig = float(np.linalg.eigvalsh(sigma)[0])
    regularized = min_eig < _EIG_RTOL * max(float(np.trace(sigma)), 1.0)
    if regularized:
        sigma = sigma + _REG_LAMBDA * np.eye(2)
    return GaussianFit(mu=(float(mu[0]), float(mu[1])), sigma=sigma, regularized=regularized)


def importance(
    fit: GaussianFit,
    positions: Sequence[RankedPosition],
    levels: Sequence[LevelGeometry],
) -> list[np.ndarray]:
    """Unnormalized Gaussian density at the given cells, zero elsewhere.

    Returns one (H_l, W_l) float64 array per level.  Values lie in (0, 1]
    on the support and hit 1 only where a cell center equals mu exactly.
    """
    out = [np.zeros((lv.height, lv.width), dtype=np.float64) for lv in levels]
    inv = np.linalg.inv(fit.sigma)
    for pos in positions:
        d = np.asarray(pos.coord, dtype=np.float64) - np.asarray(fit.mu, dtype=np.float64)
        m = float(d @ inv @ d)
        out[pos.level][pos.row, pos.col] = np.exp(-0.5 * m)
    return out


def merge_importance(per_object: Sequence[Sequence[np.ndarray]]) -> list[np.ndarray]:
    """Elementwise max across objects, level by level."""
    if not per_object:
        raise ValueError("need at least one object's importance arrays")
    n_levels = len(per_object[0])
    for arrays in per_object:
        if len(arrays) != n_levels:
            raise ValueError("importance arrays cover differing level counts")
        for a, ref in zip(arrays, per_object[0]):
            if a.shape != ref.shape:
                raise ValueError(
                    f"importance shape mismatch: {a.shape} vs {ref.shape}"
                )
    merged = [np.array(a, dtype=np.float64, copy=True) for a in per_object[0]]
    for arrays in per_object[1:]:
        for out, a in zip(merged, arrays):
            np.maximum(out, a, out=out)
    return merged


def normalize_mask(
    merged: Sequence[np.ndarray], levels: Sequence[LevelGeometry]
) -> WeightMask:
    """Divide each level by its own nonzero count (all-zero levels stay zero)."""
    values = []
    support = []
    for lv, arr in zip(levels, merged):
        arr = np.asarray(arr, dtype=np.float64)
        positive = arr > 0.0
        count = int(positive.sum())
        scaled = arr / count if count else np.zeros_like(arr)
        values.append(scaled)
        for r, c in np.argwhere(positive):
            support.append((lv.level_index, int(r), int(c)))
    return WeightMask(
        levels=tuple(levels), values=tuple(values), support=tuple(sorted(support))
    )


def _zero_importance(levels: Sequence[LevelGeometry]) -> list[np.ndarray]:
    return [np.zeros((lv.height, lv.width), dtype=np.float64) for lv in levels]


def pgw_mask(bundle: SceneBundle, xi: float, k: int) -> WeightMask:
    """Full prediction-guided chain for one bundle head.

    Objects with no positive-quality cell contribute nothing; a bundle with
    no GT yields an all-zero mask.
    """
    fields = quality_fields(bundle, xi)
    selections = select_topk(fields, k)
    per_object = []
    for picked in selections:
        if not picked:
            continue
        fit = fit_gaussian([p.coord for p in picked])
        per_object.append(importance(fit, picked, bundle.levels))
    if not per_object:
        per_object = [_zero_importance(bundle.levels)]
    return normalize_mask(merge_importance(per_object), bundle.levels)


def _silverman_bandwidth(coords: np.ndarray) -> tuple[float, float]:
    """Per-dimension Silverman rule, floored at one pixel."""
    k = coords.shape[0]
    factor = 1.06 * k ** (-0.2)
    hx = max(factor * float(coords[:, 0].std()), 1.0)
    hy = max(factor * float(coords[:, 1].std()), 1.0)
    return hx, hy


def _object_strategy_importance(
    strategy: WeightStrategy,
    bundle: SceneBundle,
    box: Box,
    field: QualityField,
    picked: Sequence[RankedPosition],
) -> list[np.ndarray] | None:
    """Importance arrays for one object, or None when it contributes nothing."""
    levels = bundle.levels

    if strategy is WeightStrategy.BOX:
        return [box_cell_mask(lv, box).astype(np.float64) for lv in levels]

    if strategy is WeightStrategy.BOX_GAUSS:
        cx, cy = box.center
        sx, sy = box.width / 4.0, box.height / 4.0
        out = []
        for lv in levels:
            xs, ys = lv.center_grids()
            g = np.exp(
                -((xs[None, :] - cx) ** 2 / (2.0 * sx * sx)
                  + (ys[:, None] - cy) ** 2 / (2.0 * sy * sy))
            )
            g[~box_cell_mask(lv, box)] = 0.0
            out.append(g)
        return out

    if strategy is WeightStrategy.CENTRE:
        cx, cy = box.center
        half_w, half_h = 0.1 * box.width, 0.1 * box.height
        region = Box(cx - half_w, cy - half_h, cx + half_w, cy + half_h,
                     category=box.category)
        return [box_cell_mask(lv, region).astype(np.float64) for lv in levels]

    if strategy is WeightStrategy.QUALITY:
        # The field is already zero outside the box.
        return [np.array(v, copy=True) for v in field.values]

    if not picked:
        return None

    if strategy is WeightStrategy.TOPK_EQUAL:
        out = _zero_importance(levels)
        for pos in picked:
            out[pos.level][pos.row, pos.col] = 1.0
        return out

    if strategy is WeightStrategy.KDE:
        coords = np.asarray([p.coord for p in picked], dtype=np.float64)
        hx, hy = _silverman_bandwidth(coords)
        density = np.exp(
            -((coords[:, None, 0] - coords[None, :, 0]) ** 2 / (2.0 * hx * hx)
              + (coords[:, None, 1] - coords[None, :, 1]) ** 2 / (2.0 * hy * hy))
        ).sum(axis=1)
        density /= density.max()
        out = _zero_importance(levels)
        for pos, d in zip(picked, density):
            out[pos.level][pos.row, pos.col] = d
        return out

    if strategy is WeightStrategy.PGW:
        fit = fit_gaussian([p.coord for p in picked])
        return importance(fit, picked, levels)

    raise ValueError(f"unknown strategy {strategy!r}")


def strategy_mask(
    bundle: SceneBundle,
    strategy: WeightStrategy,
    config: DistillConfig,
    head: str = "cls",
) -> WeightMask:
    """Weight mask for any of the ablation strategies.

    `head` selects which xi drives the quality-based strategies ("cls" uses
    xi_cls, "reg" uses xi_reg).  All strategies share the max-merge and
    per-level count normalization.
    """
    if head not in ("cls", "reg"):
        raise ValueError(f"head must be 'cls' or 'reg', got {head!r}")
    xi = config.xi_cls if head == "cls" else config.xi_reg
    fields = quality_fields(bundle, xi)
    selections = select_topk(fields, config.k)
    per_object = []
    for box, field, picked in zip(bundle.gt, fields, selections):
        arrays = _object_strategy_importance(strategy, bundle, box, field, picked)
        if arrays is not None:
            per_object.append(arrays)
    if not per_object:
        per_object = [_zero_importance(bundle.levels)]
    return normalize_mask(merge_importance(per_object), bundle.levels)
