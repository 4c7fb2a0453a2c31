"""Spatial and channel attention maps, plus the background mask.

Spatial attention is a temperature softmax over positions of the
channel-summed absolute feature map, rescaled by H*W so it averages to 1.
Channel attention is a per-location softmax over channels of the absolute
features, rescaled by C.  Both use the max-subtraction softmax and 64-bit
accumulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureTensor, LevelGeometry, SceneBundle, box_cell_mask


def _scaled_softmax(values: np.ndarray, axis, scale: int) -> np.ndarray:
    # exp * (scale / sum) rather than scale * (exp / sum): for constant input
    # the parenthesized factor is exactly 1.0, so the identity map is exact
    shifted = values - values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e * (scale / e.sum(axis=axis, keepdims=True))


def spatial_attention(feats: FeatureTensor | np.ndarray, tau: float) -> np.ndarray:
    """(H, W) spatial attention; sums to H*W, so the mean is exactly 1."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    arr = feats.values if isinstance(feats, FeatureTensor) else np.asarray(feats)
    arr = arr.astype(np.float64)
    c, h, w = arr.shape
    s = np.abs(arr).sum(axis=0) / tau
    return _scaled_softmax(s.reshape(-1), 0, h * w).reshape(h, w)


def channel_attention(feats: FeatureTensor | np.ndarray, tau: float) -> np.ndarray:
    """(C, H, W) channel attention; each location's channel mean is exactly 1."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    arr = feats.values if isinstance(feats, FeatureTensor) else np.asarray(feats)
    arr = arr.astype(np.float64)
    return _scaled_softmax(np.abs(arr) / tau, 0, arr.shape[0])


@dataclass(frozen=True)
class AttentionPair:
    """Spatial and channel attention of one feature map at temperature tau."""

    spatial: np.ndarray  # (H, W)
    channel: np.ndarray  # (C, H, W)
    tau: float


def attention_pair(feats: FeatureTensor | np.ndarray, tau: float) -> AttentionPair:
    return AttentionPair(
        spatial=spatial_attention(feats, tau),
        channel=channel_attention(feats, tau),
        tau=tau,
    )


@dataclass(frozen=True)
class BackgroundMask:
    """Per-level weights over cells whose centers lie in no GT box.

    Each level is the background indicator divided by its own cell count,
    so a level with any background sums to 1; levels fully covered by boxes
    stay all-zero.
    """

    levels: tuple[LevelGeometry, ...]
    values: tuple[np.ndarray, ...]

    def level_count(self, level: int) -> int:
        return int((self.values[level] > 0.0).sum())


def background_mask(bundle: SceneBundle) -> BackgroundMask:
    values = []
    for lv in bundle.levels:
        foreground = np.zeros((lv.height, lv.width), dtype=bool)
        for box in bundle.gt:
            foreground |= box_cell_mask(lv, box)
        indicator = (~foreground).astype(np.float64)
        total = indicator.sum(dtype=np.float64)
        values.append(indicator / total if total > 0 else indicator)
    return BackgroundMask(levels=bundle.levels, values=tuple(values))
