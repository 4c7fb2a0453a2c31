"""Distillation losses over bundles, their analytic gradients, and a
finite-difference checker.

Four terms, summed plainly over pyramid levels:

  fea_cls: (alpha * M_cls + beta * N) weighted, teacher-attention scaled,
           squared feature gap on the classification head.
  fea_reg: gamma * M_reg weighted, teacher-channel-attention scaled,
           squared feature gap on the regression head.
  att_cls: delta-scaled L1 gaps between teacher and student attention maps
           (spatial term averaged over H*W, channel term over C*H*W).
  att_reg: delta-scaled L1 channel-attention gap restricted to the
           regression mask's support.

All reductions run in float64; reports are bit-reproducible for a given
bundle and config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import (
    AttentionPair,
    BackgroundMask,
    attention_pair,
    background_mask,
    channel_attention,
)
from .core import DistillConfig, FeatureTensor, SceneBundle
from .pgw import WeightMask, pgw_mask


def _arrays(feats: Sequence[FeatureTensor | np.ndarray]) -> list[np.ndarray]:
    out = []
    for f in feats:
        a = f.values if isinstance(f, FeatureTensor) else np.asarray(f)
        out.append(a.astype(np.float64))
    return out


def _check_levels(*seqs, what: str) -> None:
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"{what}: inputs cover differing level counts {sorted(lengths)}")


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _fea_cls_level(t, s, m, n, p_t, a_t, alpha, beta) -> float:
    _check_same_shape(t, s, "fea_cls features")
    weight = alpha * m + beta * n
    return float(np.sum(weight[None] * p_t[None] * a_t * (t - s) ** 2, dtype=np.float64))


def _fea_reg_level(t, s, m, a_t, gamma) -> float:
    _check_same_shape(t, s, "fea_reg features")
    return float(np.sum(gamma * m[None] * a_t * (t - s) ** 2, dtype=np.float64))


def _att_cls_level(p_t, p_s, a_t, a_s, delta) -> float:
    _check_same_shape(a_t, a_s, "att_cls channel attention")
    c, h, w = a_t.shape
    spatial = np.sum(np.abs(p_t - p_s), dtype=np.float64) / (h * w)
    channel = np.sum(np.abs(a_t - a_s), dtype=np.float64) / (c * h * w)
    return float(delta * (spatial + channel))


def _att_reg_level(a_t, a_s, support, delta) -> float:
    _check_same_shape(a_t, a_s, "att_reg channel attention")
    c = a_t.shape[0]
    count = int(support.sum())
    if count == 0:
        return 0.0
    gap = np.sum(support[None] * np.abs(a_t - a_s), dtype=np.float64)
    return float(delta * gap / (c * count))


def fea_cls_loss(
    teacher: Sequence[FeatureTensor],
    student: Sequence[FeatureTensor],
    m_cls: WeightMask,
    n_bg: BackgroundMask,
    teacher_attn: Sequence[AttentionPair],
    alpha: float,
    beta: float,
) -> float:
    t, s = _arrays(teacher), _arrays(student)
    _check_levels(t, s, m_cls.values, n_bg.values, teacher_attn, what="fea_cls")
    return sum(
        _fea_cls_level(ti, si, mi, ni, at.spatial, at.channel, alpha, beta)
        for ti, si, mi, ni, at in zip(t, s, m_cls.values, n_bg.values, teacher_attn)
    )


def fea_reg_loss(
    teacher: Sequence[FeatureTensor],
    student: Sequence[FeatureTensor],
    m_reg: WeightMask,
    teacher_attn: Sequence[AttentionPair],
    gamma: float,
) -> float:
    t, s = _arrays(teacher), _arrays(student)
    _check_levels(t, s, m_reg.values, teacher_attn, what="fea_reg")
    return sum(
        _fea_reg_level(ti, si, mi, at.channel, gamma)
        for ti, si, mi, at in zip(t, s, m_reg.values, teacher_attn)
    )


def att_cls_loss(
    teacher_attn: Sequence[AttentionPair],
    student_attn: Sequence[AttentionPair],
    delta: float,
) -> float:
    _check_levels(teacher_attn, student_attn, what="att_cls")
    return sum(
        _att_cls_level(at.spatial, ast.spatial, at.channel, ast.channel, delta)
        for at, ast in zip(teacher_attn, student_attn)
    )


def att_reg_loss(
    teacher_attn: Sequence[AttentionPair],
    student_attn: Sequence[AttentionPair],
    m_reg: WeightMask,
    delta: float,
) -> float:
    _check_levels(teacher_attn, student_attn, m_reg.values, what="att_reg")
    return sum(
        _att_reg_level(at.channel, ast.channel, (m > 0.0).astype(np.float64), delta)
        for at, ast, m in zip(teacher_attn, student_attn, m_reg.values)
    )


@dataclass(frozen=True)
class LossReport:
    """All four terms, their per-level breakdown, and mask support sizes.

    `total` is computed as fea_cls + fea_reg + att_cls + att_reg in that
    exact order, each term itself a plain in-order sum over levels.
    """

    fea_cls: float
    fea_reg: float
    att_cls: float
    att_reg: float
    total: float
    per_level: dict[str, tuple[float, ...]]
    cls_support: int
    reg_support: int
    background_count: int

    def to_dict(self) -> dict:
        return {
            "fea_cls": self.fea_cls,
            "fea_reg": self.fea_reg,
            "att_cls": self.att_cls,
            "att_reg": self.att_reg,
            "total": self.total,
            "per_level": {k: list(v) for k, v in self.per_level.items()},
            "support": {
                "cls_mask": self.cls_support,
                "reg_mask": self.reg_support,
                "background": self.background_count,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class LossGradients:
    """d(total)/d(student features), one (C, H, W) array per level per head."""

    cls_grads: tuple[np.ndarray, ...]
    reg_grads: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class _TeacherSide:
    """Everything in the loss that does not depend on the student."""

    m_cls: WeightMask
    m_reg: WeightMask
    n_bg: BackgroundMask
    cls_attn: tuple[AttentionPair, ...]
    reg_attn: tuple[AttentionPair, ...]
    cls_feats: tuple[np.ndarray, ...]
    reg_feats: tuple[np.ndarray, ...]


def _teacher_side(bundle: SceneBundle, config: DistillConfig) -> _TeacherSide:
    return _TeacherSide(
        m_cls=pgw_mask(bundle, config.xi_cls, config.k),
        m_reg=pgw_mask(bundle, config.xi_reg, config.k),
        n_bg=background_mask(bundle),
        cls_attn=tuple(attention_pair(f, config.tau) for f in bundle.teacher_cls_feats),
        reg_attn=tuple(attention_pair(f, config.tau) for f in bundle.teacher_reg_feats),
        cls_feats=tuple(_arrays(bundle.teacher_cls_feats)),
        reg_feats=tuple(_arrays(bundle.teacher_reg_feats)),
    )


def _evaluate(
    side: _TeacherSide,
    student_cls: Sequence[np.ndarray],
    student_reg: Sequence[np.ndarray],
    config: DistillConfig,
) -> LossReport:
    per_level: dict[str, list[float]] = {
        "fea_cls": [], "fea_reg": [], "att_cls": [], "att_reg": []
    }
    for i in range(len(side.cls_feats)):
        s_cls = student_cls[i]
        s_reg = student_reg[i]
        s_cls_attn = attention_pair(s_cls, config.tau)
        s_reg_attn = attention_pair(s_reg, config.tau)
        per_level["fea_cls"].append(
            _fea_cls_level(
                side.cls_feats[i], s_cls, side.m_cls.values[i], side.n_bg.values[i],
                side.cls_attn[i].spatial, side.cls_attn[i].channel,
                config.alpha, config.beta,
            )
        )
        per_level["fea_reg"].append(
            _fea_reg_level(
                side.reg_feats[i], s_reg, side.m_reg.values[i],
                side.reg_attn[i].channel, config.gamma,
            )
        )
        per_level["att_cls"].append(
            _att_cls_level(
                side.cls_attn[i].spatial, s_cls_attn.spatial,
                side.cls_attn[i].channel, s_cls_attn.channel, config.delta,
            )
        )
        per_level["att_reg"].append(
            _att_reg_level(
                side.reg_attn[i].channel, s_reg_attn.channel,
                (side.m_reg.values[i] > 0.0).astype(np.float64), config.delta,
            )
        )
    fea_cls = sum(per_level["fea_cls"])
    fea_reg = sum(per_level["fea_reg"])
    att_cls = sum(per_level["att_cls"])
    att_reg = sum(per_level["att_reg"])
    return LossReport(
        fea_cls=fea_cls,
        fea_reg=fea_reg,
        att_cls=att_cls,
        att_reg=att_reg,
        total=fea_cls + fea_reg + att_cls + att_reg,
        per_level={k: tuple(v) for k, v in per_level.items()},
        cls_support=len(side.m_cls.support),
        reg_support=len(side.m_reg.support),
        background_count=sum(
            side.n_bg.level_count(i) for i in range(len(side.n_bg.values))
        ),
    )


def total_loss(bundle: SceneBundle, config: DistillConfig) -> LossReport:
    """Masks, attentions, and all four loss terms for one bundle."""
    side = _teacher_side(bundle, config)
    return _evaluate(side, _arrays(bundle.student_cls_feats),
                     _arrays(bundle.student_reg_feats), config)


def _spatial_attention_backward(
    p_s: np.ndarray, upstream: np.ndarray, feats: np.ndarray, tau: float
) -> np.ndarray:
    """Chain upstream dL/dP through P = HW * softmax(sum_k |F| / tau)."""
    hw = p_s.size
    inner = float(np.sum(upstream * p_s, dtype=np.float64)) / hw
    ds = p_s * (upstream - inner)
    return ds[None] * np.sign(feats) / tau


def _channel_attention_backward(
    a_s: np.ndarray, upstream: np.ndarray, feats: np.ndarray, tau: float
) -> np.ndarray:
    """Chain upstream dL/dA through A = C * softmax_k(|F| / tau)."""
    c = a_s.shape[0]
    inner = np.sum(upstream * a_s, axis=0, keepdims=True) / c
    dt = a_s * (upstream - inner)
    return dt * np.sign(feats) / tau


def loss_gradients(bundle: SceneBundle, config: DistillConfig) -> LossGradients:
    """Analytic d(total)/d(student features).

    The |x| factors inside the attentions use subgradient 0 at x = 0, as do
    the L1 attention gaps.
    """
    side = _teacher_side(bundle, config)
    student_cls = _arrays(bundle.student_cls_feats)
    student_reg = _arrays(bundle.student_reg_feats)
    cls_grads, reg_grads = [], []
    for i in range(len(side.cls_feats)):
        s_cls, s_reg = student_cls[i], student_reg[i]
        c, h, w = s_cls.shape

        # Classification head.
        weight = config.alpha * side.m_cls.values[i] + config.beta * side.n_bg.values[i]
        g = (-2.0 * weight[None] * side.cls_attn[i].spatial[None]
             * side.cls_attn[i].channel * (side.cls_feats[i] - s_cls))
        s_attn = attention_pair(s_cls, config.tau)
        up_p = (config.delta / (h * w)) * np.sign(s_attn.spatial - side.cls_attn[i].spatial)
        g += _spatial_attention_backward(s_attn.spatial, up_p, s_cls, config.tau)
        up_a = (config.delta / (c * h * w)) * np.sign(s_attn.channel - side.cls_attn[i].channel)
        g += _channel_attention_backward(s_attn.channel, up_a, s_cls, config.tau)
        cls_grads.append(g)

        # Regression head.
        cr = s_reg.shape[0]
        g = (-2.0 * config.gamma * side.m_reg.values[i][None]
             * side.reg_attn[i].channel * (side.reg_feats[i] - s_reg))
        support = (side.m_reg.values[i] > 0.0).astype(np.float64)
        count = int(support.sum())
        if count:
            s_chan = channel_attention(s_reg, config.tau)
            up = (config.delta / (cr * count)) * support[None] * np.sign(
                s_chan - side.reg_attn[i].channel
            )
            g += _channel_attention_backward(s_chan, up, s_reg, config.tau)
        reg_grads.append(g)
    return LossGradients(cls_grads=tuple(cls_grads), reg_grads=tuple(reg_grads))


def finite_difference_gradients(
    bundle: SceneBundle, config: DistillConfig, step: float = 1e-3
) -> LossGradients:
    """Central differences of the total loss w.r.t. each student element.

    Teacher-side quantities (masks, background, teacher attentions) do not
    depend on the student and are computed once; everything else is
    re-evaluated per perturbation in float64.
    """
    side = _teacher_side(bundle, config)
    student_cls = _arrays(bundle.student_cls_feats)
    student_reg = _arrays(bundle.student_reg_feats)

    def loss_at() -> float:
        return _evaluate(side, student_cls, student_reg, config).total

    def grad_for(arrays: list[np.ndarray], index: int) -> np.ndarray:
        arr = arrays[index]
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for e in range(flat.size):
            original = flat[e]
            flat[e] = original + step
            hi = loss_at()
            flat[e] = original - step
            lo = loss_at()
            flat[e] = original
            gflat[e] = (hi - lo) / (2.0 * step)
        return grad

    cls_grads = tuple(grad_for(student_cls, i) for i in range(len(student_cls)))
    reg_grads = tuple(grad_for(student_reg, i) for i in range(len(student_reg)))
    return LossGradients(cls_grads=cls_grads, reg_grads=reg_grads)


def max_relative_gradient_error(
    analytic: LossGradients, numeric: LossGradients, floor: float = 1e-6
) -> float:
    """Worst elementwise |analytic - numeric| / max(|analytic|, |numeric|, floor)."""
    worst = 0.0
    for a_levels, n_levels in (
        (analytic.cls_grads, numeric.cls_grads),
        (analytic.reg_grads, numeric.reg_grads),
    ):
        for a, n in zip(a_levels, n_levels):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
