"""Hand-built bundle constructors shared across the test modules."""

from __future__ import annotations

import dataclasses

import numpy as np

from pgdistill import (
    Box,
    DistillConfig,
    FeatureTensor,
    LevelGeometry,
    PredictionField,
    SceneBundle,
    SynthSpec,
    attention_pair,
    generate_bundle,
)

# Discrete feature magnitudes used by the gradient-check fixtures.  With the
# student fixed at 1.5x the teacher, these keep every |x| term inside the
# losses far from its kink (verified by kink_margins_ok below).
_MAGS = np.array([0.5, 1.0, 2.0])
_STUDENT_SCALE = 1.5


def grid_bundle(
    levels=((8, 4, 4),),
    boxes=(),
    num_classes=2,
    anchors=1,
    channels=2,
    image=(64, 64),
    seed=0,
    probs=None,
    pred_boxes=None,
    student_offset=0.25,
):
    """Small bundle with deterministic pseudo-random features.

    probs / pred_boxes may override the per-level prediction arrays;
    defaults are 0.5 probabilities everywhere and stride-sized boxes at
    each cell.
    """
    rng = np.random.default_rng(seed)
    geo = tuple(
        LevelGeometry(level_index=i, stride=s, height=h, width=w)
        for i, (s, h, w) in enumerate(levels)
    )
    pb, pp, t_cls, t_reg, s_cls, s_reg = [], [], [], [], [], []
    for lv in geo:
        h, w, s = lv.height, lv.width, float(lv.stride)
        if pred_boxes is None:
            xs, ys = lv.center_grids()
            b = np.empty((anchors, 4, h, w), dtype=np.float32)
            b[:, 0] = xs[None, :] - s / 2
            b[:, 1] = ys[:, None] - s / 2
            b[:, 2] = xs[None, :] + s / 2
            b[:, 3] = ys[:, None] + s / 2
        else:
            b = np.asarray(pred_boxes[lv.level_index], dtype=np.float32)
        pb.append(b)
        if probs is None:
            p = np.full((anchors, num_classes, h, w), 0.5, dtype=np.float32)
        else:
            p = np.asarray(probs[lv.level_index], dtype=np.float32)
        pp.append(p)
        t = rng.standard_normal((channels, h, w)).astype(np.float32)
        t_cls.append(FeatureTensor(t))
        s_cls.append(FeatureTensor(t + student_offset))
        t = rng.standard_normal((channels, h, w)).astype(np.float32)
        t_reg.append(FeatureTensor(t))
        s_reg.append(FeatureTensor(t + student_offset))
    return SceneBundle(
        image_width=image[0],
        image_height=image[1],
        levels=geo,
        gt=tuple(boxes),
        teacher_cls_feats=tuple(t_cls),
        teacher_reg_feats=tuple(t_reg),
        student_cls_feats=tuple(s_cls),
        student_reg_feats=tuple(s_reg),
        teacher_preds=PredictionField(boxes=tuple(pb), class_probs=tuple(pp)),
        num_classes=num_classes,
    )


def _discrete_features(rng: np.random.Generator, shape) -> np.ndarray:
    c = shape[0]
    mag = _MAGS[rng.integers(0, 3, size=shape)]
    # A column of equal magnitudes would pin its attention gaps at exactly
    # zero (a kink); bump one channel to break such ties.
    flat = mag.reshape(c, -1)
    same = (flat == flat[0]).all(axis=0)
    for j in np.nonzero(same)[0]:
        flat[0, j] = _MAGS[(int(np.searchsorted(_MAGS, flat[0, j])) + 1) % 3]
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return (mag * sign).astype(np.float32)


def gradcheck_bundle(seed: int) -> SceneBundle:
    """Scene with discrete-magnitude features placed away from every kink.

    Teacher predictions and GT come from the synthetic generator; feature
    maps are replaced so central differences stay on one linear piece of
    each |x| factor.
    """
    base = generate_bundle(
        SynthSpec(
            seed=seed,
            image_width=64,
            image_height=64,
            num_objects=2,
            channels=4,
            num_classes=3,
            student_noise=0.1,
        )
    )
    rng = np.random.default_rng(seed + 10_000)

    def heads():
        teacher, student = [], []
        for lv in base.levels:
            t = _discrete_features(rng, (4, lv.height, lv.width))
            teacher.append(FeatureTensor(t))
            student.append(FeatureTensor(_STUDENT_SCALE * t))
        return tuple(teacher), tuple(student)

    t_cls, s_cls = heads()
    t_reg, s_reg = heads()
    return dataclasses.replace(
        base,
        teacher_cls_feats=t_cls,
        student_cls_feats=s_cls,
        teacher_reg_feats=t_reg,
        student_reg_feats=s_reg,
    )


def kink_margins_ok(bundle: SceneBundle, config: DistillConfig, step: float = 1e-3) -> bool:
    """True when no |x| kink can sit inside the central-difference interval.

    Perturbing one feature element by +-step moves attention values by at
    most ~2 * step / tau relative to themselves; requiring every
    teacher-student attention gap to exceed twice that (and every student
    feature to sit clear of zero) rules out sign flips during the check.
    """
    slack = 4.0 * step / config.tau
    for t_feats, s_feats, spatial in (
        (bundle.teacher_cls_feats, bundle.student_cls_feats, True),
        (bundle.teacher_reg_feats, bundle.student_reg_feats, False),
    ):
        for t, s in zip(t_feats, s_feats):
            sv = s.values.astype(np.float64)
            if np.abs(sv).min() <= 5 * step:
                return False
            at = attention_pair(t.values.astype(np.float64), config.tau)
            a_s = attention_pair(sv, config.tau)
            if spatial and np.any(
                np.abs(at.spatial - a_s.spatial) <= slack * a_s.spatial
            ):
                return False
            if np.any(np.abs(at.channel - a_s.channel) <= 2.0 * slack * a_s.channel):
                return False
    return True


def gradcheck_fixtures(count: int, config: DistillConfig) -> list[SceneBundle]:
    """First `count` seeds whose constructed bundles pass the margin check."""
    out = []
    seed = 0
    while len(out) < count:
        bundle = gradcheck_bundle(seed)
        if kink_margins_ok(bundle, config):
            out.append(bundle)
        seed += 1
        if seed > 200:
            raise RuntimeError("could not build enough kink-free fixtures")
    return out
