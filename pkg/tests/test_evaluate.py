import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgdistill import (
    Box,
    DEFAULT_IOU_THRESHOLDS,
    Detection,
    SynthSpec,
    average_precision,
    generate_bundle,
    iou,
    maskout_experiment,
    nms,
)

from oracles import rasterized_iou, ref_average_precision, scalar_iou

BOXES = st.builds(
    lambda x, y, w, h: Box(x, y, x + w, y + h, 0),
    st.floats(0, 50),
    st.floats(0, 50),
    st.floats(0.5, 40),
    st.floats(0.5, 40),
)


class TestIoU:
    def test_frozen_one_seventh(self):
        a = Box(0.0, 0.0, 2.0, 2.0, 0)
        b = Box(1.0, 1.0, 3.0, 3.0, 0)
        assert iou(a, b) == pytest.approx(1.0 / 7.0, rel=1e-15)
        # cross-check against area counting on a fine raster
        approx = rasterized_iou((0, 0, 2, 2), (1, 1, 3, 3))
        assert iou(a, b) == pytest.approx(approx, abs=2e-3)

    def test_identical_and_disjoint(self):
        a = Box(3.0, 4.0, 9.0, 11.0, 0)
        assert iou(a, a) == 1.0
        assert iou(a, Box(20.0, 20.0, 30.0, 30.0, 0)) == 0.0
        # shared edge only: zero-width intersection
        assert iou(a, Box(9.0, 4.0, 12.0, 11.0, 0)) == 0.0

    @given(a=BOXES, b=BOXES)
    def test_symmetric_bounded(self, a, b):
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert v == scalar_iou((a.x1, a.y1, a.x2, a.y2), (b.x1, b.y1, b.x2, b.y2))


class TestNms:
    def _det(self, x, score, cat=0, size=4.0):
        return Detection(box=Box(x, 0.0, x + size, size, cat), score=score)

    def test_single_detection_kept(self):
        d = self._det(0.0, 0.5)
        assert nms([d], 0.6) == [d]

    def test_identical_boxes_same_class_suppressed(self):
        hi, lo = self._det(0.0, 0.9), self._det(0.0, 0.8)
        assert nms([lo, hi], 0.6) == [hi]

    def test_identical_boxes_different_class_kept(self):
        a, b = self._det(0.0, 0.9, cat=0), self._det(0.0, 0.8, cat=1)
        assert nms([a, b], 0.6) == [a, b]

    def test_tie_breaks_by_original_index(self):
        a, b = self._det(0.0, 0.7), self._det(0.1, 0.7)
        kept = nms([a, b], 0.99)
        assert kept[0] is a

    def test_threshold_is_strict(self):
        # two boxes at IoU exactly 0.6: threshold 0.6 suppresses (iou < thr
        # fails), threshold just above keeps both
        a = Detection(box=Box(0.0, 0.0, 10.0, 4.0, 0), score=0.9)
        b = Detection(box=Box(2.0, 0.0, 12.0, 4.0, 0), score=0.8)
        assert iou(a.box, b.box) == pytest.approx(8.0 / 12.0)
        kept = nms([a, b], 8.0 / 12.0)
        assert kept == [a]
        kept2 = nms([a, b], 8.0 / 12.0 + 1e-9)
        assert kept2 == [a, b]

    @given(
        scores=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=12),
        threshold=st.floats(0.1, 1.0),
    )
    def test_subset_ordered_idempotent(self, scores, threshold):
        rng = np.random.default_rng(len(scores))
        dets = [
            Detection(
                box=Box(float(x), 0.0, float(x) + 6.0, 6.0, int(c)),
                score=float(s),
            )
            for s, x, c in zip(
                scores,
                rng.uniform(0, 20, len(scores)),
                rng.integers(0, 2, len(scores)),
            )
        ]
        kept = nms(dets, threshold)
        assert all(k in dets for k in kept)
        assert [k.score for k in kept] == sorted((k.score for k in kept), reverse=True)
        assert nms(kept, threshold) == kept

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            nms([], 1.5)


class TestAveragePrecision:
    def test_perfect_detections(self):
        gts = [Box(0.0, 0.0, 4.0, 4.0, 0), Box(10.0, 0.0, 14.0, 4.0, 1)]
        dets = [Detection(box=b, score=1.0) for b in gts]
        assert average_precision(dets, gts) == 1.0

    def test_no_detections(self):
        assert average_precision([], [Box(0.0, 0.0, 4.0, 4.0, 0)]) == 0.0

    def test_empty_scene_conventions(self):
        assert average_precision([], []) == 1.0
        d = Detection(box=Box(0.0, 0.0, 4.0, 4.0, 0), score=0.9)
        assert average_precision([d], []) == 0.0

    def test_frozen_half(self):
        # high-score false positive above a perfect match: precision is 0.5
        # at every recall level -> AP exactly 0.5
        gt = Box(0.0, 0.0, 4.0, 4.0, 0)
        match = Detection(box=gt, score=0.9)
        fp = Detection(box=Box(20.0, 20.0, 24.0, 24.0, 0), score=0.95)
        ap = average_precision([match, fp], [gt], iou_thresholds=[0.5])
        assert ap == 0.5

    def test_duplicate_match_never_raises_ap(self):
        gt = Box(0.0, 0.0, 4.0, 4.0, 0)
        match = Detection(box=gt, score=0.9)
        base = average_precision([match], [gt], iou_thresholds=[0.5])
        dup = average_precision([match, match], [gt], iou_thresholds=[0.5])
        assert dup <= base

    def test_classes_absent_from_gt_are_ignored(self):
        gt = Box(0.0, 0.0, 4.0, 4.0, 0)
        match = Detection(box=gt, score=0.9)
        stray = Detection(box=Box(30.0, 30.0, 34.0, 34.0, 3), score=0.99)
        assert average_precision([match, stray], [gt]) == average_precision([match], [gt])

    def test_empty_threshold_list_rejected(self):
        with pytest.raises(ValueError):
            average_precision([], [Box(0.0, 0.0, 4.0, 4.0, 0)], iou_thresholds=[])

    def _scene(self, seed):
        rng = np.random.default_rng(seed)
        gts = [
            Box(
                float(x), float(y), float(x) + float(w), float(y) + float(h), int(c)
            )
            for x, y, w, h, c in zip(
                rng.uniform(0, 40, 4),
                rng.uniform(0, 40, 4),
                rng.uniform(4, 20, 4),
                rng.uniform(4, 20, 4),
                rng.integers(0, 3, 4),
            )
        ]
        dets = []
        for g in gts[: rng.integers(1, 5)]:
            jitter = rng.uniform(-3, 3, 4)
            dets.append(
                Detection(
                    box=Box(
                        g.x1 + jitter[0],
                        g.y1 + jitter[1],
                        max(g.x1 + jitter[0] + 1, g.x2 + jitter[2]),
                        max(g.y1 + jitter[1] + 1, g.y2 + jitter[3]),
                        g.category,
                    ),
                    score=float(rng.uniform(0.1, 1.0)),
                )
            )
        for _ in range(rng.integers(0, 3)):
            dets.append(
                Detection(
                    box=Box(50.0, 50.0, 60.0, 60.0, int(rng.integers(0, 3))),
                    score=float(rng.uniform(0.1, 1.0)),
                )
            )
        return dets, gts

    @given(seed=st.integers(0, 200))
    def test_matches_reference_exactly(self, seed):
        dets, gts = self._scene(seed)
        got = average_precision(dets, gts)
        ref = ref_average_precision(dets, gts, 3, DEFAULT_IOU_THRESHOLDS)
        assert got == ref  # bit-exact: same rules, independent code


class TestMaskout:
    def _bundle(self):
        return generate_bundle(
            SynthSpec(seed=30, num_objects=1, quality_concentration=6.0)
        )

    def test_ratio_zero_is_baseline(self):
        curve = maskout_experiment(self._bundle(), [0.0, 10.0], xi=0.8)
        assert curve.points[0][0] == 0.0
        assert curve.points[0][1] == pytest.approx(1.0)

    def test_masking_everything_kills_ap(self):
        curve = maskout_experiment(self._bundle(), [0.0, 100.0], xi=0.8)
        assert curve.points[-1][1] == pytest.approx(0.0, abs=1e-12)

    def test_ratio_validation(self):
        b = self._bundle()
        with pytest.raises(ValueError):
            maskout_experiment(b, [1.0, 2.0], xi=0.8)  # must start at 0
        with pytest.raises(ValueError):
            maskout_experiment(b, [0.0, 5.0, 5.0], xi=0.8)  # strictly increasing
        with pytest.raises(ValueError):
            maskout_experiment(b, [0.0, 101.0], xi=0.8)  # ratio > 100

    def test_concentrated_scene_drops_hard_at_one_percent(self):
        curve = maskout_experiment(self._bundle(), [0.0, 1.0], xi=0.8)
        base, masked = curve.points[0][1], curve.points[1][1]
        assert masked <= 0.6 * base

    def test_workers_do_not_change_results(self):
        b = generate_bundle(SynthSpec(seed=31, num_objects=2))
        ratios = [0.0, 1.0, 5.0, 25.0, 100.0]
        c1 = maskout_experiment(b, ratios, xi=0.8, workers=1)
        c4 = maskout_experiment(b, ratios, xi=0.8, workers=4)
        assert c1.points == c4.points

    def test_csv_shape(self):
        curve = maskout_experiment(self._bundle(), [0.0, 50.0], xi=0.8)
        lines = curve.to_csv().strip().split("\n")
        assert lines[0] == "ratio_percent,ap"
        assert len(lines) == 3
        ratio, ap = lines[1].split(",")
        assert "." in ratio and len(ratio.split(".")[1]) == 6
        assert "." in ap and len(ap.split(".")[1]) == 6
