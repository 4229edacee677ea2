import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import raster_iou, threshold_sweep_ap
from thermask.dataset import Annotation, BoundingBox, MaskClass
from thermask.evalkit import (
    ClassificationReport,
    Detection,
    aggregate_runs,
    average_precision,
    ciou_loss,
    classification_report,
    evaluate_detections,
    f1_score,
    intersection_area,
    iou,
    iou_matrix,
    match_detections,
    mean_std,
    precision_recall_curve,
    smooth_l1,
)

# coordinates on a 1/64 px lattice, so distinct boxes differ by representable amounts
coord = st.integers(0, 6400).map(lambda v: v / 64)


@st.composite
def boxes(draw):
    x0, y0 = draw(coord), draw(coord)
    w, h = draw(st.integers(1, 3840).map(lambda v: v / 64)), draw(st.integers(1, 3840).map(lambda v: v / 64))
    return BoundingBox(x0, y0, x0 + w, y0 + h)


class TestIoU:
    def test_identical(self):
        assert iou(BoundingBox(3, 4, 17, 9), BoundingBox(3, 4, 17, 9)) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10)) == 0.0
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0

    def test_half_shift(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)
        assert raster_iou((0, 0, 10, 10), (5, 0, 15, 10), grid=20) == pytest.approx(1 / 3, abs=1e-15)

    @settings(max_examples=200)
    @given(boxes(), boxes())
    def test_symmetry_and_range(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0
        assert iou(a, a) == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 200), min_size=8, max_size=8))
    def test_raster_oracle(self, c):
        a = (min(c[0], c[1]), min(c[2], c[3]), max(c[0], c[1]) + 1, max(c[2], c[3]) + 1)
        b = (min(c[4], c[5]), min(c[6], c[7]), max(c[4], c[5]) + 1, max(c[6], c[7]) + 1)
        assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(raster_iou(a, b, grid=202), abs=1e-12)

    def test_matrix_agrees_with_scalar(self, rng):
        pts = rng.uniform(0, 50, size=(12, 4))
        arr = np.column_stack([np.minimum(pts[:, 0], pts[:, 2]), np.minimum(pts[:, 1], pts[:, 3]), np.maximum(pts[:, 0], pts[:, 2]) + 0.1, np.maximum(pts[:, 1], pts[:, 3]) + 0.1])
        m = iou_matrix(arr[:5], arr[5:])
        for i in range(5):
            for j in range(7):
                assert m[i, j] == pytest.approx(iou(BoundingBox(*arr[i]), BoundingBox(*arr[5 + j])), abs=1e-12)

    def test_intersection_area(self):
        assert intersection_area(BoundingBox(0, 0, 4, 4), BoundingBox(2, 1, 8, 3)) == 4.0


class TestCIoU:
    def test_identical_zero(self):
        assert ciou_loss(BoundingBox(1, 2, 30, 12), BoundingBox(1, 2, 30, 12)) == 0.0

    def test_same_center_same_aspect(self):
        assert ciou_loss(BoundingBox(0, 0, 10, 10), BoundingBox(2.5, 2.5, 7.5, 7.5)) == pytest.approx(0.75, abs=1e-9)

    def test_hand_computed_offset(self):
        # same size, shifted by 5: IoU 1/3, rho^2 = 25, c^2 = 15^2 + 10^2
        expected = 1 - 1 / 3 + 25 / 325
        assert ciou_loss(BoundingBox(5, 0, 15, 10), BoundingBox(0, 0, 10, 10)) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=200)
    @given(boxes(), boxes())
    def test_bounds_and_definiteness(self, a, b):
        loss = ciou_loss(a, b)
        assert loss >= 1 - iou(a, b) - 1e-12
        if a != b:
            assert loss > 0
        same_center = math.isclose(a.center[0], b.center[0]) and math.isclose(a.center[1], b.center[1])
        if not same_center:
            assert loss > 1 - iou(a, b)


class TestSmoothL1:
    def test_branches(self):
        assert smooth_l1([0.5], [0.0], beta=1.0) == 0.125
        assert smooth_l1([2.0], [0.0], beta=1.0) == 1.5
        assert smooth_l1([1.0, -3.0], [1.0, -3.0]) == 0.0

    def test_summed(self):
        assert smooth_l1([0.5, 2.0], [0.0, 0.0]) == 1.625

    def test_errors(self):
        with pytest.raises(ValueError):
            smooth_l1([1, 2], [1])
        with pytest.raises(ValueError):
            smooth_l1([1], [1], beta=0)


def _gt(image_id, *box):
    return Annotation(image_id, MaskClass.FFP2, BoundingBox(*box))


def _det(image_id, conf, *box):
    return Detection(image_id, BoundingBox(*box), conf)


class TestMatching:
    def test_exact_hit(self):
        m = match_detections([_det("a", 0.9, 0, 0, 10, 10)], [_gt("a", 0, 0, 10, 10)])
        assert m.tp.tolist() == [True] and m.gt_matched.tolist() == [True]

    def test_duplicate_is_false_positive(self):
        m = match_detections([_det("a", 0.9, 0, 0, 10, 10), _det("a", 0.8, 0, 0, 10, 10)], [_gt("a", 0, 0, 10, 10)])
        assert m.tp.tolist() == [True, False]

    def test_boundary_049(self):
        det = _det("a", 0.9, 0, 0, 100, 1)
        gt = _gt("a", 0, 0, 49, 1)
        assert iou(det.box, gt.box) == pytest.approx(0.49)
        assert match_detections([det], [gt], 0.5).tp.tolist() == [False]
        assert match_detections([det], [gt], 0.49).tp.tolist() == [True]

    def test_other_image_never_matches(self):
        m = match_detections([_det("b", 0.9, 0, 0, 10, 10)], [_gt("a", 0, 0, 10, 10)])
        assert m.tp.tolist() == [False]

    def test_higher_confidence_claims_first(self):
        gt = _gt("a", 0, 0, 10, 10)
        dets = [_det("a", 0.6, 0, 0, 10, 10), _det("a", 0.95, 1, 1, 10, 10)]
        assert match_detections(dets, [gt]).tp.tolist() == [False, True]

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            match_detections([], [], iou_threshold=1.0)

    def test_class_aware(self):
        det = Detection("a", BoundingBox(0, 0, 10, 10), 0.9, MaskClass.CLOTH)
        assert match_detections([det], [_gt("a", 0, 0, 10, 10)], class_aware=True).tp.tolist() == [False]
        assert match_detections([det], [_gt("a", 0, 0, 10, 10)]).tp.tolist() == [True]

    def test_confidence_bounds(self):
        with pytest.raises(ValueError):
            _det("a", 1.2, 0, 0, 1, 1)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([True, True, True], [0.9, 0.8, 0.7], 3) == 1.0

    def test_no_true_positives(self):
        assert average_precision([False, False], [0.9, 0.8], 2) == 0.0
        assert average_precision([], [], 2) == 0.0

    def test_tp_then_fp(self):
        assert average_precision([True, False], [0.9, 0.8], 2) == 0.5

    def test_zero_gt(self):
        with pytest.raises(ValueError):
            average_precision([True], [0.5], 0)

    def test_envelope(self):
        # ranked TP FP TP with n_gt=2: points (0.5,1), (0.5,0.5), (1,2/3)
        assert average_precision([True, False, True], [0.9, 0.8, 0.7], 2) == pytest.approx(0.5 + 0.5 * 2 / 3)

    def test_ties_follow_input_order(self):
        assert average_precision([True, False], [0.5, 0.5], 1) == 1.0
        assert average_precision([False, True], [0.5, 0.5], 1) == 0.5

    @settings(max_examples=300)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 10**6)), min_size=1, max_size=10, unique_by=lambda t: t[1]), st.integers(0, 5))
    def test_threshold_sweep_oracle(self, items, extra_gt):
        flags = [f for f, _ in items]
        conf = [c / 10**6 for _, c in items]
        n_gt = sum(flags) + extra_gt
        assume(n_gt > 0)
        assert average_precision(flags, conf, n_gt) == threshold_sweep_ap(flags, conf, n_gt)

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.booleans(), st.floats(0.001, 0.999)), min_size=1, max_size=10))
    def test_monotone_transform_invariance(self, items):
        flags = [f for f, _ in items]
        conf = np.array([c for _, c in items])
        n_gt = max(sum(flags), 1)
        assert average_precision(flags, conf, n_gt) == average_precision(flags, conf**3, n_gt)
        assert average_precision(flags, conf, n_gt) == average_precision(flags, 0.5 * conf + 0.1, n_gt)

    def test_curve(self):
        p, r, c = precision_recall_curve([False, True], [0.2, 0.9], 1)
        assert p.tolist() == [1.0, 0.5] and r.tolist() == [1.0, 1.0] and c.tolist() == [0.9, 0.2]


class TestEvaluateDetections:
    def test_report(self):
        gts = [_gt("a", 0, 0, 10, 10), _gt("b", 0, 0, 10, 10)]
        dets = [_det("a", 0.9, 0, 0, 10, 10), _det("b", 0.3, 0, 0, 10, 10), _det("b", 0.8, 50, 50, 60, 60)]
        rep = evaluate_detections(dets, gts)
        assert rep.precision == 0.5  # two detections above 0.5, one correct
        assert rep.recall == 0.5
        assert rep.map50 == pytest.approx(0.5 + 0.5 * 2 / 3)
        d = rep.to_dict()
        assert d["schema"] == "v1" and {"precision", "recall", "map50"} <= set(d)

    def test_requires_ground_truth(self):
        with pytest.raises(ValueError):
            evaluate_detections([], [])


class TestClassification:
    def test_all_correct(self):
        labels = [MaskClass.FFP2, MaskClass.SURGERY, MaskClass.CLOTH, MaskClass.CLOTH]
        rep = classification_report(labels, labels)
        assert rep.accuracy == 1.0
        assert np.array_equal(rep.confusion, np.diag([1, 1, 2]))

    def test_hand_counted(self):
        rep = classification_report([MaskClass.FFP2, MaskClass.FFP2, MaskClass.SURGERY], [MaskClass.FFP2, MaskClass.SURGERY, MaskClass.SURGERY])
        assert rep.accuracy == pytest.approx(2 / 3)
        assert rep.recall[MaskClass.FFP2] == 0.5
        assert rep.precision[MaskClass.SURGERY] == 0.5

    def test_single_class(self):
        rep = classification_report([MaskClass.CLOTH] * 4, [MaskClass.CLOTH] * 4)
        assert rep.precision[MaskClass.CLOTH] == rep.recall[MaskClass.CLOTH] == 1.0
        assert rep.precision[MaskClass.FFP2] == rep.recall[MaskClass.FFP2] == rep.f1[MaskClass.FFP2] == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            classification_report([MaskClass.FFP2], [])
        with pytest.raises(ValueError):
            classification_report([], [])

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
    def test_consistency(self, pairs):
        true = [MaskClass(t) for t, _ in pairs]
        pred = [MaskClass(p) for _, p in pairs]
        rep = classification_report(true, pred)
        assert rep.accuracy == pytest.approx(np.mean([t == p for t, p in pairs]))
        assert rep.confusion.sum() == len(pairs) and (rep.confusion >= 0).all()
        assert rep.accuracy == pytest.approx(np.trace(rep.confusion) / rep.confusion.sum())
        for c in MaskClass:
            col, row = rep.confusion[:, c].sum(), rep.confusion[c].sum()
            assert rep.precision[c] == pytest.approx(rep.confusion[c, c] / col if col else 0.0)
            assert rep.recall[c] == pytest.approx(rep.confusion[c, c] / row if row else 0.0)
            assert rep.f1[c] == pytest.approx(f1_score(rep.precision[c], rep.recall[c]))

    @pytest.mark.parametrize("p,r,expected", [(0.96, 0.90, 0.929), (0.85, 1.00, 0.919), (1.0, 0.0, 0.0), (0.0, 0.0, 0.0)])
    def test_f1(self, p, r, expected):
        assert f1_score(p, r) == pytest.approx(expected, abs=5e-4)


class TestAggregate:
    def test_identical_runs(self):
        rep = evaluate_detections([_det("a", 0.9, 0, 0, 10, 10)], [_gt("a", 0, 0, 10, 10)])
        agg = aggregate_runs([rep, rep, rep])
        assert agg.std == {"precision": 0.0, "recall": 0.0, "map50": 0.0}
        assert agg.repetitions == 3

    def test_known_values(self):
        mean, std = mean_std([0.9, 1.0, 0.8])
        assert mean == pytest.approx(0.9)
        assert std == pytest.approx(0.0816, abs=5e-5)

    def test_single(self):
        rep = classification_report([MaskClass.FFP2, MaskClass.CLOTH], [MaskClass.FFP2, MaskClass.FFP2])
        agg = aggregate_runs([rep])
        assert agg.mean["accuracy"] == 0.5 and agg.std["accuracy"] == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate_runs([])
        det = evaluate_detections([], [_gt("a", 0, 0, 1, 1)])
        cls = classification_report([MaskClass.FFP2], [MaskClass.FFP2])
        with pytest.raises(ValueError):
            aggregate_runs([det, cls])

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
    def test_mean_std_consistent(self, values):
        mean, std = mean_std(values)
        assert std >= 0
        assert mean == pytest.approx(np.mean(values), abs=1e-12)
        assert std == pytest.approx(np.std(values), abs=1e-9)

    def test_serialisable(self):
        rep = classification_report([MaskClass.FFP2], [MaskClass.FFP2])
        assert isinstance(rep, ClassificationReport)
        assert aggregate_runs([rep]).to_dict()["schema"] == "v1"
