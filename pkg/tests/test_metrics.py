import dataclasses
import math
import random

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from lr3d import reference
from lr3d.exceptions import NonPositiveDistance, OverlappingBuckets
from lr3d.metrics import (
    KITTI_BUCKETS,
    NUSCENES_BUCKETS,
    THRESHOLDS,
    DetectionRecord,
    GroundTruthRecord,
    LDSReport,
    RangeBucket,
    aligned_iou,
    average_precision,
    bucketed_report,
    format_reports,
    lds,
    match,
    mean_ap,
    parse_buckets,
    rel_dist_err,
    true_positive_metrics,
)
from scenes import as_dicts, micro_scene, perfect


def gt(center, cls=0, frame=0, size=(4, 2, 1.5), yaw=0.0, gid="g"):
    return GroundTruthRecord(frame, cls, center, size, yaw, gid)


def det(center, score=0.9, cls=0, frame=0, size=(4, 2, 1.5), yaw=0.0, did="p"):
    return DetectionRecord(frame, cls, center, size, yaw, score, did)


class TestRelDistErr:
    def test_examples(self):
        assert rel_dist_err((0, 0, 104), (0, 0, 100), 100) == pytest.approx(0.04, abs=1e-15)
        assert rel_dist_err((1, 2, 3), (1, 2, 3), 3.7) == 0.0
        assert rel_dist_err((3, 0, 100), (0, 4, 100), 50) == pytest.approx(0.1, abs=1e-15)

    @pytest.mark.parametrize("gd", [0.0, -1.0])
    def test_non_positive(self, gd):
        with pytest.raises(NonPositiveDistance):
            rel_dist_err((0, 0, 1), (0, 0, 1), gd)


class TestMatch:
    def test_threshold(self):
        g, p = [gt((0, 0, 100))], [det((0, 0, 104))]
        assert match(p, g, 0.05).n_tp == 1
        m = match(p, g, 0.025)
        assert m.n_tp == 0 and m.is_tp == [False]

    def test_strictly_less(self):
        # error exactly 0.25 (dyadic, no rounding) at r = 0.25 is a miss
        assert match([det((0, 0, 80))], [gt((0, 0, 64))], 0.25).n_tp == 0

    def test_high_score_wins(self):
        g = [gt((0, 0, 100))]
        p = [det((0, 0, 103), score=0.8, did="a"), det((0, 0, 101), score=0.9, did="b")]
        m = match(p, g, 0.05)
        assert m.pairs == [(1, 0, pytest.approx(0.01))] and m.is_tp == [True, False]

    def test_frames_and_classes_separate(self):
        g = [gt((0, 0, 50), frame=0), gt((0, 0, 50), frame=1, cls=1)]
        p = [det((0, 0, 50), frame=1, cls=0), det((0, 0, 50), frame=1, cls=1)]
        assert match(p, g, 0.1).n_tp == 1

    def test_tp_count_agrees_with_optimal_assignment(self):
        # with well-separated GT, greedy equals the maximum matching
        rng = np.random.default_rng(5)
        for _ in range(200):
            n_g, n_p = rng.integers(1, 5), rng.integers(1, 7)
            gts = [gt((20.0 * k, 0, 60), gid=f"g{k}") for k in range(n_g)]
            preds = []
            for k in range(n_p):
                g = gts[rng.integers(n_g)]
                preds.append(det(np.add(g.center, rng.normal(scale=2.5, size=3)), score=float(rng.uniform()),
                                 did=f"p{k}"))
            err = np.array([[rel_dist_err(p.center, g.center, g.distance) for g in gts] for p in preds])
            ok = err < 0.1
            rows, cols = linear_sum_assignment(-ok.astype(float))
            assert match(preds, gts, 0.1).n_tp == int(ok[rows, cols].sum())


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([det((0, 0, 50))], [gt((0, 0, 50))], 0.1) == 1.0

    def test_empty(self):
        assert average_precision([], [gt((0, 0, 50))], 0.1) == 0.0
        assert average_precision([det((0, 0, 50))], [], 0.1) == 0.0

    def test_tp_fp_tp(self):
        gts = [gt((0, 0, 50), gid="a"), gt((10, 0, 50), gid="b")]
        preds = [det((0, 0, 50), 0.9, did="1"), det((-30, 0, 50), 0.8, did="2"), det((10, 0, 50), 0.7, did="3")]
        assert match(preds, gts, 0.1).is_tp == [True, False, True]
        # recall levels 0..0.5 see precision 1, levels 0.51..1 see 2/3
        expected = (51 * 1.0 + 50 * 2 / 3) / 101
        ap = average_precision(preds, gts, 0.1)
        assert ap == pytest.approx(expected, abs=1e-12)
        P, G = as_dicts(preds, gts)
        assert abs(ap - reference.ap_bruteforce(P, G, 0.1)) < 1e-9

    def test_threshold_monotone(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            preds, gts = micro_scene(rng, n_classes=1)
            aps = [average_precision(preds, gts, r) for r in THRESHOLDS]
            assert all(a <= b + 1e-15 for a, b in zip(aps, aps[1:]))


class TestMeanAP:
    def test_exact(self):
        gts = [gt((0, 0, 30), gid="a"), gt((5, 0, 60), cls=1, gid="b")]
        assert mean_ap(perfect(gts), gts)[0] == 1.0

    def test_err_004(self):
        m, table = mean_ap([det((0, 0, 104))], [gt((0, 0, 100))])
        assert [table[(0, r)] for r in THRESHOLDS] == [0.0, 1.0, 1.0, 1.0]
        assert m == 0.75

    def test_absent_classes_excluded(self):
        m, table = mean_ap([det((0, 0, 50))], [gt((0, 0, 50))], classes=[0, 1, 2])
        assert m == 1.0 and set(c for c, _ in table) == {0}

    def test_no_gt(self):
        assert mean_ap([det((0, 0, 50))], [])[0] is None


class TestTruePositiveMetrics:
    def test_exact(self):
        gts = [gt((0, 0, 30), gid="a"), gt((3, 0, 60), yaw=1.0, gid="b")]
        assert true_positive_metrics(perfect(gts), gts) == (0.0, 0.0, 0.0, 1.0)

    def test_scaled_sizes(self):
        g = gt((0, 0, 30), size=(4, 2, 1.5))
        p = det((0, 0, 30), size=(8, 4, 3))
        assert aligned_iou(p.size, g.size) == 0.125
        assert true_positive_metrics([p], [g])[1] == 0.875

    def test_yaw_offset(self):
        gts = [gt((0, 0, 30), yaw=3.0, gid="a"), gt((9, 0, 30), yaw=-0.5, gid="b")]
        preds = [dataclasses.replace(p, yaw=g.yaw + math.pi / 6) for p, g in zip(perfect(gts), gts)]
        assert true_positive_metrics(preds, gts)[2] == pytest.approx(math.pi / 6, abs=1e-12)

    def test_no_tp_defaults(self):
        assert true_positive_metrics([det((20, 0, 30))], [gt((0, 0, 30))]) == (1.0, 1.0, 1.0, 0.0)


class TestLDS:
    def test_perfect(self):
        gts = [gt((0, 0, 30), gid="a"), gt((2, 0, 70), cls=1, gid="b"), gt((-3, 1, 20), frame=1, gid="c")]
        for r in bucketed_report(perfect(gts), gts):
            assert r.lds == 1.0 and r.check_identity()

    def test_empty_predictions(self):
        r = lds([], [gt((0, 0, 30))])
        assert r.lds == 0.0 and r.defined and r.check_identity()

    def test_undefined_bucket(self):
        reports = bucketed_report([det((0, 0, 20))], [gt((0, 0, 20))])
        distant = reports[1]
        assert not distant.defined and distant.lds is None and distant.mAP is None
        assert distant.check_identity()
        assert "undefined" in format_reports(reports)

    def test_boundary(self):
        g = gt((0, 0, 39.9))
        close, distant, _ = bucketed_report(perfect([g]), [g], KITTI_BUCKETS)
        assert close.n_gt == 1 and distant.n_gt == 0
        g40 = gt((0, 0, 40.0))
        close, distant, _ = bucketed_report(perfect([g40]), [g40], KITTI_BUCKETS)
        assert close.n_gt == 0 and distant.n_gt == 1

    def test_nuscenes_buckets(self):
        gts = [gt((0, 0, 30), gid="a"), gt((0, 0, 45), gid="b"), gt((0, 0, 80), gid="c")]
        reports = bucketed_report(perfect(gts), gts, NUSCENES_BUCKETS)
        assert [r.bucket for r in reports] == ["close", "distant_40_51.2", "distant_51.2_inf", "overall"]
        assert [r.n_gt for r in reports] == [1, 1, 1, 3]
        assert parse_buckets([0, 40, 51.2, math.inf]) == tuple(
            RangeBucket(f"{a}-{b}", x, y) for (a, b), (x, y) in
            zip([("0", "40"), ("40", "51.2"), ("51.2", "inf")], [(0, 40), (40, 51.2), (51.2, math.inf)]))

    def test_overlapping(self):
        with pytest.raises(OverlappingBuckets):
            bucketed_report([], [], [RangeBucket("a", 0, 50), RangeBucket("b", 40, math.inf)])
        with pytest.raises(ValueError):
            parse_buckets([0, 50, 40])

    def test_prediction_bucketed_by_own_distance(self):
        # prediction at 41 m for a GT at 39 m falls outside the close bucket
        g = gt((0, 0, 39.0))
        close = lds([det((0, 0, 41.0))], [g], KITTI_BUCKETS[0])
        assert close.n_pred == 0 and close.lds == 0.0

    def test_report_roundtrip(self):
        rng = np.random.default_rng(3)
        preds, gts = micro_scene(rng, max_gt=5, max_pred=8)
        for r in bucketed_report(preds, gts):
            assert LDSReport.from_dict(r.to_dict()) == r

    def test_matches_reference(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            preds, gts = micro_scene(rng)
            P, G = as_dicts(preds, gts)
            for b in KITTI_BUCKETS:
                got, ref = lds(preds, gts, b), reference.lds_reference(P, G, b.d_min, b.d_max)
                if ref["lds"] is None:
                    assert not got.defined
                    continue
                for key in ("lds", "mAP", "rec", "mATE", "mASE", "mAOE"):
                    assert abs(getattr(got, key) - ref[key]) < 1e-9, key


def _fields(r):
    return r.to_dict()


class TestInvariants:
    def test_score_scaling(self):
        rng = np.random.default_rng(21)
        for _ in range(150):
            preds, gts = micro_scene(rng)
            c = float(rng.choice([1e-3, 0.37, 2.0, 1e3]))
            scaled = [dataclasses.replace(p, score=p.score * c) for p in preds]
            assert [_fields(r) for r in bucketed_report(preds, gts)] == \
                   [_fields(r) for r in bucketed_report(scaled, gts)]

    def test_permutation(self):
        rng = np.random.default_rng(22)
        shuffler = random.Random(0)
        for _ in range(150):
            preds, gts = micro_scene(rng)
            p2, g2 = preds[:], gts[:]
            shuffler.shuffle(p2)
            shuffler.shuffle(g2)
            assert [_fields(r) for r in bucketed_report(preds, gts)] == \
                   [_fields(r) for r in bucketed_report(p2, g2)]

    def test_bounds(self):
        rng = np.random.default_rng(23)
        for _ in range(300):
            preds, gts = micro_scene(rng)
            for r in bucketed_report(preds, gts):
                assert r.check_identity()
                if not r.defined:
                    continue
                assert 0 <= r.lds <= 1 and 0 <= r.mAP <= 1 and 0 <= r.rec <= 1
                assert 0 <= r.mATE <= 1 and 0 <= r.mASE <= 1 and r.mAOE >= 0


def test_reference_has_no_package_imports():
    import inspect

    src = inspect.getsource(reference)
    assert "import numpy" not in src and "from lr3d" not in src and "import lr3d" not in src


def test_published_constants():
    # values stated in the source publication
    from lr3d.synthdata import SceneConfig

    assert THRESHOLDS == (0.025, 0.05, 0.1, 0.2)
    assert SceneConfig().distant_threshold == 40.0
    assert [b.d_min for b in KITTI_BUCKETS] == [0.0, 40.0]
    assert [(b.d_min, b.d_max) for b in NUSCENES_BUCKETS][1] == (40.0, 51.2)
