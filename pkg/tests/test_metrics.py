import math

import numpy as np
import pytest

from fragmenta.errors import InvalidInputError, UndefinedMetricError
from fragmenta.geometry import RigidTransform2D, rigid_fit
from fragmenta.metrics import (
    MatchEval,
    hausdorff_error,
    ndcg_at_k,
    normalized_translation_error,
    recall_at_k,
    registration_recall,
    rotation_error,
    stratified_report,
)

TABLE = {
    1: [2, 3, 4, 5, 6],
    2: [1, 3, 4, 5, 6],
    3: [6, 5, 4, 2, 1],
    4: [1, 2, 3, 5, 6],
    5: [6, 4, 3, 2, 1],
    6: [1, 2, 3, 4, 5],
}


class TestRecallAtK:
    def test_partner_always_first(self):
        table = {1: [2, 9], 2: [1, 9], 9: [1, 2]}
        assert recall_at_k(table, [(1, 2)], 2) == 1.0

    def test_partner_never_present(self):
        table = {1: [3, 4], 2: [3, 4], 3: [], 4: []}
        assert recall_at_k(table, [(1, 2)], 2) == 0.0

    def test_hand_enumerated_six_fragment_case(self):
        # pairs (1,2), (3,5), (4,6) under TABLE at k=2:
        #  1->2 hit, 2->1 hit, 3->5 hit, 5->3 miss, 4->6 miss, 6->4 miss
        assert recall_at_k(TABLE, [(1, 2), (3, 5), (4, 6)], 2) == pytest.approx(3 / 6)

    def test_monotone_in_k(self):
        pairs = [(1, 2), (3, 5), (4, 6)]
        values = [recall_at_k(TABLE, pairs, k) for k in (2, 3, 4, 5)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_empty_gt_rejected(self):
        with pytest.raises(UndefinedMetricError):
            recall_at_k(TABLE, [], 5)

    def test_k_one_rejected(self):
        with pytest.raises(InvalidInputError):
            recall_at_k(TABLE, [(1, 2)], 1)


class TestNdcgAtK:
    def test_single_relevant_at_rank_1(self):
        table = {1: [2, 3, 4], 2: [1, 3, 4], 3: [], 4: []}
        assert ndcg_at_k(table, [(1, 2)], 5) == 1.0

    def test_single_relevant_at_rank_2(self):
        table = {1: [3, 2, 4], 2: [3, 1, 4], 3: [], 4: []}
        value = ndcg_at_k(table, [(1, 2)], 5)
        assert value == pytest.approx(1.0 / math.log2(3), abs=1e-12)
        assert value == pytest.approx(0.63093, abs=1e-5)

    def test_two_relevant_at_top_two(self):
        table = {1: [2, 3, 9], 2: [1, 9, 3], 3: [1, 9, 2], 9: [5, 5, 5]}
        assert ndcg_at_k(table, [(1, 2), (1, 3)], 5) == 1.0  # ideal ordering

    def test_multi_relevant_non_ideal(self):
        # query 1 sees relevant at ranks 1 and 3; queries 2 and 3 at rank 1
        table = {1: [2, 9, 3], 2: [1, 9, 3], 3: [1, 9, 2], 9: []}
        got = ndcg_at_k(table, [(1, 2), (1, 3)], 5)
        ndcg_1 = (1.0 + 1.0 / math.log2(4)) / (1.0 + 1.0 / math.log2(3))
        assert got == pytest.approx((ndcg_1 + 1.0 + 1.0) / 3, abs=1e-12)

    def test_monotone_in_k(self):
        pairs = [(1, 2), (3, 5), (4, 6)]
        values = [ndcg_at_k(TABLE, pairs, k) for k in (2, 3, 4, 5)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


class TestRotationError:
    def test_identical(self):
        tf = RigidTransform2D(0.4, 1, 2)
        assert rotation_error(tf, tf) == 0.0

    def test_wrap_across_two_pi(self):
        est = RigidTransform2D(0.1, 0, 0)
        gt = RigidTransform2D(2 * math.pi - 0.1, 0, 0)
        assert rotation_error(est, gt) == pytest.approx(0.2, abs=1e-12)

    def test_wrap_past_pi(self):
        est = RigidTransform2D(0.0, 0, 0)
        gt = RigidTransform2D(math.pi + 0.3, 0, 0)
        assert rotation_error(est, gt) == pytest.approx(math.pi - 0.3, abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a = RigidTransform2D(rng.uniform(-10, 10), 0, 0)
            b = RigidTransform2D(rng.uniform(-10, 10), 0, 0)
            assert 0.0 <= rotation_error(a, b) <= math.pi


class TestNormalizedTranslationError:
    def test_equal_transforms(self):
        tf = RigidTransform2D(0.2, 3, 4)
        assert normalized_translation_error(tf, tf, 100, 200) == 0.0

    def test_arithmetic(self):
        est = RigidTransform2D(0.0, 10.0, 0.0)
        gt = RigidTransform2D(0.0, 0.0, 0.0)
        assert normalized_translation_error(est, gt, 1000, 1000) == pytest.approx(5e-3)

    def test_area_linearity(self):
        est = RigidTransform2D(0.0, 10.0, 0.0)
        gt = RigidTransform2D(0.0, 0.0, 0.0)
        v1 = normalized_translation_error(est, gt, 1000, 1000)
        v2 = normalized_translation_error(est, gt, 2000, 2000)
        assert v2 == pytest.approx(v1 / 2)

    def test_anchor_removes_pivot_dependence(self):
        anchor = (40.0, -10.0)
        gt = RigidTransform2D(0.3, 5.0, 2.0)
        est = RigidTransform2D(0.3, 5.0, 2.0)
        assert normalized_translation_error(est, gt, 10, 10, anchor) == 0.0

    def test_bad_area_rejected(self):
        tf = RigidTransform2D(0, 0, 0)
        with pytest.raises(InvalidInputError):
            normalized_translation_error(tf, tf, 0, 10)


class TestHausdorffError:
    def test_equal_transforms(self):
        ring = _ring(30, 50)
        tf = RigidTransform2D(0.5, 3, 4)
        assert hausdorff_error(tf, tf, ring) == 0.0

    def test_pure_translation(self):
        ring = _ring(30, 50)
        est = RigidTransform2D(0.0, 3.0, 4.0)
        gt = RigidTransform2D(0.0, 0.0, 0.0)
        assert hausdorff_error(est, gt, ring) == pytest.approx(5.0, abs=1e-12)

    def test_rotation_displacement_bound_and_arc_value(self):
        """Every point of a centered radius-R shape moves 2R sin(delta/2)
        under rotation by delta. A closed ring slides onto itself, so its
        set-Hausdorff stays far below that bound; an open arc exposes the
        full value at its free end (dense-sampling oracle)."""
        radius, delta = 50.0, 0.2
        displacement = 2 * radius * math.sin(delta / 2)
        est = RigidTransform2D(delta, 0.0, 0.0)
        gt = RigidTransform2D(0.0, 0.0, 0.0)

        ring = _ring(3000, radius)
        assert hausdorff_error(est, gt, ring) <= displacement + 1e-9

        ang = np.linspace(0, math.pi, 3000)  # semicircular arc
        arc = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
        assert hausdorff_error(est, gt, arc) == pytest.approx(displacement, rel=1e-3)


def _ring(n, radius):
    ang = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)


def _eval(est, gt, pts_n=None, difficulty="Medium"):
    pts = _ring(50, 20.0) if pts_n is None else pts_n
    return MatchEval(est=est, gt=gt, matched_points_n=pts[:10], contour_n=pts,
                     area_m=500.0, area_n=700.0, difficulty=difficulty)


class TestRegistrationRecall:
    def test_oracle_matcher_perfect(self):
        rng = np.random.default_rng(0)
        evals = []
        for _ in range(5):
            pts = rng.uniform(-40, 40, size=(12, 2))
            gt = RigidTransform2D(rng.uniform(-3, 3), *rng.uniform(-20, 20, 2))
            est = rigid_fit(pts, gt.apply(pts))  # oracle: fit on GT correspondences
            evals.append(MatchEval(est, gt, pts, pts, 100, 100))
        assert registration_recall(evals, 10.0) == 1.0

    def test_no_model_everywhere(self):
        gt = RigidTransform2D(0, 0, 0)
        evals = [_eval(None, gt) for _ in range(4)]
        assert registration_recall(evals, 10.0) == 0.0

    def test_hand_built_one_of_three(self):
        gt = RigidTransform2D(0.0, 0.0, 0.0)
        good = _eval(RigidTransform2D(0.0, 1.0, 0.0), gt)      # rms 1 < 10
        bad = _eval(RigidTransform2D(0.0, 50.0, 0.0), gt)      # rms 50
        none = _eval(None, gt)
        assert registration_recall([good, bad, none], 10.0) == pytest.approx(1 / 3)


class TestStratifiedReport:
    def _fixture(self):
        gt = RigidTransform2D(0.0, 0.0, 0.0)
        metas, evals = [], []
        for idx, (difficulty, ok) in enumerate(
                [("High", False), ("High", True), ("Medium", True),
                 ("Low", True), ("Low", True)]):
            est = RigidTransform2D(0.0, 1.0 if ok else 99.0, 0.0)
            metas.append(((idx, idx + 100), difficulty))
            evals.append(_eval(est, gt, difficulty=difficulty))
        return metas, evals

    def test_counts_reconcile(self):
        metas, evals = self._fixture()
        report = stratified_report(metas, evals)
        strata = report.strata
        assert strata["High"].pair_count == 2
        assert strata["Medium"].pair_count == 1
        assert strata["Low"].pair_count == 2
        assert strata["All"].pair_count == 5
        assert sum(strata[d].pair_count for d in ("High", "Medium", "Low")) == \
            strata["All"].pair_count

    def test_single_stratum_equals_overall(self):
        gt = RigidTransform2D(0, 0, 0)
        metas = [((i, i + 10), "Low") for i in range(3)]
        evals = [_eval(RigidTransform2D(0, 1, 0), gt, difficulty="Low") for _ in range(3)]
        report = stratified_report(metas, evals)
        assert report.strata["Low"].rr == report.strata["All"].rr

    def test_pooled_equals_weighted_strata(self):
        metas, evals = self._fixture()
        report = stratified_report(metas, evals)
        pooled = report.strata["All"].rr
        weighted = sum(report.strata[d].rr * report.strata[d].pair_count
                       for d in ("High", "Medium", "Low")) / 5
        assert pooled == pytest.approx(weighted, abs=1e-12)

    def test_retrieval_block(self):
        table = {0: [100, 1], 100: [0, 1], 1: [101, 0], 101: [1, 0]}
        metas = [((0, 100), "Low"), ((1, 101), "High")]
        report = stratified_report(metas, [], rank_table=table)
        assert report.strata["All"].recall[5] == 1.0
        assert report.strata["Low"].recall[5] == 1.0
        assert report.strata["All"].ndcg[5] == 1.0
