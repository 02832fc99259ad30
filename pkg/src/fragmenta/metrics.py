"""Evaluation suite: retrieval metrics (Recall@k, NDCG@k), registration
metrics (RR, HD, RE, NTE), and difficulty-stratified reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError
from .geometry import OrderedContour, RigidTransform2D, hausdorff_distance
from .tearing import DIFFICULTY_LEVELS

RR_TAU_DEFAULT = 10.0
RETRIEVAL_KS = (5, 10, 20)


def recall_at_k(rank_table: dict[int, list[int]], gt_pairs, k: int) -> float:
    """Hit rate of ground-truth partners inside the top-k ranking.

    Every unordered pair is evaluated in both query directions and the
    directions are averaged."""
    if k < 2:
        raise InvalidInputError("recall@k is defined for k >= 2")
    pairs = list(gt_pairs)
    if not pairs:
        raise UndefinedMetricError("recall over an empty ground-truth set")
    hits = 0
    total = 0
    for a, b in pairs:
        for query, target in ((a, b), (b, a)):
            total += 1
            if target in rank_table[query][:k]:
                hits += 1
    return hits / total


def _relevance_sets(gt_pairs) -> dict[int, set[int]]:
    rel: dict[int, set[int]] = {}
    for a, b in gt_pairs:
        rel.setdefault(a, set()).add(b)
        rel.setdefault(b, set()).add(a)
    return rel


def ndcg_at_k(rank_table: dict[int, list[int]], gt_pairs, k: int) -> float:
    """Binary-relevance NDCG averaged over queries with at least one
    relevant item; the ideal ordering puts all of a query's relevant items
    at the top."""
    if k < 2:
        raise InvalidInputError("ndcg@k is defined for k >= 2")
    rel = _relevance_sets(gt_pairs)
    if not rel:
        raise UndefinedMetricError("ndcg over an empty ground-truth set")
    scores = []
    for query, relevant in sorted(rel.items()):
        ranked = rank_table[query][:k]
        dcg = sum(1.0 / math.log2(pos + 2) for pos, fid in enumerate(ranked) if fid in relevant)
        ideal = sum(1.0 / math.log2(r + 2) for r in range(min(len(relevant), k)))
        scores.append(dcg / ideal)
    return float(np.mean(scores))


def rotation_error(est: RigidTransform2D, gt: RigidTransform2D) -> float:
    """Absolute angle difference wrapped into [0, pi]."""
    return abs(math.remainder(est.theta - gt.theta, math.tau))


def normalized_translation_error(est: RigidTransform2D, gt: RigidTransform2D,
                                 area_m: float, area_n: float,
                                 anchor=(0.0, 0.0)) -> float:
    """Translation gap normalized by the summed fragment areas.

    Both transforms are compared at the anchor point (the matched-segment
    centroid in registration evaluation), which removes the dependence on
    the rotation pivot."""
    if area_m <= 0 or area_n <= 0:
        raise InvalidInputError("areas must be positive")
    a = np.asarray(anchor, dtype=np.float64).reshape(1, 2)
    te = float(np.linalg.norm(est.apply(a) - gt.apply(a)))
    return te / (float(area_m) + float(area_n))


def hausdorff_error(est: RigidTransform2D, gt: RigidTransform2D, contour_n) -> float:
    """Hausdorff distance between the fragment contour placed by the
    estimated vs the ground-truth transform."""
    pts = contour_n.points if isinstance(contour_n, OrderedContour) else np.asarray(contour_n)
    if len(pts) == 0:
        raise InvalidInputError("empty contour")
    return hausdorff_distance(est.apply(pts), gt.apply(pts))


@dataclass
class MatchEval:
    """Everything needed to score one ground-truth pair's registration."""

    est: Optional[RigidTransform2D]
    gt: RigidTransform2D
    matched_points_n: np.ndarray       # GT matched points in the n-local frame
    contour_n: np.ndarray              # full n contour for HD
    area_m: float
    area_n: float
    difficulty: str = "Medium"

    def rms_placement_error(self) -> float:
        if self.est is None:
            return math.inf
        moved_est = self.est.apply(self.matched_points_n)
        moved_gt = self.gt.apply(self.matched_points_n)
        return float(np.sqrt(np.mean(np.sum((moved_est - moved_gt) ** 2, axis=1))))

    def succeeded(self, tau_rr: float) -> bool:
        return self.est is not None and self.rms_placement_error() < tau_rr


def registration_recall(evals: list[MatchEval], tau_rr: float = RR_TAU_DEFAULT) -> float:
    """Fraction of pairs with a returned model whose GT matched points land
    within tau_rr RMS of their ground-truth placement."""
    if not evals:
        return 0.0
    return sum(1 for e in evals if e.succeeded(tau_rr)) / len(evals)


@dataclass
class MetricBlock:
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    rr: Optional[float] = None
    hd_mean: Optional[float] = None
    re_mean: Optional[float] = None
    nte_mean: Optional[float] = None
    pair_count: int = 0

    def to_dict(self) -> dict:
        return {
            **{f"recall@{k}": self.recall.get(k) for k in sorted(self.recall)},
            **{f"ndcg@{k}": self.ndcg.get(k) for k in sorted(self.ndcg)},
            "rr": self.rr,
            "hd": self.hd_mean,
            "re": self.re_mean,
            "nte": self.nte_mean,
            "pairs": self.pair_count,
        }


@dataclass
class EvalReport:
    tau_rr: float
    strata: dict[str, MetricBlock]
    fragment_count: int = 0

    def to_dict(self) -> dict:
        return {
            "tau_rr": self.tau_rr,
            "fragments": self.fragment_count,
            "strata": {name: block.to_dict() for name, block in self.strata.items()},
        }


def _block_for(pairs_meta: list[tuple[tuple[int, int], str]],
               evals: list[MatchEval],
               rank_table: Optional[dict[int, list[int]]],
               tau_rr: float, ks=RETRIEVAL_KS) -> MetricBlock:
    block = MetricBlock(pair_count=len(pairs_meta) if pairs_meta else len(evals))
    if rank_table is not None and pairs_meta:
        id_pairs = [p for p, _ in pairs_meta]
        for k in ks:
            block.recall[k] = recall_at_k(rank_table, id_pairs, k)
            block.ndcg[k] = ndcg_at_k(rank_table, id_pairs, k)
    if evals:
        block.rr = registration_recall(evals, tau_rr)
        scored = [e for e in evals if e.est is not None]
        if scored:
            block.hd_mean = float(np.mean([hausdorff_error(e.est, e.gt, e.contour_n) for e in scored]))
            block.re_mean = float(np.mean([rotation_error(e.est, e.gt) for e in scored]))
            block.nte_mean = float(np.mean([
                normalized_translation_error(
                    e.est, e.gt, e.area_m, e.area_n,
                    anchor=e.matched_points_n.mean(axis=0))
                for e in scored]))
    return block


def stratified_report(pairs_meta: list[tuple[tuple[int, int], str]],
                      evals: list[MatchEval],
                      rank_table: Optional[dict[int, list[int]]] = None,
                      tau_rr: float = RR_TAU_DEFAULT,
                      fragment_count: int = 0) -> EvalReport:
    """Per-difficulty and pooled metrics.

    ``pairs_meta`` lists ((id_m, id_n), difficulty) for every ground-truth
    pair under evaluation; ``evals`` carries the registration records in
    the same order. The "All" row is computed over the pooled pairs, not
    by averaging strata."""
    if len(pairs_meta) != len(evals) and evals:
        raise InvalidInputError("pairs_meta and evals must align")
    strata: dict[str, MetricBlock] = {}
    for level in DIFFICULTY_LEVELS:
        meta = [pm for pm in pairs_meta if pm[1] == level]
        sub_evals = [e for pm, e in zip(pairs_meta, evals) if pm[1] == level] if evals else []
        if meta:
            strata[level] = _block_for(meta, sub_evals, rank_table, tau_rr)
        else:
            strata[level] = MetricBlock(pair_count=0)
    strata["All"] = _block_for(pairs_meta, evals, rank_table, tau_rr)
    return EvalReport(tau_rr=tau_rr, strata=strata, fragment_count=fragment_count)
