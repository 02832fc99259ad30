"""Similarity-matrix inference: noise thresholding, anti-diagonal
erode/dilate cleanup, correspondence extraction, and RANSAC rigid
registration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import InvalidInputError, NoModelError
from .geometry import OrderedContour, RigidTransform2D, rigid_fit
from .neural.autodiff import Tensor
from .neural.layers import dual_softmax, similarity_logits


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # (M1, M2) floats in [0, 1]
    id_m: int = -1
    id_n: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class InferenceConfig:
    eps: float = 0.006
    ransac_iters: int = 500
    inlier_tol_px: float = 5.0
    early_exit_ratio: float = 0.8
    flip_kernels: bool = False   # for datasets whose staircases run main-diagonal
    corr_cap: int = 2000

    def to_dict(self) -> dict:
        return {
            "eps": self.eps, "ransac_iters": self.ransac_iters,
            "inlier_tol_px": self.inlier_tol_px, "early_exit_ratio": self.early_exit_ratio,
            "flip_kernels": self.flip_kernels, "corr_cap": self.corr_cap,
        }


@dataclass
class MatchResult:
    correspondences: np.ndarray            # (K, 3) rows of (i, j, score)
    transform: Optional[RigidTransform2D]
    inlier_count: int
    match_score: float
    inlier_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def threshold_filter(s: SimilarityMatrix, eps: float = 0.006) -> SimilarityMatrix:
    """Zero out entries strictly below eps (an entry exactly at eps survives)."""
    if eps < 0:
        raise InvalidInputError("eps must be >= 0")
    values = np.where(s.values >= eps, s.values, 0.0)
    return SimilarityMatrix(values, s.id_m, s.id_n)


def erode_antidiagonal(s: SimilarityMatrix, flip: bool = False) -> SimilarityMatrix:
    """Erosion by the anti-diagonal structuring cells: an entry passes iff
    both offset neighbors are occupied. Occupied survivors keep their
    values; a single-cell gap flanked on both sides is filled with the
    smaller neighbor value, so split staircase segments reconnect."""
    return SimilarityMatrix(kernels.erode_antidiagonal_raw(s.values, flip), s.id_m, s.id_n)


def dilate_antidiagonal(s: SimilarityMatrix, flip: bool = False) -> SimilarityMatrix:
    """Grayscale max over the center and both anti-diagonal neighbors."""
    return SimilarityMatrix(kernels.dilate_antidiagonal_raw(s.values, flip), s.id_m, s.id_n)


def extract_correspondences(s: SimilarityMatrix) -> np.ndarray:
    """All nonzero entries as (i, j, score) rows, sorted by score descending
    with ties broken by (i, j) ascending."""
    ii, jj = np.nonzero(s.values)
    scores = s.values[ii, jj]
    order = np.lexsort((jj, ii, -scores))
    return np.stack([ii[order], jj[order], scores[order]], axis=1)


def _transform_from_two(src: np.ndarray, dst: np.ndarray) -> Optional[RigidTransform2D]:
    ds = src[1] - src[0]
    dd = dst[1] - dst[0]
    if (ds == 0).all() or (dd == 0).all():
        return None
    theta = math.atan2(dd[1], dd[0]) - math.atan2(ds[1], ds[0])
    c, s = math.cos(theta), math.sin(theta)
    tx = dst[0, 0] - (c * src[0, 0] - s * src[0, 1])
    ty = dst[0, 1] - (s * src[0, 0] + c * src[0, 1])
    return RigidTransform2D(theta, tx, ty)


def ransac_rigid(correspondences, contour_m, contour_n, iters: int = 500,
                 inlier_tol_px: float = 5.0, rng=None, early_exit_ratio: float = 0.8
                 ) -> tuple[RigidTransform2D, np.ndarray]:
    """Estimate the rigid transform mapping fragment-n points onto
    fragment-m points from scored correspondences.

    Minimal samples of 2 correspondences propose transforms; the best
    consensus set is refined by a least-squares rigid fit. Deterministic
    for a fixed rng.
    """
    corr = np.asarray(correspondences, dtype=np.float64)
    if corr.ndim != 2 or len(corr) < 2:
        raise NoModelError("RANSAC needs at least 2 correspondences")
    rng = np.random.default_rng(0) if rng is None else rng
    pts_m = contour_m.points if isinstance(contour_m, OrderedContour) else np.asarray(contour_m)
    pts_n = contour_n.points if isinstance(contour_n, OrderedContour) else np.asarray(contour_n)
    dst = pts_m[corr[:, 0].astype(np.int64)]
    src = pts_n[corr[:, 1].astype(np.int64)]
    n = len(corr)

    best_mask = None
    best_count = 0
    for _ in range(iters):
        pick = rng.integers(0, n, size=2)
        if pick[0] == pick[1]:
            continue
        cand = _transform_from_two(src[pick], dst[pick])
        if cand is None:
            continue
        resid = np.linalg.norm(src @ cand.rotation.T + cand.translation - dst, axis=1)
        mask = resid < inlier_tol_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            if count / n > early_exit_ratio:
                break
    if best_mask is None:
        raise NoModelError("no valid minimal sample produced a model")
    refined = rigid_fit(src[best_mask], dst[best_mask])
    resid = np.linalg.norm(src @ refined.rotation.T + refined.translation - dst, axis=1)
    inliers = np.nonzero(resid < inlier_tol_px)[0]
    if len(inliers) < 2:
        inliers = np.nonzero(best_mask)[0]
    else:
        refined = rigid_fit(src[inliers], dst[inliers])
    return refined, inliers.astype(np.int64)


def similarity_from_features(features_m, features_n, id_m: int = -1, id_n: int = -1
                             ) -> SimilarityMatrix:
    """Dual-softmax match probabilities from fused per-point features."""
    logits = similarity_logits(Tensor(np.asarray(features_m, dtype=np.float64)),
                               Tensor(np.asarray(features_n, dtype=np.float64)))
    return SimilarityMatrix(dual_softmax(logits).data, id_m, id_n)


def match_pair(features_m, features_n, contour_m, contour_n,
               cfg: InferenceConfig | None = None, rng=None,
               id_m: int = -1, id_n: int = -1) -> MatchResult:
    """Full pair-matching chain: similarity, dual softmax, threshold,
    erode once, dilate once, extract correspondences, RANSAC."""
    cfg = cfg or InferenceConfig()
    sim = similarity_from_features(features_m, features_n, id_m, id_n)
    filtered = threshold_filter(sim, cfg.eps)
    cleaned = dilate_antidiagonal(erode_antidiagonal(filtered, cfg.flip_kernels), cfg.flip_kernels)
    corr = extract_correspondences(cleaned)
    score = float(cleaned.values.sum())
    if len(corr) < 2:
        raise NoModelError("post-morphology similarity matrix is empty")
    transform, inliers = ransac_rigid(
        corr, contour_m, contour_n, cfg.ransac_iters, cfg.inlier_tol_px,
        rng, cfg.early_exit_ratio)
    return MatchResult(corr, transform, len(inliers), score, inliers)
