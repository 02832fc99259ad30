"""Recursive image tearing with full ground truth.

A complete image is cut into irregular fragments by repeatedly picking a
piece, sampling a chord of its bounding box's circumcircle, routing a cut
polyline (straight or Fourier-synthesized spans) through interior
waypoints, and splitting the raster along it. Every successful cut
records which boundary pixels of the two sides face each other across the
tear; those matched points later become contour-index correspondences, a
ground-truth rigid transform, and a difficulty label per adjacent pair.

All randomness flows through the caller-supplied generator, so a fixed
(image, config, seed) triple reproduces the output bit for bit.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from shapely.geometry import LineString

from .codec import trace_contour
from .errors import ConfigError, GenerationRetry, InvalidCutError, InvalidInputError
from .geometry import (
    OrderedContour,
    Point2,
    RigidTransform2D,
    circumcircle,
    rigid_fit,
    segment_contour_intersections,
    smaller_arc_length,
)

log = logging.getLogger(__name__)

MATCH_TOL_PX = 1.5

DIFFICULTY_LEVELS = ("High", "Medium", "Low")


@dataclass
class GeneratorConfig:
    """Tearing parameters; defaults follow the published recipe."""

    t_max: int = 40
    tau: float = 0.9
    n_max: int = 3
    d_min: float = 100.0
    n_fourier: int = 20
    s1: float = 0.25
    s2: float = 0.0067
    s3: float = 1.5
    s4: float = 0.3
    rho: float = 0.5
    h_min: int = 150
    w_min: int = 150
    seed: int = 0
    difficulty_low: float = 0.30   # overlap at or above this is Low difficulty
    difficulty_high: float = 0.15  # overlap below this is High difficulty

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        for name in ("t_max", "n_fourier", "h_min", "w_min"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.n_max < 0 or self.d_min <= 0:
            raise ConfigError("n_max must be >= 0 and d_min > 0")
        if not 0.0 < self.difficulty_high < self.difficulty_low <= 1.0:
            raise ConfigError("difficulty thresholds must satisfy 0 < high < low <= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


@dataclass
class FragmentRecord:
    """One torn piece: masked raster crop plus its placement and boundary."""

    id: int
    pixels: np.ndarray            # (h, w, 3) uint8, zeroed outside the mask
    mask: np.ndarray              # (h, w) bool
    offset: Point2                # crop origin in the source image frame
    contour: OrderedContour       # fragment-local pixel coordinates
    source_image_id: int = 0

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class PairGroundTruth:
    """Adjacency annotation for two fragments sharing a torn edge."""

    id_m: int
    id_n: int
    matches: np.ndarray                 # (K, 2) int64 contour-index pairs
    gt_transform: RigidTransform2D      # maps n-local coordinates onto m-local
    overlap_proportion: float
    difficulty: str

    def gt_matrix(self, m_len: int, n_len: int) -> np.ndarray:
        gt = np.zeros((m_len, n_len))
        gt[self.matches[:, 0], self.matches[:, 1]] = 1.0
        return gt


@dataclass
class CutPolyline:
    points: np.ndarray            # (P, 2) float64 open polyline
    segment_kinds: list[str] = field(default_factory=list)  # per waypoint span


def _tight_bbox(contour: OrderedContour) -> tuple[float, float, float, float]:
    pts = contour.points
    return (float(pts[:, 0].min()), float(pts[:, 1].min()),
            float(pts[:, 0].max()), float(pts[:, 1].max()))


def sample_cut_endpoints(fragment: FragmentRecord, cfg: GeneratorConfig, rng
                         ) -> tuple[Point2, Point2]:
    """Chord sampling: draw circumcircle points until the smaller arc
    between them exceeds tau times the half perimeter, then return the
    first and last hits of that line on the fragment contour."""
    x0, y0, x1, y1 = _tight_bbox(fragment.contour)
    circle = circumcircle((x0, y0, x1, y1))
    cx, cy = circle.center
    half_perimeter = math.pi * circle.radius
    for _ in range(1000):
        while True:
            ang_a, ang_b = rng.uniform(-math.pi, math.pi, size=2)
            pa = np.array([cx + circle.radius * math.cos(ang_a),
                           cy + circle.radius * math.sin(ang_a)])
            pb = np.array([cx + circle.radius * math.cos(ang_b),
                           cy + circle.radius * math.sin(ang_b)])
            if smaller_arc_length(circle, pa, pb) > cfg.tau * half_perimeter:
                break
        hits = segment_contour_intersections(fragment.contour, pa, pb)
        if len(hits) >= 2:
            return hits[0][0], hits[-1][0]
    raise GenerationRetry("no chord intersected the contour in 1000 draws")


def _distance_to_contour(mask: np.ndarray, contour: OrderedContour) -> np.ndarray:
    """Per-pixel Euclidean distance to the nearest contour pixel."""
    edge = np.zeros_like(mask, dtype=bool)
    xs = np.rint(contour.points[:, 0]).astype(int)
    ys = np.rint(contour.points[:, 1]).astype(int)
    edge[ys, xs] = True
    return ndimage.distance_transform_edt(~edge)


def sample_interior_waypoints(fragment: FragmentRecord, m: int, cfg: GeneratorConfig,
                              rng, p_start: Point2, p_end: Point2) -> np.ndarray:
    """Up to m interior points, each farther than d_min from the contour,
    sorted by projection onto the p_start -> p_end axis.

    A fragment too small to admit any such point downgrades to an empty
    list with a logged note rather than failing.
    """
    if m == 0:
        return np.empty((0, 2))
    dist = _distance_to_contour(fragment.mask, fragment.contour)
    feasible = fragment.mask & (dist > cfg.d_min)
    if not feasible.any():
        log.debug("fragment %d cannot host waypoints at d_min=%.0f; downgraded to 0",
                  fragment.id, cfg.d_min)
        return np.empty((0, 2))
    inside_r, inside_c = np.nonzero(fragment.mask)
    chosen = None
    for _ in range(200):
        pick = rng.integers(0, len(inside_r), size=m)
        rr, cc = inside_r[pick], inside_c[pick]
        if np.all(dist[rr, cc] > cfg.d_min):
            chosen = np.stack([cc, rr], axis=1).astype(np.float64)
            break
    if chosen is None:
        feas_r, feas_c = np.nonzero(feasible)
        pick = rng.integers(0, len(feas_r), size=m)
        chosen = np.stack([feas_c[pick], feas_r[pick]], axis=1).astype(np.float64)
    axis = np.asarray(p_end, dtype=np.float64) - np.asarray(p_start, dtype=np.float64)
    proj = (chosen - np.asarray(p_start)) @ axis
    return chosen[np.argsort(proj, kind="stable")]


def fourier_curve(p_i, p_j, width: float, height: float, cfg: GeneratorConfig, rng
                  ) -> np.ndarray:
    """Irregular span between two waypoints.

    A randomized sine series is evaluated per unit x-step in a local frame
    whose x-axis runs p_i -> p_j, then endpoint-anchored by subtracting the
    linear interpolant of its endpoint residuals so the polyline starts and
    ends exactly at the waypoints.
    """
    a = np.asarray(p_i, dtype=np.float64)
    b = np.asarray(p_j, dtype=np.float64)
    if np.array_equal(a, b):
        raise InvalidInputError("identical span endpoints")
    amplitude = period = phase = None
    for _ in range(100):
        phase = rng.uniform(-math.pi, math.pi)
        amplitude = rng.normal(cfg.s1 * height, cfg.s2 * height)
        period = rng.normal(cfg.s3 * width, cfg.s4 * width)
        if period > 1.0:
            break
    else:
        return np.stack([a, b])
    length = float(np.hypot(*(b - a)))
    xs = np.arange(0.0, math.floor(length) + 1.0)
    if xs[-1] != length:
        xs = np.append(xs, length)
    orders = np.arange(cfg.n_fourier + 1, dtype=np.float64)
    angles = (2.0 * math.pi / period) * xs[:, None] * orders[None, :] + phase
    ys = (amplitude / (1.0 + orders) * np.sin(angles)).sum(axis=1) + height / 2.0
    ys = ys - ((1.0 - xs / length) * ys[0] + (xs / length) * ys[-1])
    u = (b - a) / length
    normal = np.array([-u[1], u[0]])
    pts = a[None, :] + xs[:, None] * u[None, :] + ys[:, None] * normal[None, :]
    pts[0] = a
    pts[-1] = b
    return pts


def build_cut_polyline(waypoints, width: float, height: float,
                       cfg: GeneratorConfig, rng) -> CutPolyline:
    """Connect consecutive waypoints with irregular curves (probability rho)
    or straight segments; self-intersecting polylines are resampled up to
    20 times, after which every span falls back to straight."""
    wps = [np.asarray(p, dtype=np.float64) for p in waypoints]
    if len(wps) < 2:
        raise InvalidInputError("a cut needs at least 2 waypoints")
    for _ in range(20):
        pts = [wps[0]]
        kinds = []
        for a, b in zip(wps[:-1], wps[1:]):
            if rng.random() < cfg.rho:
                span = fourier_curve(a, b, width, height, cfg, rng)
                kinds.append("irregular")
            else:
                span = np.stack([a, b])
                kinds.append("straight")
            pts.extend(span[1:])
        poly = np.array(pts)
        keep = np.ones(len(poly), dtype=bool)
        keep[1:] = np.any(np.diff(poly, axis=0) != 0, axis=1)
        poly = poly[keep]
        if len(poly) >= 2 and LineString(poly).is_simple:
            return CutPolyline(poly, kinds)
    poly = np.array(wps)
    return CutPolyline(poly, ["straight"] * (len(wps) - 1))


def _rasterize_polyline(points: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Dense 8-connected rasterization of a float polyline onto a grid."""
    h, w = shape
    raster = np.zeros(shape, dtype=bool)
    for a, b in zip(points[:-1], points[1:]):
        dist = float(np.hypot(*(b - a)))
        n = max(2, int(math.ceil(dist / 0.5)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        xs = np.rint(a[0] + ts * (b[0] - a[0])).astype(int)
        ys = np.rint(a[1] + ts * (b[1] - a[1])).astype(int)
        ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        raster[ys[ok], xs[ok]] = True
    return raster


def _assign_cut_pixels(labels: np.ndarray, cut: np.ndarray) -> np.ndarray:
    """Attach every cut pixel to side 1 or 2; ties alternate by pixel
    parity so a straight midline splits mass evenly."""
    assign = labels.copy()
    todo_r, todo_c = np.nonzero(cut)
    pending = list(zip(todo_r.tolist(), todo_c.tolist()))
    h, w = assign.shape
    while pending:
        still = []
        progressed = False
        for r, c in pending:
            n1 = n2 = False
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w:
                    if assign[rr, cc] == 1:
                        n1 = True
                    elif assign[rr, cc] == 2:
                        n2 = True
            if n1 and n2:
                assign[r, c] = 1 if (r + c) % 2 == 0 else 2
            elif n1:
                assign[r, c] = 1
            elif n2:
                assign[r, c] = 2
            else:
                still.append((r, c))
                continue
            progressed = True
        if not progressed:
            for r, c in still:
                assign[r, c] = 1
            break
        pending = still
    return assign


def _make_child(parent: FragmentRecord, side_mask: np.ndarray, child_id: int
                ) -> FragmentRecord:
    rows = np.nonzero(side_mask.any(axis=1))[0]
    cols = np.nonzero(side_mask.any(axis=0))[0]
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    mask = side_mask[r0:r1, c0:c1]
    pixels = parent.pixels[r0:r1, c0:c1].copy()
    pixels[~mask] = 0
    contour = trace_contour(mask)
    return FragmentRecord(
        id=child_id,
        pixels=pixels,
        mask=mask,
        offset=Point2(parent.offset.x + c0, parent.offset.y + r0),
        contour=contour,
        source_image_id=parent.source_image_id,
    )


def cut_fragment(fragment: FragmentRecord, cut: CutPolyline, id_a: int = -1,
                 id_b: int = -2) -> tuple[FragmentRecord, FragmentRecord, np.ndarray]:
    """Split a fragment along a cut polyline at pixel resolution.

    Returns the two children plus the raw matched boundary points: an
    (K, 4) array of (x1, y1, x2, y2) rows in the parent-local frame, pairing
    each side-1 contour pixel with its nearest side-2 contour pixel within
    1.5 px. Raises InvalidCutError when the cut does not produce exactly
    two connected pieces.
    """
    mask = fragment.mask
    raster = _rasterize_polyline(cut.points, mask.shape) & mask
    if not raster.any():
        raise InvalidCutError("cut polyline misses the fragment mask")
    remaining = mask & ~raster
    labels, n_comp = ndimage.label(remaining)
    if n_comp != 2:
        raise InvalidCutError(f"cut produced {n_comp} components, expected 2")
    assign = _assign_cut_pixels(labels, raster)
    side1 = assign == 1
    side2 = assign == 2
    for side in (side1, side2):
        _, n = ndimage.label(side)
        if n != 1:
            raise InvalidCutError("cut pixel allocation disconnected a side")
    child_a = _make_child(fragment, side1, id_a)
    child_b = _make_child(fragment, side2, id_b)
    pts_a = child_a.contour.points + np.array([child_a.offset.x - fragment.offset.x,
                                               child_a.offset.y - fragment.offset.y])
    pts_b = child_b.contour.points + np.array([child_b.offset.x - fragment.offset.x,
                                               child_b.offset.y - fragment.offset.y])
    dist, idx = cKDTree(pts_b).query(pts_a, distance_upper_bound=MATCH_TOL_PX)
    hit = np.isfinite(dist)
    if not hit.any():
        raise InvalidCutError("children share no boundary pixels")
    matched = np.concatenate([pts_a[hit], pts_b[idx[hit]]], axis=1)
    return child_a, child_b, matched


def _longest_nonincreasing(seq: np.ndarray) -> np.ndarray:
    """Indices of one longest non-increasing subsequence (patience sort)."""
    key = [(-int(v)) for v in seq]  # longest non-decreasing of the negation
    tails: list[int] = []
    tails_idx: list[int] = []
    parent = [-1] * len(key)
    for i, v in enumerate(key):
        pos = bisect.bisect_right(tails, v)
        if pos == len(tails):
            tails.append(v)
            tails_idx.append(i)
        else:
            tails[pos] = v
            tails_idx[pos] = i
        parent[i] = tails_idx[pos - 1] if pos > 0 else -1
    out = []
    cur = tails_idx[-1]
    while cur != -1:
        out.append(cur)
        cur = parent[cur]
    return np.array(out[::-1], dtype=np.int64)


def _cyclic_unwrap(values: np.ndarray, period: int) -> np.ndarray:
    """Shift cyclic indices so the occupied arc becomes contiguous from 0."""
    uniq = np.unique(values)
    if len(uniq) == 1:
        start = int(uniq[0])
    else:
        gaps = np.diff(np.append(uniq, uniq[0] + period))
        start = int(uniq[(int(np.argmax(gaps)) + 1) % len(uniq)])
    return (values - start) % period


def _contour_index_map(contour: OrderedContour) -> dict[tuple[int, int], int]:
    table: dict[tuple[int, int], int] = {}
    for idx, (x, y) in enumerate(np.rint(contour.points).astype(int)):
        table.setdefault((int(x), int(y)), idx)
    return table


def derive_pair_gt(f_m: FragmentRecord, f_n: FragmentRecord,
                   matched_points: np.ndarray, cfg: GeneratorConfig
                   ) -> Optional[PairGroundTruth]:
    """Turn raw matched boundary points (source frame, (K, 4) rows of
    x_m, y_m, x_n, y_n) into contour-index pairs, a least-squares rigid
    transform, an overlap proportion, and a difficulty label.

    The index pairs are reduced to a clean monotone staircase (m-indices
    increasing, n-indices non-increasing, modulo cyclic start). Returns
    None, with a warning, when fewer than 2 matches survive.
    """
    map_m = _contour_index_map(f_m.contour)
    map_n = _contour_index_map(f_n.contour)
    seen_m: set[int] = set()
    raw: list[tuple[int, int]] = []
    for xm, ym, xn, yn in matched_points:
        i = map_m.get((int(round(xm - f_m.offset.x)), int(round(ym - f_m.offset.y))))
        j = map_n.get((int(round(xn - f_n.offset.x)), int(round(yn - f_n.offset.y))))
        if i is None or j is None or i in seen_m:
            continue
        seen_m.add(i)
        raw.append((i, j))
    if len(raw) < 2:
        log.warning("pair (%d, %d) discarded: %d usable matches", f_m.id, f_n.id, len(raw))
        return None
    arr = np.array(raw, dtype=np.int64)
    m_len, n_len = len(f_m.contour), len(f_n.contour)
    ui = _cyclic_unwrap(arr[:, 0], m_len)
    order = np.argsort(ui, kind="stable")
    arr = arr[order]
    uj = _cyclic_unwrap(arr[:, 1], n_len)
    keep = _longest_nonincreasing(uj)
    arr = arr[keep]
    if len(arr) < 2 or len(np.unique(arr[:, 1])) < 2:
        log.warning("pair (%d, %d) discarded after staircase cleanup", f_m.id, f_n.id)
        return None
    src = f_n.contour.points[arr[:, 1]]
    dst = f_m.contour.points[arr[:, 0]]
    transform = rigid_fit(src, dst)
    overlap = len(arr) / min(m_len, n_len)
    if overlap >= cfg.difficulty_low:
        difficulty = "Low"
    elif overlap < cfg.difficulty_high:
        difficulty = "High"
    else:
        difficulty = "Medium"
    return PairGroundTruth(f_m.id, f_n.id, arr, transform, float(overlap), difficulty)


def _full_image_fragment(image: np.ndarray, image_id: int) -> FragmentRecord:
    mask = np.ones(image.shape[:2], dtype=bool)
    return FragmentRecord(
        id=0,
        pixels=np.ascontiguousarray(image[:, :, :3]),
        mask=mask,
        offset=Point2(0.0, 0.0),
        contour=trace_contour(mask),
        source_image_id=image_id,
    )


_MAX_FAILED_ITERATIONS = 25
_SIZE_RETRIES = 10


def generate(image: np.ndarray, cfg: GeneratorConfig, rng, image_id: int = 0
             ) -> tuple[list[FragmentRecord], list[PairGroundTruth]]:
    """Tear one image into fragments with ground-truth adjacency.

    Runs until t_max successful cuts, or until no fragment can be split
    any further (25 consecutive failed iterations). Cuts whose children
    would fall below the minimum bbox are retried up to 10 times within an
    iteration and never counted toward t_max.
    """
    image = np.asarray(image)
    whole = _full_image_fragment(image, image_id)
    if whole.width < 2 * cfg.w_min or whole.height < 2 * cfg.h_min:
        return [whole], []

    fragments: dict[int, FragmentRecord] = {0: whole}
    # adjacency[(a, b)] with a < b: (K, 4) matched points in the source frame
    adjacency: dict[tuple[int, int], np.ndarray] = {}
    next_id = 1
    successes = 0
    failed_iterations = 0

    while successes < cfg.t_max and failed_iterations < _MAX_FAILED_ITERATIONS:
        alive = sorted(fragments)
        frag = fragments[alive[int(rng.integers(0, len(alive)))]]
        success = False
        for _ in range(_SIZE_RETRIES):
            try:
                p_start, p_end = sample_cut_endpoints(frag, cfg, rng)
            except GenerationRetry:
                break
            n_mid = int(rng.integers(0, cfg.n_max + 1))
            mid = sample_interior_waypoints(frag, n_mid, cfg, rng, p_start, p_end)
            waypoints = [np.asarray(p_start)] + [p for p in mid] + [np.asarray(p_end)]
            cut = build_cut_polyline(waypoints, frag.width, frag.height, cfg, rng)
            try:
                child_a, child_b, matched = cut_fragment(frag, cut, next_id, next_id + 1)
            except InvalidCutError:
                continue
            ok_a = child_a.width >= cfg.w_min and child_a.height >= cfg.h_min
            ok_b = child_b.width >= cfg.w_min and child_b.height >= cfg.h_min
            if not (ok_a and ok_b):
                continue
            offset = np.array([frag.offset.x, frag.offset.y])
            matched_src = matched + np.concatenate([offset, offset])
            # children inherit the parent's adjacencies pixel by pixel
            for key in [k for k in adjacency if frag.id in k]:
                points = adjacency.pop(key)
                other = key[0] if key[1] == frag.id else key[1]
                own_first = key[0] == frag.id
                own = points[:, 0:2] if own_first else points[:, 2:4]
                for child in (child_a, child_b):
                    local = own - np.array([child.offset.x, child.offset.y])
                    li = np.rint(local).astype(int)
                    inside = (
                        (li[:, 0] >= 0) & (li[:, 0] < child.width)
                        & (li[:, 1] >= 0) & (li[:, 1] < child.height)
                    )
                    inside[inside] &= child.mask[li[inside][:, 1], li[inside][:, 0]]
                    if inside.sum() >= 2:
                        sub = points[inside]
                        if not own_first:
                            sub = sub[:, [2, 3, 0, 1]]
                        a, b = sorted((child.id, other))
                        adjacency[(a, b)] = sub if a == child.id else sub[:, [2, 3, 0, 1]]
            adjacency[(child_a.id, child_b.id)] = matched_src
            del fragments[frag.id]
            fragments[child_a.id] = child_a
            fragments[child_b.id] = child_b
            next_id += 2
            successes += 1
            success = True
            break
        failed_iterations = 0 if success else failed_iterations + 1

    ordered = [fragments[i] for i in sorted(fragments)]
    pairs: list[PairGroundTruth] = []
    for (a, b) in sorted(adjacency):
        gt = derive_pair_gt(fragments[a], fragments[b], adjacency[(a, b)], cfg)
        if gt is not None:
            pairs.append(gt)
    return ordered, pairs
