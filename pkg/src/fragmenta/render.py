"""Static SVG overlays of matched fragment pairs: fragment m in place,
fragment n under both the estimated and the ground-truth transform, plus
correspondence lines."""

from __future__ import annotations

import numpy as np

from .geometry import OrderedContour, RigidTransform2D

_MAX_LINES = 60


def _path(points: np.ndarray) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return f"M {coords} Z"


def pair_overlay_svg(contour_m, contour_n, est: RigidTransform2D | None,
                     gt: RigidTransform2D, correspondences=None) -> str:
    """Build the overlay document; ``correspondences`` holds (i, j) contour
    index pairs drawn between fragment m and the estimated placement."""
    pts_m = contour_m.points if isinstance(contour_m, OrderedContour) else np.asarray(contour_m)
    pts_n = contour_n.points if isinstance(contour_n, OrderedContour) else np.asarray(contour_n)
    placed_gt = gt.apply(pts_n)
    placed_est = est.apply(pts_n) if est is not None else None

    stacks = [pts_m, placed_gt] + ([placed_est] if placed_est is not None else [])
    allpts = np.concatenate(stacks, axis=0)
    x0, y0 = allpts.min(axis=0) - 10
    x1, y1 = allpts.max(axis=0) + 10

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.1f} {y0:.1f} '
        f'{x1 - x0:.1f} {y1 - y0:.1f}">',
        f'<path d="{_path(pts_m)}" fill="#4f81bd" fill-opacity="0.25" '
        'stroke="#2c4d73" stroke-width="1"/>',
        f'<path d="{_path(placed_gt)}" fill="none" stroke="#2e8b57" '
        'stroke-width="1" stroke-dasharray="4 3"/>',
    ]
    if placed_est is not None:
        parts.append(
            f'<path d="{_path(placed_est)}" fill="#c0504d" fill-opacity="0.25" '
            'stroke="#8c2d2a" stroke-width="1"/>')
        if correspondences is not None and len(correspondences):
            corr = np.asarray(correspondences)[:, :2].astype(int)
            stride = max(1, len(corr) // _MAX_LINES)
            for i, j in corr[::stride]:
                xm, ym = pts_m[i]
                xn, yn = placed_est[j]
                parts.append(
                    f'<line x1="{xm:.1f}" y1="{ym:.1f}" x2="{xn:.1f}" y2="{yn:.1f}" '
                    'stroke="#555555" stroke-width="0.5" stroke-opacity="0.7"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_pair_overlay(path, contour_m, contour_n, est, gt, correspondences=None) -> None:
    svg = pair_overlay_svg(contour_m, contour_n, est, gt, correspondences)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
