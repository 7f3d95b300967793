from __future__ import annotations

import numpy as np

from .box import Box3D

SLIVER_AREA = 1e-12


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: ``subject`` clipped by convex CCW polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp = out
        out = []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_cross_point(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_cross_point(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    poly = clip_convex(a.bev_corners(), b.bev_corners())
    area = abs(polygon_area(poly))
    return 0.0 if area < SLIVER_AREA else area


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU of two yaw-rotated boxes."""
    z0 = max(a.z_range[0], b.z_range[0])
    z1 = min(a.z_range[1], b.z_range[1])
    if z1 <= z0:
        return 0.0
    inter = bev_intersection_area(a, b) * (z1 - z0)
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    if inter >= union * (1.0 - 1e-12):
        return 1.0
    return float(min(1.0, max(0.0, inter / union)))


def bev_iou(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.l * a.w + b.l * b.w - inter
    return float(min(1.0, inter / union))
