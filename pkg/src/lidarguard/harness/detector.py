"""A density-clustering vehicle detector that ignores occlusion entirely.

It finds blobs of above-ground points in bird's-eye view and calls each one
a car, scoring by point count. Any point set shaped roughly like a car
surface (a spoofed one included) is detected with confidence that grows with
its size, which is what makes it a useful stand-in for vulnerable models.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from ..cloud import PointCloud
from ..kitti import Detection
from ..geometry.box import Box3D
from ..render import DEFAULT_GROUND_Z

CAR_DIMS = (3.9, 1.6, 1.56)
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ProxyDetectorConfig:
    bev_cell: float = 0.4
    min_points: int = 5
    n_sat: float = 100.0
    ground_z: float = DEFAULT_GROUND_Z
    ground_margin: float = 0.2
    z_top: float = 3.0   # band height above ground kept for clustering
    max_range: float = 80.0

    def __post_init__(self):
        if not (self.bev_cell > 0 and self.min_points >= 1 and self.n_sat > 0
                and self.ground_margin > 0 and self.z_top > self.ground_margin and self.max_range > 0):
            raise ValueError("proxy detector parameters must be positive")


def _fit_box(xyz: np.ndarray, cfg: ProxyDetectorConfig) -> Box3D:
    """PCA heading, extent in that frame, grown to at least car size.

    The box is centered on the cluster centroid in BEV and stands on the
    ground plane.
    """
    xy = xyz[:, :2]
    mean = xy.mean(axis=0)
    d = xy - mean
    if len(xy) >= 2:
        cov = d.T @ d / len(xy)
        w, v = np.linalg.eigh(cov)
        major = v[:, int(np.argmax(w))]
        yaw = math.atan2(major[1], major[0])
    else:
        yaw = 0.0
    # canonical heading in (-pi/2, pi/2]
    if yaw <= -math.pi / 2:
        yaw += math.pi
    elif yaw > math.pi / 2:
        yaw -= math.pi
    c, s = math.cos(yaw), math.sin(yaw)
    u = d @ np.array([c, s])
    vv = d @ np.array([-s, c])
    length = max(2.0 * float(np.abs(u).max()), CAR_DIMS[0])
    width = max(2.0 * float(np.abs(vv).max()), CAR_DIMS[1])
    top = max(float(xyz[:, 2].max()), cfg.ground_z + CAR_DIMS[2])
    h = top - cfg.ground_z
    return Box3D((mean[0], mean[1], cfg.ground_z + h / 2), (length, width, h), yaw)


def proxy_detect(cloud: PointCloud, config: ProxyDetectorConfig = ProxyDetectorConfig()) -> List[Detection]:
    """Detections sorted by descending score, then by position."""
    if len(cloud) == 0:
        return []
    xyz = cloud.xyz
    z0 = config.ground_z
    keep = (xyz[:, 2] >= z0 + config.ground_margin) & (xyz[:, 2] <= z0 + config.z_top)
    keep &= np.hypot(xyz[:, 0], xyz[:, 1]) <= config.max_range
    pts = xyz[keep]
    if len(pts) < config.min_points:
        return []
    ij = np.floor(pts[:, :2] / config.bev_cell).astype(np.int64)
    lo = ij.min(axis=0)
    ij -= lo
    occ = np.zeros(ij.max(axis=0) + 1, dtype=bool)
    occ[ij[:, 0], ij[:, 1]] = True
    labels, n = ndimage.label(occ, structure=_EIGHT)
    pl = labels[ij[:, 0], ij[:, 1]]
    order = np.argsort(pl, kind="stable")
    bounds = np.searchsorted(pl[order], np.arange(1, n + 2))
    out = []
    for k in range(n):
        idx = order[bounds[k]:bounds[k + 1]]
        if len(idx) < config.min_points:
            continue
        box = _fit_box(pts[idx], config)
        score = min(1.0, len(idx) / config.n_sat)
        out.append(Detection(cloud.frame_id, box.replace(score=score)))
    out.sort(key=lambda d: (-d.score, float(d.box.center[0]), float(d.box.center[1])))
    return out
