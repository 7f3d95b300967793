"""Frustum extraction: the lattice rays that cross a box, with their returns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cloud import Point, PointCloud, RayId, SensorModel, nearest_rays, ray_directions, spherical, wrap_deg
from ..errors import EmptyFrustumError
from .box import Box3D, ray_box_intervals


class ReturnMap:
    """Nearest return on each lattice ray of one cloud.

    Several points bucketed onto one ray keep the nearest (then lowest x, y,
    z), so the map does not depend on point order.
    """

    def __init__(self, sensor: SensorModel, cloud: PointCloud, mask=None):
        self.sensor = sensor
        self.cloud = cloud
        xyz = cloud.xyz if mask is None else cloud.xyz[mask]
        src = np.arange(len(cloud)) if mask is None else np.flatnonzero(mask)
        ch, ai, ok = nearest_rays(sensor, xyz)
        rng, _, _ = spherical(xyz, sensor.origin)
        ch, ai, rng, src, xyz = ch[ok], ai[ok], rng[ok], src[ok], xyz[ok]
        flat = sensor.flat_index(ch, ai)
        order = np.lexsort((xyz[:, 2], xyz[:, 1], xyz[:, 0], rng, flat))
        flat = flat[order]
        first = np.ones(len(flat), dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        self._flat = flat[first]
        self._index = src[order][first]

    def lookup(self, flat: np.ndarray) -> np.ndarray:
        """Cloud index of the return on each flat ray id, -1 where none."""
        flat = np.asarray(flat, dtype=np.int64)
        pos = np.searchsorted(self._flat, flat)
        pos_c = np.minimum(pos, max(len(self._flat) - 1, 0))
        if len(self._flat) == 0:
            return np.full(len(flat), -1, dtype=np.int64)
        found = self._flat[pos_c] == flat
        return np.where(found, self._index[pos_c], -1)

    def ray_of_points(self) -> dict:
        return dict(zip(self._index.tolist(), self._flat.tolist()))


@dataclass(frozen=True, eq=False)
class Frustum:
    """Rays crossing ``box`` (sorted by channel, azimuth index).

    Per entry: ray direction, box interval ``[t_enter, t_exit]`` and the
    return (``hit_xyz``/``hit_range``, NaN where the ray has no return).
    """

    box: Box3D
    channel: np.ndarray
    azimuth_index: np.ndarray
    dirs: np.ndarray
    t_enter: np.ndarray
    t_exit: np.ndarray
    hit_xyz: np.ndarray
    hit_range: np.ndarray
    hit_index: np.ndarray

    def __len__(self) -> int:
        return len(self.channel)

    @property
    def has_return(self) -> np.ndarray:
        return self.hit_index >= 0

    @property
    def entries(self) -> list:
        out = []
        for i in range(len(self)):
            rid = RayId(int(self.channel[i]), int(self.azimuth_index[i]))
            if self.hit_index[i] >= 0:
                x, y, z = self.hit_xyz[i].tolist()
                out.append((rid, Point(x, y, z), float(self.hit_range[i])))
            else:
                out.append((rid, None, None))
        return out


def candidate_columns(sensor: SensorModel, box: Box3D) -> np.ndarray:
    """Azimuth columns that can reach the box (BEV corner span plus one step)."""
    n = sensor.n_azimuth
    bev = box.bev_corners() - np.asarray(sensor.origin[:2])
    # origin inside the BEV footprint: every column can reach the box
    local = box.to_local(np.array([[sensor.origin[0], sensor.origin[1], box.center[2]]]))[0]
    if abs(local[0]) <= box.l / 2 and abs(local[1]) <= box.w / 2:
        return np.arange(n)
    az = np.degrees(np.arctan2(bev[:, 1], bev[:, 0]))
    ref = az[0]
    rel = wrap_deg(az - ref)
    lo = ref + rel.min() - sensor.azimuth_step
    hi = ref + rel.max() + sensor.azimuth_step
    k_lo = int(np.floor((lo - sensor.azimuth_start) / sensor.azimuth_step))
    k_hi = int(np.ceil((hi - sensor.azimuth_start) / sensor.azimuth_step))
    if sensor.full_circle:
        if k_hi - k_lo + 1 >= n:
            return np.arange(n)
        return np.unique(np.mod(np.arange(k_lo, k_hi + 1), n))
    # a partial scanner: try the raw window and its 360-shifted copies
    per = int(round(360.0 / sensor.azimuth_step))
    ks = np.concatenate([np.arange(k_lo, k_hi + 1) + s * per for s in (-1, 0, 1)])
    return np.unique(ks[(ks >= 0) & (ks < n)])


def extract_frustum(sensor: SensorModel, cloud: PointCloud, box: Box3D, returns: ReturnMap = None) -> Frustum:
    """All lattice rays intersecting ``box``, each with the cloud's return."""
    cols = candidate_columns(sensor, box)
    ch = np.repeat(np.arange(sensor.n_channels), len(cols))
    ai = np.tile(cols, sensor.n_channels)
    dirs = ray_directions(sensor, ch, ai)
    te, tx, hit = ray_box_intervals(sensor.origin, dirs, box)
    if not hit.any():
        raise EmptyFrustumError(f"no lattice ray intersects {box!r}")
    ch, ai, dirs, te, tx = ch[hit], ai[hit], dirs[hit], te[hit], tx[hit]
    flat = sensor.flat_index(ch, ai)
    order = np.argsort(flat, kind="stable")
    ch, ai, dirs, te, tx, flat = ch[order], ai[order], dirs[order], te[order], tx[order], flat[order]

    if returns is None:
        returns = ReturnMap(sensor, cloud, _window_mask(sensor, cloud, cols))
    idx = returns.lookup(flat)
    has = idx >= 0
    hit_xyz = np.full((len(idx), 3), np.nan)
    hit_xyz[has] = cloud.xyz[idx[has]]
    hit_range = np.full(len(idx), np.nan)
    if has.any():
        hit_range[has] = np.linalg.norm(hit_xyz[has] - sensor.origin_array, axis=1)
    return Frustum(box, ch, ai, dirs, te, tx, hit_xyz, hit_range, idx)


def _window_mask(sensor: SensorModel, cloud: PointCloud, cols: np.ndarray):
    """Points whose azimuth lies within the candidate columns (plus a step)."""
    if len(cols) >= sensor.n_azimuth or len(cloud) == 0:
        return None
    _, az, _ = spherical(cloud.xyz, sensor.origin)
    col_az = sensor.azimuth_array[cols]
    ref = col_az[0]
    rel_cols = wrap_deg(col_az - ref)
    lo, hi = rel_cols.min() - sensor.azimuth_step, rel_cols.max() + sensor.azimuth_step
    rel = wrap_deg(az - ref)
    return (rel >= lo) & (rel <= hi)
