from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# boundary tolerance for the closed-box convention (meters)
INSIDE_TOL = 1e-9


def wrap_rad(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True, eq=False)
class Box3D:
    """Oriented box in the LiDAR frame.

    ``center`` is the geometric center, ``dims`` is (length, width, height)
    where length runs along the box x-axis at yaw 0, ``yaw`` rotates about +z.
    """

    center: np.ndarray
    dims: np.ndarray
    yaw: float = 0.0
    score: float = 1.0

    def __post_init__(self):
        c = np.array(self.center, dtype=np.float64).reshape(3)
        d = np.array(self.dims, dtype=np.float64).reshape(3)
        if not (np.isfinite(c).all() and np.isfinite(d).all() and math.isfinite(self.yaw)):
            raise ValueError("box fields must be finite")
        if np.any(d <= 0):
            raise ValueError(f"box dims must be positive, got {d.tolist()}")
        c.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "yaw", wrap_rad(float(self.yaw)))
        object.__setattr__(self, "score", float(self.score))

    def __repr__(self):
        c = ", ".join(f"{v:.3f}" for v in self.center)
        d = ", ".join(f"{v:.3f}" for v in self.dims)
        return f"Box3D(center=({c}), dims=({d}), yaw={self.yaw:.4f}, score={self.score:.3f})"

    @property
    def l(self) -> float:
        return float(self.dims[0])

    @property
    def w(self) -> float:
        return float(self.dims[1])

    @property
    def h(self) -> float:
        return float(self.dims[2])

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def z_range(self) -> tuple:
        return self.center[2] - self.h / 2, self.center[2] + self.h / 2

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def to_local(self, xyz: np.ndarray) -> np.ndarray:
        """World points -> box frame (rows)."""
        return (np.asarray(xyz, dtype=np.float64) - self.center) @ self.rotation()

    def dirs_to_local(self, dirs: np.ndarray) -> np.ndarray:
        return np.asarray(dirs, dtype=np.float64) @ self.rotation()

    def bev_corners(self) -> np.ndarray:
        """(4, 2) counter-clockwise BEV corners."""
        hl, hw = self.l / 2, self.w / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def corners(self) -> np.ndarray:
        bev = self.bev_corners()
        z0, z1 = self.z_range
        return np.vstack([np.column_stack([bev, np.full(4, z0)]), np.column_stack([bev, np.full(4, z1)])])

    def replace(self, **kw) -> "Box3D":
        args = dict(center=self.center, dims=self.dims, yaw=self.yaw, score=self.score)
        args.update(kw)
        return Box3D(**args)


def points_in_box(xyz: np.ndarray, box: Box3D, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside ``box`` dilated by ``margin`` (closed)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    local = box.to_local(xyz)
    half = box.dims / 2 + margin + INSIDE_TOL
    return np.all(np.abs(local) <= half, axis=1)


def point_in_box(p, box: Box3D) -> bool:
    xyz = p.xyz if hasattr(p, "xyz") else np.asarray(p, dtype=np.float64)
    return bool(points_in_box(xyz[None, :3], box)[0])


def ray_box_intervals(origin, dirs: np.ndarray, box: Box3D):
    """Slab test of many rays sharing one origin.

    Returns ``(t_enter, t_exit, hit)``. Zero-measure contact is a miss, and a
    ray starting inside the box enters at t=0.
    """
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    o = box.to_local(np.asarray(origin, dtype=np.float64)[None, :])[0]
    d = box.dirs_to_local(dirs)
    half = box.dims / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    parallel = d == 0.0
    # a parallel ray strictly inside the slab never constrains it; on or
    # outside the slab it misses
    inside_slab = np.abs(o) < half
    lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), hi)
    t_enter = np.maximum(lo.max(axis=1), 0.0)
    t_exit = hi.min(axis=1)
    hit = t_exit > t_enter
    return t_enter, t_exit, hit


def ray_box_intersect(origin, direction, box: Box3D):
    """Parametric ``(t_enter, t_exit)`` or ``None`` for a single unit ray."""
    te, tx, hit = ray_box_intervals(origin, np.asarray(direction, dtype=np.float64)[None, :], box)
    if not hit[0]:
        return None
    return float(te[0]), float(tx[0])
