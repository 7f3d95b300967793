"""Voxel grids and exact segment traversal (the 3D Bresenham step of FSD)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels

OCCLUDED = 0
FREE = 1

# cells crossed for less than this many meters count as boundary contact
LENGTH_EPS = 1e-9


@dataclass(eq=False)
class VoxelGrid:
    """Axis-aligned lattice of cubic cells, all Occluded until marked."""

    min_corner: np.ndarray
    cell_size: float
    dims: tuple
    state: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.min_corner = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        self.dims = tuple(int(v) for v in self.dims)
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"grid dims must be three positive integers, got {self.dims}")
        if self.state is None:
            self.state = np.full(self.dims, OCCLUDED, dtype=np.uint8)

    @property
    def max_corner(self) -> np.ndarray:
        return self.min_corner + np.array(self.dims) * self.cell_size

    def cell_centers(self) -> np.ndarray:
        idx = np.indices(self.dims).reshape(3, -1).T
        return self.min_corner + (idx + 0.5) * self.cell_size

    def unflatten(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.dims), axis=-1)

    def mark_free(self, flat) -> None:
        self.state.reshape(-1)[np.asarray(flat, dtype=np.int64)] = FREE

    @property
    def free_mask(self) -> np.ndarray:
        return self.state == FREE


def clip_segments(p0: np.ndarray, p1: np.ndarray, lo, hi):
    """Clip segments to an axis-aligned box.

    Returns ``(s0, s1, ok)``: parameters of the part inside the box, and
    whether that part has positive length (zero-length segments inside the
    box are kept with s0 == s1 == 0).
    """
    p0 = np.asarray(p0, dtype=np.float64).reshape(-1, 3)
    p1 = np.asarray(p1, dtype=np.float64).reshape(-1, 3)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    d = p1 - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - p0) / d
        t2 = (hi - p0) / d
    a = np.minimum(t1, t2)
    b = np.maximum(t1, t2)
    still = d == 0.0
    inside = (p0 >= lo) & (p0 <= hi)
    a = np.where(still, np.where(inside, -np.inf, np.inf), a)
    b = np.where(still, np.where(inside, np.inf, -np.inf), b)
    s0 = np.maximum(a.max(axis=1), 0.0)
    s1 = np.minimum(b.min(axis=1), 1.0)
    point = np.all(still, axis=1)
    ok = np.where(point, np.all(inside, axis=1), s1 > s0)
    s0 = np.where(point, 0.0, s0)
    s1 = np.where(point, 0.0, s1)
    return s0, s1, ok


def traverse_segments(grid: VoxelGrid, starts: np.ndarray, ends: np.ndarray, skip_end=None):
    """Visited cells for a batch of world-frame segments.

    Segments are clipped to the grid first. Returns ``(segment_index,
    flat_cell)`` arrays. ``skip_end[i]`` leaves out the cell holding the
    segment's own end point (only when that end lies inside the grid).
    """
    starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
    s0, s1, ok = clip_segments(starts, ends, grid.min_corner, grid.max_corner)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    d = ends[idx] - starts[idx]
    a = starts[idx] + s0[idx, None] * d
    b = starts[idx] + s1[idx, None] * d
    q0 = (a - grid.min_corner) / grid.cell_size
    q1 = (b - grid.min_corner) / grid.cell_size
    length_m = np.linalg.norm(b - a, axis=1)
    with np.errstate(divide="ignore"):
        tol = np.where(length_m > 0, LENGTH_EPS / length_m, 0.0)
    se = np.zeros(len(idx), dtype=bool)
    if skip_end is not None:
        se = np.asarray(skip_end, dtype=bool)[idx] & (s1[idx] >= 1.0)
    seg, cell = kernels.traverse(q0, q1, grid.dims, tol, se)
    return idx[seg], cell


def bresenham3d(grid: VoxelGrid, start, end) -> set:
    """Set of ``(i, j, k)`` cells the segment passes through.

    Exact voxel stepping: every cell crossed for a positive length is
    reported, cells met only at a face, edge or corner are not, and the chain
    is 26-connected. A degenerate segment yields its containing cell.
    """
    start = np.asarray(getattr(start, "xyz", start), dtype=np.float64)[:3]
    end = np.asarray(getattr(end, "xyz", end), dtype=np.float64)[:3]
    _, cells = traverse_segments(grid, start[None], end[None])
    return {tuple(int(v) for v in c) for c in grid.unflatten(cells)}
