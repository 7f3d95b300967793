"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public functions dispatch on :func:`lidarguard._backend.use_numba`. Both
flavours implement the same arithmetic in the same order so they agree to
floating-point rounding (tests compare them directly).
"""
from __future__ import annotations

import math

import numpy as np

from ._backend import njit, use_numba

DET_EPS = 1e-14
T_MIN = 1e-9

# ------------------------------------------------------------------ casting


@njit(cache=True)
def _cast_numba(origin, dirs, v0, e1, e2, scale, t_max):
    n = dirs.shape[0]
    m = v0.shape[0]
    t_out = np.full(n, np.inf)
    idx_out = np.full(n, -1, dtype=np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for r in range(n):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = t_max
        best_i = -1
        for j in range(m):
            e2x, e2y, e2z = e2[j, 0], e2[j, 1], e2[j, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1[j, 0] * px + e1[j, 1] * py + e1[j, 2] * pz
            if abs(det) < DET_EPS * scale[j]:
                continue
            inv = 1.0 / det
            sx = ox - v0[j, 0]
            sy = oy - v0[j, 1]
            sz = oz - v0[j, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = sy * e1[j, 2] - sz * e1[j, 1]
            qy = sz * e1[j, 0] - sx * e1[j, 2]
            qz = sx * e1[j, 1] - sy * e1[j, 0]
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if t > T_MIN and t < best:
                best = t
                best_i = j
        if best_i >= 0:
            t_out[r] = best
            idx_out[r] = best_i
    return t_out, idx_out


def _cast_numpy(origin, dirs, v0, e1, e2, scale, t_max, chunk_elems=1 << 21):
    n = dirs.shape[0]
    m = v0.shape[0]
    t_out = np.full(n, np.inf)
    idx_out = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return t_out, idx_out
    step = max(1, chunk_elems // m)
    s = origin[None, :] - v0  # (m, 3)
    q = np.cross(s, e1)  # (m, 3), independent of the ray
    for a in range(0, n, step):
        d = dirs[a:a + step]
        dx, dy, dz = d[:, 0:1], d[:, 1:2], d[:, 2:3]
        px = dy * e2[None, :, 2] - dz * e2[None, :, 1]
        py = dz * e2[None, :, 0] - dx * e2[None, :, 2]
        pz = dx * e2[None, :, 1] - dy * e2[None, :, 0]
        det = e1[None, :, 0] * px + e1[None, :, 1] * py + e1[None, :, 2] * pz
        ok = np.abs(det) >= DET_EPS * scale[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = (s[None, :, 0] * px + s[None, :, 1] * py + s[None, :, 2] * pz) * inv
            v = (dx * q[None, :, 0] + dy * q[None, :, 1] + dz * q[None, :, 2]) * inv
            t = (e2[None, :, 0] * q[None, :, 0] + e2[None, :, 1] * q[None, :, 1]
                 + e2[None, :, 2] * q[None, :, 2]) * inv
            ok &= (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > T_MIN) & (t < t_max)
        t = np.where(ok, t, np.inf)
        j = np.argmin(t, axis=1)
        tb = t[np.arange(len(d)), j]
        hit = np.isfinite(tb)
        t_out[a:a + step] = tb
        idx_out[a:a + step] = np.where(hit, j, -1)
    return t_out, idx_out


def cast_rays(origin, dirs, triangles, t_max=np.inf):
    """Nearest Moller-Trumbore hit of every ray against a triangle soup.

    ``triangles`` is (M, 3, 3). Edge and vertex hits count. Returns
    ``(t, tri_index)`` with ``inf`` / ``-1`` for misses.
    """
    origin = np.ascontiguousarray(origin, dtype=np.float64).reshape(3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    tri = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    v0 = np.ascontiguousarray(tri[:, 0])
    e1 = np.ascontiguousarray(tri[:, 1] - tri[:, 0])
    e2 = np.ascontiguousarray(tri[:, 2] - tri[:, 0])
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    if use_numba():
        return _cast_numba(origin, dirs, v0, e1, e2, scale, float(t_max))
    return _cast_numpy(origin, dirs, v0, e1, e2, scale, float(t_max))


# ---------------------------------------------------------------- traversal
#
# Segments are given in cell units (grid min corner at 0, unit cells). A
# segment visits every cell it passes through with positive length; when the
# exit parameters of several axes coincide within ``tol`` (a pass through an
# edge or corner) all of them step at once, skipping cells touched only on a
# boundary. ``tol`` is in segment-parameter units, per segment.


@njit(cache=True)
def _traverse_numba(q0, q1, dims, tol, skip_end, max_steps):
    m = q0.shape[0]
    seg_out = np.empty(m * max_steps, dtype=np.int64)
    cell_out = np.empty(m * max_steps, dtype=np.int64)
    k = 0
    nx, ny, nz = dims[0], dims[1], dims[2]
    c = np.empty(3, dtype=np.int64)
    tmax = np.empty(3)
    tdel = np.empty(3)
    step = np.empty(3, dtype=np.int64)
    n = np.empty(3, dtype=np.int64)
    n[0] = nx
    n[1] = ny
    n[2] = nz
    for s in range(m):
        for a in range(3):
            d = q1[s, a] - q0[s, a]
            ca = int(math.floor(q0[s, a]))
            if d < 0.0 and q0[s, a] == ca:
                ca -= 1
            if ca < 0:
                ca = 0
            if ca > n[a] - 1:
                ca = n[a] - 1
            c[a] = ca
            if d > 0.0:
                step[a] = 1
                tmax[a] = (ca + 1 - q0[s, a]) / d
                tdel[a] = 1.0 / d
            elif d < 0.0:
                step[a] = -1
                tmax[a] = (ca - q0[s, a]) / d
                tdel[a] = -1.0 / d
            else:
                step[a] = 0
                tmax[a] = np.inf
                tdel[a] = np.inf
        for _ in range(max_steps):
            mn = min(tmax[0], min(tmax[1], tmax[2]))
            done = mn >= 1.0 - tol[s]
            if not (done and skip_end[s]):
                seg_out[k] = s
                cell_out[k] = (c[0] * ny + c[1]) * nz + c[2]
                k += 1
            if done:
                break
            out = False
            for a in range(3):
                if tmax[a] <= mn + tol[s]:
                    c[a] += step[a]
                    tmax[a] += tdel[a]
                    if c[a] < 0 or c[a] >= n[a]:
                        out = True
            if out:
                break
    return seg_out[:k], cell_out[:k]


def _traverse_numpy(q0, q1, dims, tol, skip_end, max_steps):
    m = q0.shape[0]
    d = q1 - q0
    c = np.floor(q0).astype(np.int64)
    c -= ((d < 0.0) & (q0 == c)).astype(np.int64)
    c = np.clip(c, 0, dims - 1)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tmax = np.where(d > 0.0, (c + 1 - q0) / d, np.where(d < 0.0, (c - q0) / d, np.inf))
        tdel = np.where(d != 0.0, 1.0 / np.abs(d), np.inf)
    active = np.ones(m, dtype=bool)
    segs, cells = [], []
    ny, nz = dims[1], dims[2]
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        tm = tmax[idx]
        mn = tm.min(axis=1)
        done = mn >= 1.0 - tol[idx]
        keep = ~(done & skip_end[idx])
        ci = c[idx]
        segs.append(idx[keep])
        cells.append(((ci[keep, 0] * ny + ci[keep, 1]) * nz + ci[keep, 2]))
        go = idx[~done]
        active[idx[done]] = False
        if len(go) == 0:
            break
        mv = tmax[go] <= (mn[~done] + tol[go])[:, None]
        c[go] += np.where(mv, step[go], 0)
        tmax[go] += np.where(mv, tdel[go], 0.0)
        out = np.any((c[go] < 0) | (c[go] >= dims), axis=1)
        active[go[out]] = False
    if not segs:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    seg = np.concatenate(segs)
    cell = np.concatenate(cells)
    order = np.argsort(seg, kind="stable")
    return seg[order], cell[order]


def traverse(q0, q1, dims, tol, skip_end=None):
    """Cells visited by each segment ``q0[i] -> q1[i]`` (cell units).

    Returns ``(segment_index, flat_cell_index)`` pairs in visiting order per
    segment; flat index is ``(i * ny + j) * nz + k``. ``skip_end[i]`` drops the
    final cell of segment ``i``.
    """
    q0 = np.ascontiguousarray(q0, dtype=np.float64).reshape(-1, 3)
    q1 = np.ascontiguousarray(q1, dtype=np.float64).reshape(-1, 3)
    dims = np.asarray(dims, dtype=np.int64).reshape(3)
    tol = np.ascontiguousarray(np.broadcast_to(np.asarray(tol, dtype=np.float64), (len(q0),)))
    if skip_end is None:
        skip_end = np.zeros(len(q0), dtype=np.bool_)
    skip_end = np.ascontiguousarray(skip_end, dtype=np.bool_)
    max_steps = int(dims.sum()) + 4
    if use_numba():
        return _traverse_numba(q0, q1, dims, tol, skip_end, max_steps)
    return _traverse_numpy(q0, q1, dims, tol, skip_end, max_steps)


def warmup() -> None:
    """Trigger numba compilation (no-op on the numpy backend)."""
    if not use_numba():
        return
    tri = np.array([[[1.0, -1, -1], [1, 1, -1], [1, 0, 1]]])
    cast_rays(np.zeros(3), np.array([[1.0, 0, 0]]), tri)
    traverse(np.array([[0.5, 0.5, 0.5]]), np.array([[2.5, 1.5, 0.5]]), (4, 4, 4), 1e-9)
