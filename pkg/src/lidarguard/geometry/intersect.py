from __future__ import annotations

from typing import Optional

import numpy as np

from .. import kernels


def ray_triangle_intersect(origin, direction, tri) -> Optional[float]:
    """Distance to a triangle along a unit ray, or ``None``.

    Moller-Trumbore; hits on edges and vertices count, hits at or behind the
    origin do not, a ray in the triangle's plane misses.
    """
    t, idx = kernels.cast_rays(origin, np.asarray(direction, dtype=np.float64)[None, :],
                               np.asarray(tri, dtype=np.float64)[None])
    return float(t[0]) if idx[0] >= 0 else None
