"""Attack traces, the attacker capability envelope and their on-disk form.

A trace on disk is a velodyne ``.bin`` plus a ``.json`` sidecar holding the
source kind, point count, azimuth extent and source range.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud, spherical
from .errors import MalformedFileError
from .kitti import read_velodyne_bin, write_velodyne_bin

SOURCE_KINDS = ("occluded", "distant", "rendered", "sensor-baseline")


@dataclass(frozen=True)
class AttackCapability:
    """What a laser spoofer can inject into one frame."""

    max_points: int = 200
    azimuth_window: float = 10.0
    target_distance: tuple = (5.0, 8.0)

    def __post_init__(self):
        lo, hi = self.target_distance
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")
        if not self.azimuth_window > 0:
            raise ValueError("azimuth_window must be > 0")
        if not 0 <= lo <= hi:
            raise ValueError("target_distance band must be non-empty")
        object.__setattr__(self, "target_distance", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        return {"max_points": self.max_points, "azimuth_window": self.azimuth_window,
                "target_distance": list(self.target_distance)}


def azimuth_extent(az_deg) -> float:
    """Smallest arc (degrees) covering all azimuths."""
    az = np.sort(np.mod(np.asarray(az_deg, dtype=np.float64), 360.0))
    if len(az) < 2:
        return 0.0
    gaps = np.diff(np.concatenate([az, [az[0] + 360.0]]))
    return float(360.0 - gaps.max())


@dataclass(frozen=True, eq=False)
class AttackTrace:
    points: PointCloud
    source_kind: str = "rendered"
    source_range: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source_kind!r}")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def point_count(self) -> int:
        return len(self.points)

    @property
    def azimuths(self) -> np.ndarray:
        return spherical(self.points.xyz)[1]

    @property
    def azimuth_extent(self) -> float:
        return azimuth_extent(self.azimuths)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.xyz.mean(axis=0)

    def with_points(self, cloud: PointCloud, **meta) -> "AttackTrace":
        m = dict(self.meta)
        m.update(meta)
        return AttackTrace(cloud, self.source_kind, self.source_range, m)

    def metadata(self) -> dict:
        out = {
            "source_kind": self.source_kind,
            "point_count": self.point_count,
            "azimuth_extent_deg": round(self.azimuth_extent, 9),
            "source_range_m": self.source_range,
        }
        out.update(self.meta)
        return out


def write_trace(stem, trace: AttackTrace, provenance: dict = None) -> tuple:
    """Write ``stem.bin`` and ``stem.json``; returns both paths."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_suffix(".bin")
    meta_path = stem.with_suffix(".json")
    bin_path.write_bytes(write_velodyne_bin(trace.points))
    meta = trace.metadata()
    if provenance:
        meta["provenance"] = provenance
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bin_path, meta_path


def read_trace(path) -> AttackTrace:
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    meta_path = path.with_suffix(".json")
    cloud = read_velodyne_bin(bin_path.read_bytes()).with_frame(path.stem)
    meta = {}
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise MalformedFileError(f"{meta_path}: {exc}") from None
    kind = meta.pop("source_kind", "rendered")
    rng = float(meta.pop("source_range_m", 0.0))
    count = meta.pop("point_count", None)
    meta.pop("azimuth_extent_deg", None)
    meta.pop("provenance", None)
    if count is not None and int(count) != len(cloud):
        raise MalformedFileError(f"{meta_path}: point_count {count} but {len(cloud)} points stored")
    return AttackTrace(cloud, kind, rng, meta)
