"""Point clouds, the LiDAR sensor model and ray-lattice arithmetic.

All coordinates are in the KITTI velodyne frame: x forward, y left, z up,
meters. Angles crossing the public API are degrees; azimuths are normalised
to (-180, 180].
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, DegeneratePointError, InvalidRayError, OutOfFovError


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    z: float
    intensity: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.intensity)):
            raise ValueError(f"non-finite point {self!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity {self.intensity} outside [0, 1]")

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered, immutable set of returns.

    ``xyz`` is (N, 3) float64 and ``intensity`` (N,). ``scores`` is an optional
    per-point channel attached by view fusion.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    frame_id: str = ""
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        inten = np.array(self.intensity, dtype=np.float64).reshape(-1)
        if len(inten) != len(xyz):
            raise ValueError("xyz and intensity lengths differ")
        if not (np.isfinite(xyz).all() and np.isfinite(inten).all()):
            raise ValueError("point cloud contains non-finite values")
        if len(inten) and (inten.min() < 0.0 or inten.max() > 1.0):
            raise ValueError("intensity outside [0, 1]")
        object.__setattr__(self, "xyz", _frozen(xyz))
        object.__setattr__(self, "intensity", _frozen(inten))
        if self.scores is not None:
            scores = np.array(self.scores, dtype=np.float64).reshape(-1)
            if len(scores) != len(xyz):
                raise ValueError("scores length differs from point count")
            object.__setattr__(self, "scores", _frozen(scores))

    @classmethod
    def empty(cls, frame_id: str = "") -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), frame_id)

    @classmethod
    def from_points(cls, points: Sequence[Point], frame_id: str = "") -> "PointCloud":
        if not points:
            return cls.empty(frame_id)
        arr = np.array([[p.x, p.y, p.z, p.intensity] for p in points], dtype=np.float64)
        return cls(arr[:, :3], arr[:, 3], frame_id)

    @classmethod
    def from_array(cls, arr: np.ndarray, frame_id: str = "") -> "PointCloud":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
        return cls(arr[:, :3], arr[:, 3], frame_id)

    def to_array(self) -> np.ndarray:
        return np.column_stack([self.xyz, self.intensity])

    def __len__(self) -> int:
        return len(self.xyz)

    def __iter__(self) -> Iterator[Point]:
        for (x, y, z), i in zip(self.xyz.tolist(), self.intensity.tolist()):
            yield Point(x, y, z, i)

    @property
    def points(self) -> list:
        return list(self)

    def subset(self, index) -> "PointCloud":
        scores = None if self.scores is None else self.scores[index]
        return PointCloud(self.xyz[index], self.intensity[index], self.frame_id, scores)

    def with_frame(self, frame_id: str) -> "PointCloud":
        return PointCloud(self.xyz, self.intensity, frame_id, self.scores)

    @staticmethod
    def concat(clouds: Sequence["PointCloud"], frame_id: str = "") -> "PointCloud":
        if not clouds:
            return PointCloud.empty(frame_id)
        return PointCloud(
            np.concatenate([c.xyz for c in clouds]),
            np.concatenate([c.intensity for c in clouds]),
            frame_id,
        )


class RayId(NamedTuple):
    channel: int
    azimuth_index: int


def wrap_deg(a):
    """Wrap degrees to (-180, 180]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + 180.0, 360.0) - 180.0
    w = np.where(w <= -180.0, w + 360.0, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True, eq=False)
class SensorModel:
    """Spinning LiDAR: a lattice of channels (elevations) x azimuth steps."""

    elevations: tuple
    azimuth_step: float
    azimuth_start: float = -180.0
    azimuth_end: float = 180.0
    max_range: float = 120.0
    origin: tuple = (0.0, 0.0, 0.0)
    name: str = ""
    _elev: np.ndarray = field(init=False, repr=False)
    _az: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        elev = np.array(self.elevations, dtype=np.float64).reshape(-1)
        if len(elev) == 0:
            raise ConfigError("sensor needs at least one channel")
        if np.any(np.diff(elev) <= 0):
            raise ConfigError("elevations must be strictly increasing")
        if not self.azimuth_step > 0:
            raise ConfigError("azimuth_step must be > 0")
        if not self.max_range > 0:
            raise ConfigError("max_range must be > 0")
        span = self.azimuth_end - self.azimuth_start
        if not 0 < span <= 360.0 + 1e-9:
            raise ConfigError("azimuth span must lie in (0, 360]")
        object.__setattr__(self, "elevations", tuple(elev.tolist()))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        n_az = int(math.ceil(span / self.azimuth_step - 1e-9))
        object.__setattr__(self, "_elev", _frozen(elev))
        object.__setattr__(
            self, "_az", _frozen(self.azimuth_start + np.arange(n_az) * self.azimuth_step)
        )

    @property
    def n_channels(self) -> int:
        return len(self._elev)

    @property
    def n_azimuth(self) -> int:
        return len(self._az)

    @property
    def n_rays(self) -> int:
        return self.n_channels * self.n_azimuth

    @property
    def full_circle(self) -> bool:
        return self.azimuth_end - self.azimuth_start >= 360.0 - 1e-9

    @property
    def elevation_array(self) -> np.ndarray:
        return self._elev

    @property
    def azimuth_array(self) -> np.ndarray:
        """Nominal azimuth of every column (not wrapped)."""
        return self._az

    @property
    def origin_array(self) -> np.ndarray:
        return np.array(self.origin, dtype=np.float64)

    def fov_elevation_bounds(self) -> tuple:
        e = self._elev
        lo_gap = e[1] - e[0] if len(e) > 1 else 1.0
        hi_gap = e[-1] - e[-2] if len(e) > 1 else 1.0
        return e[0] - lo_gap, e[-1] + hi_gap

    def flat_index(self, channel, azimuth_index):
        return np.asarray(channel) * self.n_azimuth + np.asarray(azimuth_index)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "channels": self.n_channels,
            "elevations_deg": list(self.elevations),
            "azimuth_step_deg": self.azimuth_step,
            "azimuth_start_deg": self.azimuth_start,
            "azimuth_span_deg": self.azimuth_end - self.azimuth_start,
            "max_range_m": self.max_range,
            "origin_m": list(self.origin),
        }


def sensor_from_dict(cfg: dict) -> SensorModel:
    try:
        elev = [float(v) for v in cfg["elevations_deg"]]
        if "channels" in cfg and int(cfg["channels"]) != len(elev):
            raise ConfigError(
                f"channels={cfg['channels']} but {len(elev)} elevations given"
            )
        start = float(cfg.get("azimuth_start_deg", -180.0))
        return SensorModel(
            elevations=tuple(elev),
            azimuth_step=float(cfg["azimuth_step_deg"]),
            azimuth_start=start,
            azimuth_end=start + float(cfg.get("azimuth_span_deg", 360.0)),
            max_range=float(cfg["max_range_m"]),
            origin=tuple(cfg.get("origin_m", (0.0, 0.0, 0.0))),
            name=str(cfg.get("name", "")),
        )
    except KeyError as exc:
        raise ConfigError(f"sensor config missing key {exc.args[0]!r}") from None


PRESETS = ("hdl64", "vlp16")


def load_sensor(name_or_path) -> SensorModel:
    """Load a shipped preset by name or a JSON sensor file by path."""
    if str(name_or_path) in PRESETS:
        text = resources.files("lidarguard.presets").joinpath(f"{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise ConfigError(f"unknown sensor preset or missing file: {name_or_path}")
        text = path.read_text()
    try:
        return sensor_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad sensor config: {exc}") from None


# ---------------------------------------------------------------- spherical


def spherical(xyz: np.ndarray, origin=(0.0, 0.0, 0.0)):
    """Vectorised (range, azimuth_deg, elevation_deg) of (N, 3) points."""
    d = np.asarray(xyz, dtype=np.float64).reshape(-1, 3) - np.asarray(origin, dtype=np.float64)
    rho = np.hypot(d[:, 0], d[:, 1])
    rng = np.sqrt(rho * rho + d[:, 2] * d[:, 2])
    az = np.degrees(np.arctan2(d[:, 1], d[:, 0]))
    az = np.where(az <= -180.0, az + 360.0, az)
    el = np.degrees(np.arctan2(d[:, 2], rho))
    return rng, az, el


def to_spherical(p, origin=(0.0, 0.0, 0.0)) -> tuple:
    xyz = p.xyz if isinstance(p, Point) else np.asarray(p, dtype=np.float64)
    rng, az, el = spherical(xyz[None, :3], origin)
    if not rng[0] > 0:
        raise DegeneratePointError("point coincides with the sensor origin")
    return float(rng[0]), float(az[0]), float(el[0])


def cartesian(rng, az_deg, el_deg, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    rng = np.asarray(rng, dtype=np.float64)
    a = np.radians(az_deg)
    e = np.radians(el_deg)
    ce = np.cos(e)
    out = np.stack([rng * ce * np.cos(a), rng * ce * np.sin(a), rng * np.sin(e)], axis=-1)
    return out + np.asarray(origin, dtype=np.float64)


def from_spherical(rng: float, azimuth: float, elevation: float, intensity: float = 0.0,
                   origin=(0.0, 0.0, 0.0)) -> Point:
    if not rng > 0:
        raise ValueError(f"range must be positive, got {rng}")
    x, y, z = cartesian(rng, azimuth, elevation, origin).tolist()
    return Point(x, y, z, intensity)


# -------------------------------------------------------------- ray lattice


def ray_directions(sensor: SensorModel, channel, azimuth_index) -> np.ndarray:
    channel = np.asarray(channel)
    azimuth_index = np.asarray(azimuth_index)
    return cartesian(1.0, sensor.azimuth_array[azimuth_index], sensor.elevation_array[channel])


def ray_direction(sensor: SensorModel, rid) -> np.ndarray:
    ch, ai = int(rid[0]), int(rid[1])
    if not (0 <= ch < sensor.n_channels and 0 <= ai < sensor.n_azimuth):
        raise InvalidRayError(f"ray {tuple(rid)} outside the {sensor.n_channels}x{sensor.n_azimuth} lattice")
    return ray_directions(sensor, ch, ai)


def _azimuth_distance(az, ray_az):
    return np.abs(wrap_deg(np.asarray(az) - np.asarray(ray_az)))


def nearest_rays(sensor: SensorModel, xyz: np.ndarray):
    """Vectorised nearest lattice ray.

    Angular distance is |d_azimuth| + |d_elevation|; on a product lattice the
    minimiser decomposes per axis, and ties go to the lower index on each.
    Returns ``(channel, azimuth_index, in_fov)``; entries with ``in_fov`` False
    are meaningless.
    """
    rng, az, el = spherical(xyz, sensor.origin)
    n = len(rng)
    elev = sensor.elevation_array
    ray_az = sensor.azimuth_array
    n_az = sensor.n_azimuth

    i = np.searchsorted(elev, el)
    best_c = np.zeros(n, dtype=np.int64)
    best_d = np.full(n, np.inf)
    for off in (-1, 0):
        c = np.clip(i + off, 0, len(elev) - 1)
        d = np.abs(el - elev[c])
        take = (d < best_d) | ((d == best_d) & (c < best_c))
        best_c = np.where(take, c, best_c)
        best_d = np.where(take, d, best_d)

    if sensor.full_circle:
        rel = np.mod(az - sensor.azimuth_start, 360.0)
    else:
        rel = az - sensor.azimuth_start
    k0 = np.floor(rel / sensor.azimuth_step).astype(np.int64)
    best_k = np.zeros(n, dtype=np.int64)
    best_a = np.full(n, np.inf)
    for off in (-1, 0, 1, 2):
        k = k0 + off
        k = np.mod(k, n_az) if sensor.full_circle else np.clip(k, 0, n_az - 1)
        d = _azimuth_distance(az, ray_az[k])
        take = (d < best_a) | ((d == best_a) & (k < best_k))
        best_k = np.where(take, k, best_k)
        best_a = np.where(take, d, best_a)

    lo, hi = sensor.fov_elevation_bounds()
    ok = (rng > 0) & (el >= lo) & (el <= hi)
    if not sensor.full_circle:
        ok &= best_a <= sensor.azimuth_step
    return best_c, best_k, ok


def nearest_ray(sensor: SensorModel, p) -> RayId:
    xyz = p.xyz if isinstance(p, Point) else np.asarray(p, dtype=np.float64)
    rng, _, _ = spherical(xyz[None, :3], sensor.origin)
    if not rng[0] > 0:
        raise DegeneratePointError("point coincides with the sensor origin")
    c, k, ok = nearest_rays(sensor, xyz[None, :3])
    if not ok[0]:
        raise OutOfFovError(f"point {tuple(xyz[:3])} is outside the sensor field of view")
    return RayId(int(c[0]), int(k[0]))


def ray_angles(sensor: SensorModel, channel, azimuth_index):
    """(azimuth_deg wrapped, elevation_deg) of lattice rays."""
    return wrap_deg(sensor.azimuth_array[azimuth_index]), sensor.elevation_array[channel]
