"""Seeded synthetic driving frames and the calibration / benchmark sets
built from them.

Frames are rendered from the procedural sedan: a ground plane, a handful of
parked cars in the forward half, and walls that partly hide some of them.
Labels carry KITTI occlusion levels measured from the render itself (visible
returns versus the same car rendered alone).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from ..attack import calibrate_to_rays, inject, place_front_near, prune_to_capability
from ..cloud import PointCloud, SensorModel
from ..errors import LidarGuardError
from ..geometry.box import Box3D
from ..geometry.iou import iou3d
from ..kitti import Calibration, lidar_box_to_label, write_frame
from ..mesh import TriangleMesh, plane_mesh, sedan_mesh
from ..render import DEFAULT_GROUND_Z, OCCLUDER, PlacedMesh, Pose, Scene, render
from ..traces import AttackCapability, AttackTrace

CAR_DIMS = (3.9, 1.6, 1.56)


@dataclass(frozen=True)
class SynthConfig:
    n_cars: tuple = (2, 6)
    car_range: tuple = (10.0, 60.0)
    azimuth_span: float = 60.0        # cars within +-span of straight ahead
    keepout_range: float = 15.0       # the front-near zone stays empty ...
    keepout_azimuth: float = 30.0     # ... within this azimuth
    wall_prob: float = 0.4
    noise_sigma: float = 0.01         # range noise, meters
    crop_front: bool = True           # keep x > 0, as for camera-FOV labels
    ground_z: float = DEFAULT_GROUND_Z


def car_box(x: float, y: float, yaw: float, ground_z: float = DEFAULT_GROUND_Z) -> Box3D:
    return Box3D((x, y, ground_z + CAR_DIMS[2] / 2), CAR_DIMS, yaw)


def occlusion_level(visible: int, alone: int) -> int:
    """KITTI-style 0 (visible) / 1 (partly) / 2 (largely) / 3 (unseen)."""
    if visible == 0 or alone == 0:
        return 3
    frac = visible / alone
    return 0 if frac >= 0.8 else (1 if frac >= 0.4 else 2)


def add_range_noise(cloud: PointCloud, sigma: float, rng: np.random.Generator, origin=(0, 0, 0)) -> PointCloud:
    if sigma <= 0 or len(cloud) == 0:
        return cloud
    o = np.asarray(origin, dtype=np.float64)
    d = cloud.xyz - o
    r = np.linalg.norm(d, axis=1)
    scale = (r + rng.normal(0.0, sigma, len(r))) / r
    return PointCloud(o + d * scale[:, None], cloud.intensity, cloud.frame_id, cloud.scores)


@dataclass(frozen=True, eq=False)
class SynthFrame:
    cloud: PointCloud
    boxes: tuple
    occlusion: tuple
    visible: tuple


def _place_cars(rng: np.random.Generator, cfg: SynthConfig) -> list:
    n = int(rng.integers(cfg.n_cars[0], cfg.n_cars[1] + 1))
    boxes = []
    for _ in range(50 * n):
        if len(boxes) == n:
            break
        r = float(rng.uniform(*cfg.car_range))
        az = math.radians(float(rng.uniform(-cfg.azimuth_span, cfg.azimuth_span)))
        if r < cfg.keepout_range and abs(math.degrees(az)) < cfg.keepout_azimuth:
            continue
        yaw = float(rng.choice([0.0, math.pi / 2])) + float(rng.normal(0.0, 0.3))
        b = car_box(r * math.cos(az), r * math.sin(az), yaw, cfg.ground_z)
        if any(math.hypot(*(b.center[:2] - o.center[:2])) < 5.0 for o in boxes):
            continue
        boxes.append(b)
    return boxes


def synth_frame(sensor: SensorModel, seed, cfg: SynthConfig = SynthConfig(),
                mesh: TriangleMesh = None) -> SynthFrame:
    rng = np.random.default_rng(seed)
    mesh = mesh or sedan_mesh()
    boxes = _place_cars(rng, cfg)
    cars = [PlacedMesh(mesh, Pose((b.center[0], b.center[1], cfg.ground_z), b.yaw)) for b in boxes]
    walls = []
    for b in boxes:
        if rng.random() >= cfg.wall_prob:
            continue
        r = math.hypot(b.center[0], b.center[1])
        ux, uy = b.center[0] / r, b.center[1] / r
        frac = float(rng.uniform(0.4, 0.8))
        lateral = float(rng.uniform(-1.5, 1.5))
        cx, cy = ux * r * frac - uy * lateral, uy * r * frac + ux * lateral
        if frac * r < cfg.keepout_range:
            continue
        if any(math.hypot(cx - o.center[0], cy - o.center[1]) < 3.0 for o in boxes):
            continue
        width = float(rng.uniform(1.0, 3.0))
        walls.append(PlacedMesh(plane_mesh((cx, cy), math.atan2(-uy, -ux), width, 2.0, cfg.ground_z)))
    res = render(sensor, Scene(None, tuple(cars + walls), cfg.ground_z))
    visible, occl = [], []
    for k, car in enumerate(cars):
        v = int(np.count_nonzero((res.source == OCCLUDER) & (res.occluder_index == k)))
        alone = render(sensor, Scene(car, (), None)).target_count()
        visible.append(v)
        occl.append(occlusion_level(v, alone))
    cloud = add_range_noise(res.cloud, cfg.noise_sigma, rng, sensor.origin)
    if cfg.crop_front:
        cloud = cloud.subset(np.flatnonzero(cloud.xyz[:, 0] > 0))
    return SynthFrame(cloud, tuple(boxes), tuple(occl), tuple(visible))


class SyntheticDataset:
    """In-memory stand-in for :class:`lidarguard.kitti.KittiDataset`.

    Frame ``i`` is regenerated on demand from ``(seed, i)``, so only a few
    frames are held at a time.
    """

    def __init__(self, sensor: SensorModel, n_frames: int, seed: int = 0, config: SynthConfig = SynthConfig()):
        self.sensor = sensor
        self.n_frames = int(n_frames)
        self.seed = int(seed)
        self.config = config
        self._mesh = sedan_mesh()
        self._frame = functools.lru_cache(maxsize=4)(self._make)

    def __getstate__(self):
        state = dict(self.__dict__)
        del state["_frame"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._frame = functools.lru_cache(maxsize=4)(self._make)

    @property
    def frame_ids(self) -> list:
        return [f"{i:06d}" for i in range(self.n_frames)]

    def _make(self, fid: str) -> SynthFrame:
        f = synth_frame(self.sensor, (self.seed, int(fid)), self.config, self._mesh)
        return SynthFrame(f.cloud.with_frame(fid), f.boxes, f.occlusion, f.visible)

    def frame(self, fid: str) -> SynthFrame:
        return self._frame(fid)

    def cloud(self, fid: str) -> PointCloud:
        return self.frame(fid).cloud

    def calib(self, fid: str) -> Calibration:
        return Calibration.default()

    def labels(self, fid: str) -> list:
        f = self.frame(fid)
        calib = self.calib(fid)
        return [lidar_box_to_label(b, calib, "Car", occluded=o) for b, o in zip(f.boxes, f.occlusion)]

    def vehicles(self, fid: str, include_dont_care: bool = False):
        f = self.frame(fid)
        return list(zip(self.labels(fid), f.boxes))

    def write(self, root) -> Path:
        root = Path(root)
        for fid in self.frame_ids:
            write_frame(root, fid, self.cloud(fid), self.labels(fid), self.calib(fid))
        return root


# ------------------------------------------------------------ benchmark sets


def jitter_box(box: Box3D, rng: np.random.Generator, min_iou: float = 0.7, max_tries: int = 100) -> Box3D:
    """A detector-like perturbation of ``box`` keeping IoU >= ``min_iou``."""
    for _ in range(max_tries):
        c = box.center + np.array([*rng.normal(0.0, 0.25, 2), rng.normal(0.0, 0.05)])
        d = box.dims * rng.uniform(0.92, 1.08, 3)
        b = Box3D(c, d, box.yaw + float(rng.normal(0.0, math.radians(3.0))), box.score)
        if iou3d(b, box) >= min_iou:
            return b
    return box


def valid_front_near(sensor: SensorModel, n: int, seed: int = 0, ground: bool = True,
                     capability: AttackCapability = AttackCapability(), mesh: TriangleMesh = None) -> list:
    """``n`` single-car scenes with the car's center inside the front-near
    band; returns ``(cloud, [box])`` pairs."""
    rng = np.random.default_rng(seed)
    mesh = mesh or sedan_mesh()
    gz = DEFAULT_GROUND_Z
    lo, hi = capability.target_distance
    out = []
    for _ in range(n):
        r = float(rng.uniform(lo, hi))
        az = math.radians(float(rng.uniform(-30.0, 30.0)))
        yaw = float(rng.uniform(-math.pi, math.pi))
        b = car_box(r * math.cos(az), r * math.sin(az), yaw, gz)
        res = render(sensor, Scene(PlacedMesh(mesh, Pose((b.center[0], b.center[1], gz), yaw)), (),
                                   gz if ground else None))
        out.append((res.cloud, [b]))
    return out


def background(sensor: SensorModel, ground: bool = True) -> PointCloud:
    if not ground:
        return PointCloud.empty()
    return render(sensor, Scene(None, (), DEFAULT_GROUND_Z)).cloud


def draw_placement(rng: np.random.Generator, capability: AttackCapability = AttackCapability(),
                   azimuth_span: float = 20.0) -> tuple:
    """Random front-near ``(azimuth_deg, range_m)``."""
    lo, hi = capability.target_distance
    return float(rng.uniform(-azimuth_span, azimuth_span)), float(rng.uniform(lo, hi))


def spoof_trace(sensor: SensorModel, trace: AttackTrace, rng: np.random.Generator,
                capability: AttackCapability = AttackCapability(), azimuth_span: float = 20.0,
                placement: tuple = None) -> AttackTrace:
    """Place at ``placement`` (or a random front-near spot), snap to rays
    and prune."""
    az, r = placement if placement is not None else draw_placement(rng, capability, azimuth_span)
    t = place_front_near(trace, capability, az, r)
    t = calibrate_to_rays(sensor, t)
    return prune_to_capability(t, capability)


def spoofed_front_near(sensor: SensorModel, traces: List[AttackTrace], n: int, seed: int = 0,
                       ground: bool = True, capability: AttackCapability = AttackCapability(),
                       min_points: int = 5) -> list:
    """``n`` injected scenes, traces drawn in a seeded order; returns
    ``(cloud, [target_box])`` pairs."""
    rng = np.random.default_rng(seed)
    bg = background(sensor, ground)
    out = []
    order = rng.permutation(len(traces))
    k = 0
    while len(out) < n and k < 20 * max(n, 1):
        tr = traces[order[k % len(order)]]
        k += 1
        try:
            t = spoof_trace(sensor, tr, rng, capability)
        except LidarGuardError:
            continue
        if len(t) < min_points:
            continue
        rep = inject(bg, sensor, t, capability)
        out.append((rep.cloud, [rep.target_box]))
    return out
