"""A single-return LiDAR simulator over triangle meshes.

Every lattice ray keeps its nearest hit among the target mesh, occluder
meshes and an optional ground plane, so occluders shadow the target and the
target's near surface shadows its own far side without extra bookkeeping.
"""
from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import kernels
from .cloud import PointCloud, SensorModel, ray_directions, wrap_deg
from .errors import ConfigError
from .geometry.box import Box3D, ray_box_intervals
from .geometry.frustum import candidate_columns
from .mesh import TriangleMesh, load_mesh, plane_mesh
from .traces import AttackTrace

TARGET, OCCLUDER, GROUND = 0, 1, 2
SOURCE_NAMES = ("target", "occluder", "ground")
MESH_INTENSITY = 0.5
GROUND_INTENSITY = 0.3


@dataclass(frozen=True, eq=False)
class Pose:
    translation: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0


@dataclass(frozen=True, eq=False)
class PlacedMesh:
    mesh: TriangleMesh
    pose: Pose = field(default_factory=Pose)

    def world(self) -> TriangleMesh:
        return self.mesh.posed(self.pose.translation, self.pose.yaw)


@dataclass(frozen=True, eq=False)
class Scene:
    """Target + occluders (+ ground). ``masks`` are azimuth bands (degrees,
    lo..hi) in which target returns are suppressed, a cheap stand-in for an
    occluder that returns nothing."""

    target: Optional[PlacedMesh] = None
    occluders: tuple = ()
    ground_z: Optional[float] = None
    masks: tuple = ()
    seed: int = 0


@dataclass(frozen=True, eq=False)
class RenderResult:
    cloud: PointCloud
    ray_ids: np.ndarray  # (N, 2) channel, azimuth index
    source: np.ndarray  # (N,) TARGET / OCCLUDER / GROUND
    occluder_index: np.ndarray  # (N,) which occluder, -1 otherwise

    def __len__(self) -> int:
        return len(self.cloud)

    def target_points(self) -> PointCloud:
        return self.cloud.subset(self.source == TARGET)

    def target_count(self) -> int:
        return int(np.count_nonzero(self.source == TARGET))


@functools.lru_cache(maxsize=8)
def _lattice(sensor: SensorModel):
    ch = np.repeat(np.arange(sensor.n_channels), sensor.n_azimuth)
    ai = np.tile(np.arange(sensor.n_azimuth), sensor.n_channels)
    dirs = ray_directions(sensor, ch, ai)
    dirs.setflags(write=False)
    return ch, ai, dirs


def _mesh_candidates(sensor: SensorModel, mesh: TriangleMesh, dirs: np.ndarray) -> np.ndarray:
    """Flat ray ids whose ray meets the mesh's bounding box."""
    lo, hi = mesh.bounds()
    pad = 1e-6
    box = Box3D((lo + hi) / 2, np.maximum(hi - lo, 0.0) + 2 * pad, 0.0)
    cols = candidate_columns(sensor, box)
    flat = (np.arange(sensor.n_channels)[:, None] * sensor.n_azimuth + cols[None, :]).reshape(-1)
    _, _, hit = ray_box_intervals(sensor.origin, dirs[flat], box)
    return flat[hit]


def render(sensor: SensorModel, scene: Scene) -> RenderResult:
    ch, ai, dirs = _lattice(sensor)
    n = len(dirs)
    origin = sensor.origin_array
    best_t = np.full(n, np.inf)
    source = np.full(n, -1, dtype=np.int64)
    occ_idx = np.full(n, -1, dtype=np.int64)
    masked_t = np.full(n, np.inf)

    if scene.ground_z is not None:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where(dz < 0, (scene.ground_z - origin[2]) / dz, np.inf)
        ok = (tg > 0) & (tg <= sensor.max_range)
        best_t[ok] = tg[ok]
        source[ok] = GROUND

    placed = []
    if scene.target is not None:
        placed.append((TARGET, -1, scene.target.world()))
    for k, occ in enumerate(scene.occluders):
        placed.append((OCCLUDER, k, occ.world()))

    for tag, k, mesh in placed:
        if len(mesh) == 0:
            continue
        cand = _mesh_candidates(sensor, mesh, dirs)
        if len(cand) == 0:
            continue
        t, tri = kernels.cast_rays(origin, dirs[cand], mesh.soup(), sensor.max_range)
        hit = (tri >= 0) & (t <= sensor.max_range)
        if tag == TARGET and scene.masks:
            inband = _in_bands(wrap_deg(sensor.azimuth_array[ai[cand]]), scene.masks)
            masked_t[cand[hit & inband]] = t[hit & inband]
            hit &= ~inband
        better = hit & (t < best_t[cand])
        idx = cand[better]
        best_t[idx] = t[better]
        source[idx] = tag
        occ_idx[idx] = k

    # a masked ray whose nearest surface would have been the target returns nothing
    keep = (source >= 0) & ~(masked_t < best_t)
    flat = np.flatnonzero(keep)
    xyz = origin + dirs[flat] * best_t[flat, None]
    inten = np.where(source[flat] == GROUND, GROUND_INTENSITY, MESH_INTENSITY)
    cloud = PointCloud(xyz, inten)
    return RenderResult(cloud, np.column_stack([ch[flat], ai[flat]]), source[flat], occ_idx[flat])


def _in_bands(az, bands):
    out = np.zeros(len(az), dtype=bool)
    for lo_az, hi_az in bands:
        rel = np.mod(az - lo_az, 360.0)
        out |= rel <= np.mod(hi_az - lo_az, 360.0)
    return out


# ------------------------------------------------------------ scene files


def scene_from_dict(cfg: dict, base: Path = Path(".")) -> Scene:
    """Scene description: ``mesh``, ``pose`` {x, y, z, yaw_deg}, ``occluders``
    (list of mesh/pose or wall entries), ``ground`` (bool or z), ``masks``,
    ``seed``."""
    def mesh_of(spec):
        if str(spec).startswith("builtin:"):
            return load_mesh(spec)
        p = Path(spec)
        return load_mesh(str(p if p.is_absolute() else base / p))

    def pose_of(d):
        d = d or {}
        return Pose((float(d.get("x", 0.0)), float(d.get("y", 0.0)), float(d.get("z", 0.0))),
                    math.radians(float(d.get("yaw_deg", 0.0))))

    try:
        target = PlacedMesh(mesh_of(cfg["mesh"]), pose_of(cfg.get("pose"))) if cfg.get("mesh") else None
        occs = []
        for o in cfg.get("occluders", []):
            if o.get("kind") == "wall":
                m = plane_mesh((o["x"], o["y"]), math.radians(o.get("facing_deg", 180.0)),
                               o.get("width", 2.0), o.get("height", 2.0), o.get("z0", -1.73))
                occs.append(PlacedMesh(m))
            else:
                occs.append(PlacedMesh(mesh_of(o["mesh"]), pose_of(o.get("pose"))))
        ground = cfg.get("ground", False)
        ground_z = None
        if ground is True:
            ground_z = float(cfg.get("ground_z", DEFAULT_GROUND_Z))
        elif isinstance(ground, (int, float)) and not isinstance(ground, bool):
            ground_z = float(ground)
        masks = tuple((float(a), float(b)) for a, b in cfg.get("masks", []))
        return Scene(target, tuple(occs), ground_z, masks, int(cfg.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scene description: {exc}") from None


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scene_from_dict(cfg, path.parent)


# mounting height of the KITTI scanner above the road
DEFAULT_GROUND_Z = -1.73


# --------------------------------------------------------- trace families


@dataclass(frozen=True)
class OcclusionPattern:
    """``kind`` is ``none``, ``mask`` (azimuth band relative to the target's
    center azimuth, ``params=(offset_deg, width_deg)``) or ``wall`` (a wall
    at a fraction of the target range, ``params=(fraction, lateral_m,
    width_m)``)."""

    kind: str = "none"
    params: tuple = ()


def _pattern_scene(sensor, mesh, pose: Pose, pattern: OcclusionPattern, ground_z) -> Scene:
    target = PlacedMesh(mesh, pose)
    tx, ty = pose.translation[0], pose.translation[1]
    center_az = math.degrees(math.atan2(ty, tx))
    if pattern.kind == "none":
        return Scene(target, (), ground_z)
    if pattern.kind == "mask":
        off, width = pattern.params
        lo = center_az + off - width / 2
        return Scene(target, (), ground_z, ((wrap_deg(lo), wrap_deg(lo + width)),))
    if pattern.kind == "wall":
        frac, lateral, width = pattern.params
        r = math.hypot(tx, ty)
        ux, uy = tx / r, ty / r
        cx = ux * r * frac - uy * lateral
        cy = uy * r * frac + ux * lateral
        wall = plane_mesh((cx, cy), math.atan2(-uy, -ux), width, 2.5,
                          pose.translation[2] if ground_z is None else ground_z)
        return Scene(target, (PlacedMesh(wall),), ground_z)
    raise ConfigError(f"unknown occlusion pattern {pattern.kind!r}")


def render_trace_family(sensor: SensorModel, mesh: TriangleMesh, postures: Sequence[Pose],
                        occlusion_patterns: Sequence[OcclusionPattern], seed: int = 0,
                        ground_z=DEFAULT_GROUND_Z) -> List[AttackTrace]:
    """One trace per (posture, pattern) with at least one target point.

    Order follows the grid (postures outer, patterns inner); ``seed`` is
    recorded in each trace's metadata.
    """
    out = []
    for (pi, pose), (qi, pat) in itertools.product(enumerate(postures), enumerate(occlusion_patterns)):
        res = render(sensor, _pattern_scene(sensor, mesh, pose, pat, ground_z))
        pts = res.target_points()
        if len(pts) == 0:
            continue
        rng = float(math.hypot(pose.translation[0], pose.translation[1]))
        out.append(AttackTrace(pts, "rendered", rng, {
            "posture": pi, "pattern": qi, "pattern_kind": pat.kind, "seed": seed,
        }))
    return out


def default_family_grid(seed: int = 0, n_postures: int = 40, n_patterns: int = 6,
                        ground_z=DEFAULT_GROUND_Z):
    """A seeded posture x occlusion grid producing traces of 1..~1000 points.

    This is a reconstruction: ranges 8-60 m, any heading, masks and walls of
    varying coverage.
    """
    rng = np.random.default_rng(seed)
    postures = []
    for _ in range(n_postures):
        r = float(rng.uniform(8.0, 60.0))
        az = math.radians(float(rng.uniform(-60.0, 60.0)))
        postures.append(Pose((r * math.cos(az), r * math.sin(az), ground_z), float(rng.uniform(-math.pi, math.pi))))
    patterns = [OcclusionPattern("none")]
    for _ in range(n_patterns - 1):
        if rng.random() < 0.5:
            patterns.append(OcclusionPattern("mask", (float(rng.uniform(-6, 6)), float(rng.uniform(3, 14)))))
        else:
            patterns.append(OcclusionPattern("wall", (float(rng.uniform(0.3, 0.8)),
                                                      float(rng.uniform(-1.5, 1.5)), float(rng.uniform(0.8, 2.5)))))
    return postures, patterns


def group_traces(traces: Sequence[AttackTrace], width: int = 10, upper: int = 200,
                 per_group: int = 5, seed: int = 0) -> dict:
    """Bucket traces into ``(lo, hi]`` point-count groups of ``width`` and
    draw up to ``per_group`` from each (seeded)."""
    rng = np.random.default_rng(seed)
    groups = {}
    for lo in range(0, upper, width):
        members = [t for t in traces if lo < len(t) <= lo + width]
        if len(members) > per_group:
            pick = np.sort(rng.choice(len(members), per_group, replace=False))
            members = [members[i] for i in pick]
        groups[(lo, lo + width)] = members
    return groups
