"""Spoofing trace construction: extraction, rigid placement, ray
calibration, capability pruning, physics-consistent injection and scale
perturbation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from .cloud import PointCloud, SensorModel, nearest_rays, ray_directions, spherical, wrap_deg
from .errors import CapabilityViolationError, EmptyTraceError, OutOfFovError, PlacementError
from .geometry.box import Box3D, points_in_box
from .render import DEFAULT_GROUND_Z
from .traces import AttackCapability, AttackTrace

CAR_DIMS = (3.9, 1.6, 1.56)
DISTANT_RANGE = 30.0
EXTENT_TOL = 1e-9


class Candidate(NamedTuple):
    frame_id: str
    box: Box3D
    label: object


def extract_vehicle_points(cloud: PointCloud, box: Box3D, margin: float = 0.0,
                           source_kind: str = "occluded") -> AttackTrace:
    """Points of ``cloud`` inside ``box`` grown by ``margin`` on every side."""
    mask = points_in_box(cloud.xyz, box, margin)
    if not mask.any():
        raise EmptyTraceError(f"no points inside {box!r}")
    pts = cloud.subset(np.flatnonzero(mask))
    rng = float(math.hypot(box.center[0], box.center[1]))
    return AttackTrace(pts, source_kind, rng, {"frame_id": cloud.frame_id})


def select_candidates(dataset, kind: str) -> List[Candidate]:
    """Vehicle labels usable as trace sources.

    ``occluded``: KITTI occlusion flag 1 or 2. ``distant``: BEV center range
    above 30 m.
    """
    if kind not in ("occluded", "distant"):
        raise ValueError(f"kind must be 'occluded' or 'distant', got {kind!r}")
    out = []
    for fid in dataset.frame_ids:
        for rec, box in dataset.vehicles(fid):
            if kind == "occluded":
                ok = rec.occluded in (1, 2)
            else:
                ok = math.hypot(box.center[0], box.center[1]) > DISTANT_RANGE
            if ok:
                out.append(Candidate(fid, box, rec))
    return out


def _centroid_azimuth(trace: AttackTrace) -> float:
    c = trace.centroid
    if math.hypot(c[0], c[1]) < 1e-12:
        raise PlacementError("trace centroid lies on the z axis; its azimuth is undefined")
    return math.atan2(c[1], c[0])


def translate_trace(trace: AttackTrace, theta: float, tau: float) -> AttackTrace:
    """Rotate by ``theta`` about +z, then push ``tau`` meters along the
    rotated centroid bearing ``theta + alpha``."""
    if len(trace) == 0:
        raise EmptyTraceError("cannot translate an empty trace")
    alpha = _centroid_azimuth(trace)
    if theta == 0.0 and tau == 0.0:
        return trace
    c, s = math.cos(theta), math.sin(theta)
    xyz = trace.points.xyz
    out = np.empty_like(xyz)
    out[:, 0] = c * xyz[:, 0] - s * xyz[:, 1] + tau * math.cos(theta + alpha)
    out[:, 1] = s * xyz[:, 0] + c * xyz[:, 1] + tau * math.sin(theta + alpha)
    out[:, 2] = xyz[:, 2]
    pts = PointCloud(out, trace.points.intensity, trace.points.frame_id, trace.points.scores)
    return trace.with_points(pts)


def place_front_near(trace: AttackTrace, capability: AttackCapability = AttackCapability(),
                     azimuth: float = 0.0, range_m: float = None) -> AttackTrace:
    """Move the trace so its centroid sits at ``azimuth`` (degrees) and BEV
    range ``range_m`` (default: middle of the capability band)."""
    if len(trace) == 0:
        raise EmptyTraceError("cannot place an empty trace")
    lo, hi = capability.target_distance
    if range_m is None:
        range_m = 0.5 * (lo + hi)
    if not (lo <= range_m <= hi) or not math.isfinite(azimuth):
        raise PlacementError(f"placement ({azimuth} deg, {range_m} m) outside band [{lo}, {hi}] m")
    alpha = _centroid_azimuth(trace)
    c = trace.centroid
    rho = math.hypot(c[0], c[1])
    theta = math.radians(azimuth) - alpha
    out = translate_trace(trace, theta, range_m - rho)
    return out.with_points(out.points, placement={"azimuth_deg": float(azimuth), "range_m": float(range_m)})


def calibrate_to_rays(sensor: SensorModel, trace: AttackTrace) -> AttackTrace:
    """Snap each point onto its nearest lattice ray at unchanged range.

    Out-of-FOV points are dropped; when several points share a ray the
    nearest survives (ties: lower index). Survivors keep their input order.
    """
    if len(trace) == 0:
        raise EmptyTraceError("cannot calibrate an empty trace")
    xyz = trace.points.xyz
    rng = spherical(xyz, sensor.origin)[0]
    ch, ai, ok = nearest_rays(sensor, xyz)
    if not ok.any():
        raise OutOfFovError("every trace point is outside the sensor field of view")
    idx = np.flatnonzero(ok)
    flat = sensor.flat_index(ch[idx], ai[idx])
    order = np.lexsort((idx, rng[idx], flat))
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    keep = np.sort(idx[order[first]])
    dirs = ray_directions(sensor, ch[keep], ai[keep])
    snapped = sensor.origin_array + dirs * rng[keep, None]
    pts = trace.points.subset(keep)
    pts = PointCloud(snapped, pts.intensity, pts.frame_id, pts.scores)
    return trace.with_points(pts)


def _relative_azimuths(xyz: np.ndarray) -> tuple:
    """Azimuths (deg) unwrapped around the circular median, and that median."""
    az = spherical(xyz)[1]
    ref = math.degrees(math.atan2(np.sin(np.radians(az)).sum(), np.cos(np.radians(az)).sum()))
    rel = wrap_deg(az - ref)
    med = float(np.median(rel))
    return wrap_deg(az - (ref + med)), ref + med


def prune_to_capability(trace: AttackTrace, capability: AttackCapability = AttackCapability()) -> AttackTrace:
    """Fit a trace inside the capability envelope.

    When the azimuth extent exceeds the window, points further than half a
    window from the median azimuth are dropped. A count above ``max_points``
    is then reduced by an even stride over azimuth-sorted order.
    """
    n = len(trace)
    if n == 0:
        return trace
    rel, _ = _relative_azimuths(trace.points.xyz)
    keep = np.arange(n)
    if trace.azimuth_extent > capability.azimuth_window + EXTENT_TOL:
        keep = np.flatnonzero(np.abs(rel) <= capability.azimuth_window / 2)
    if len(keep) > capability.max_points:
        order = keep[np.lexsort((keep, rel[keep]))]
        m = capability.max_points
        pick = (np.arange(m) * len(order)) // m
        keep = np.sort(order[pick])
    if len(keep) == n:
        return trace
    return trace.with_points(trace.points.subset(keep))


def check_capability(trace: AttackTrace, capability: AttackCapability) -> None:
    if len(trace) > capability.max_points:
        raise CapabilityViolationError(
            f"trace has {len(trace)} points, capability allows {capability.max_points}")
    if trace.azimuth_extent > capability.azimuth_window + EXTENT_TOL:
        raise CapabilityViolationError(
            f"trace spans {trace.azimuth_extent:.3f} deg, capability allows {capability.azimuth_window}")


def target_box(trace: AttackTrace, ground_z: float = DEFAULT_GROUND_Z, dims=CAR_DIMS) -> Box3D:
    """Expected pose of the spoofed vehicle: car-sized, standing on the
    ground under the trace centroid, long axis along the line of sight."""
    c = trace.centroid
    yaw = math.atan2(c[1], c[0]) if math.hypot(c[0], c[1]) > 0 else 0.0
    return Box3D((c[0], c[1], ground_z + dims[2] / 2), dims, yaw)


@dataclass(frozen=True, eq=False)
class InjectionReport:
    cloud: PointCloud
    replaced_ray_count: int
    injected_point_count: int
    target_box: Box3D
    kept_index: np.ndarray
    removed_index: np.ndarray
    removed: PointCloud

    @property
    def spoofed_mask(self) -> np.ndarray:
        m = np.zeros(len(self.cloud), dtype=bool)
        m[len(self.kept_index):] = True
        return m

    def restore(self) -> PointCloud:
        """The pristine cloud, rebuilt bit-for-bit."""
        n = len(self.kept_index) + len(self.removed_index)
        xyz = np.empty((n, 3))
        inten = np.empty(n)
        k = len(self.kept_index)
        xyz[self.kept_index] = self.cloud.xyz[:k]
        inten[self.kept_index] = self.cloud.intensity[:k]
        xyz[self.removed_index] = self.removed.xyz
        inten[self.removed_index] = self.removed.intensity
        return PointCloud(xyz, inten, self.cloud.frame_id)


def inject(cloud: PointCloud, sensor: SensorModel, trace: AttackTrace,
           capability: AttackCapability = AttackCapability(), ground_z: float = DEFAULT_GROUND_Z) -> InjectionReport:
    """Merge a calibrated, pruned trace into a pristine frame.

    On every spoofed ray the spoofer's pulse overrides whatever the pristine
    frame returned; spoofed points are appended after the surviving pristine
    points.
    """
    check_capability(trace, capability)
    sxyz = trace.points.xyz
    ch, ai, ok = nearest_rays(sensor, sxyz)
    if not ok.all():
        raise OutOfFovError("trace has points outside the field of view; calibrate it first")
    sflat = sensor.flat_index(ch, ai)
    if len(np.unique(sflat)) != len(sflat):
        raise CapabilityViolationError("trace puts two points on one ray; calibrate it first")
    if len(cloud):
        pc, pa, pok = nearest_rays(sensor, cloud.xyz)
        pflat = np.where(pok, sensor.flat_index(pc, pa), -1)
        hit = np.isin(pflat, sflat) & pok
    else:
        pflat = np.zeros(0, dtype=np.int64)
        hit = np.zeros(0, dtype=bool)
    kept = np.flatnonzero(~hit)
    removed = np.flatnonzero(hit)
    base = cloud.subset(kept)
    merged = PointCloud(np.concatenate([base.xyz, sxyz]),
                        np.concatenate([base.intensity, trace.points.intensity]), cloud.frame_id)
    box = target_box(trace, ground_z) if len(trace) else None
    return InjectionReport(merged, int(len(np.unique(pflat[removed]))), len(trace), box,
                           kept, removed, cloud.subset(removed))


def perturb_scale(trace: AttackTrace, eps: float, seed: int = 0, scales=None) -> tuple:
    """Scale each point about the sensor by its own s ~ U(1-eps, 1+eps).

    ``scales`` overrides the draw. Returns ``(trace, mean displacement)``.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must lie in [0, 1)")
    n = len(trace)
    if scales is None:
        scales = np.random.default_rng(seed).uniform(1.0 - eps, 1.0 + eps, n) if eps > 0 else np.ones(n)
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (n,))
    xyz = trace.points.xyz
    out = xyz * scales[:, None]
    disp = float(np.linalg.norm(out - xyz, axis=1).mean()) if n else 0.0
    pts = PointCloud(out, trace.points.intensity, trace.points.frame_id, trace.points.scores)
    return trace.with_points(pts, scale_eps=float(eps)), disp
