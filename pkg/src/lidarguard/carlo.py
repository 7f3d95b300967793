"""CARLO: occlusion-aware verification of detected vehicle boxes.

Two physical cues are checked for every box. LPD (laser penetration) asks
how many returns in the box's frustum lie *behind* the box; a real vehicle
stops the lasers, so the ratio ``g`` is small. FSD (free space) voxelises the
box and counts the cells crossed by lasers on their way to a return; a solid
vehicle leaves its interior unobserved, so ``f`` is small. LPD is cheap and
settles clear cases; the rest go to FSD.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .cloud import PointCloud, SensorModel
from .errors import (ConfigError, DegenerateBoxError, EmptyEvidenceError, LidarGuardError,
                     NonSeparableError)
from .geometry.box import Box3D
from .geometry.frustum import Frustum, ReturnMap, extract_frustum
from .geometry.traversal import VoxelGrid, traverse_segments

VALID, SPOOFED = "Valid", "Spoofed"
LPD, FSD = "LPD", "FSD"
# a return this close to a box face counts as on the face
RANGE_TOL = 1e-6
VALID_PCT, SPOOF_PCT = 99.5, 0.5


@dataclass(frozen=True)
class CarloConfig:
    cell_size: float = 0.25
    lpd_low: float = 0.0
    lpd_high: float = 1.0
    fsd_threshold: float = 0.5
    eps: float = 0.05
    max_range: Optional[float] = None
    # calibration record, informational
    a: Optional[float] = None
    b: Optional[float] = None
    a_prime: Optional[float] = None
    b_prime: Optional[float] = None

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ConfigError("cell_size must be > 0")
        if not 0.0 <= self.lpd_low <= self.lpd_high <= 1.0:
            raise ConfigError(f"need 0 <= lpd_low <= lpd_high <= 1, got {self.lpd_low}, {self.lpd_high}")
        if not 0.0 < self.fsd_threshold < 1.0:
            raise ConfigError("fsd_threshold must lie in (0, 1)")
        if not self.eps >= 0:
            raise ConfigError("eps must be >= 0")


@dataclass(frozen=True)
class Verdict:
    label: Optional[str]
    stage: Optional[str]
    g: Optional[float]
    f: Optional[float] = None
    ms: float = 0.0
    error: Optional[str] = None

    @property
    def spoofed(self) -> bool:
        return self.label == SPOOFED


# ---------------------------------------------------------------- ratios


def lpd_counts(frustum: Frustum) -> tuple:
    """Returns before / inside / behind the box, over rays that have one."""
    has = frustum.has_return
    r = frustum.hit_range[has]
    te = frustum.t_enter[has]
    tx = frustum.t_exit[has]
    before = r < te - RANGE_TOL
    behind = r > tx + RANGE_TOL
    return int(before.sum()), int((~before & ~behind).sum()), int(behind.sum())


def lpd_ratio(frustum: Frustum) -> float:
    """Fraction of frustum returns lying behind the box."""
    up, mid, down = lpd_counts(frustum)
    total = up + mid + down
    if total == 0:
        raise EmptyEvidenceError("no returns in the frustum")
    return down / total


def box_grid(box: Box3D, cell_size: float) -> tuple:
    """Box-aligned voxel grid (in the box frame) and its |B| mask.

    The grid is centered on the box with ``ceil(dim / cell)`` cells per axis;
    cells whose center lies inside the box make up |B|.
    """
    dims = np.ceil(box.dims / cell_size - 1e-9).astype(np.int64)
    dims = np.maximum(dims, 1)
    lo = -dims * cell_size / 2.0
    grid = VoxelGrid(lo, cell_size, tuple(dims))
    centers = grid.cell_centers()
    in_box = np.all(np.abs(centers) <= box.dims / 2 + 1e-12, axis=1)
    if not in_box.any():
        raise DegenerateBoxError(f"{box!r} contains no cell centers at cell size {cell_size}")
    return grid, in_box


def fsd_ratio(sensor: SensorModel, frustum: Frustum, config: CarloConfig = CarloConfig()) -> float:
    """Share of the box's cells that some laser crossed before its return."""
    if len(frustum) == 0:
        raise EmptyEvidenceError("empty frustum")
    box = frustum.box
    grid, in_box = box_grid(box, config.cell_size)
    max_range = config.max_range or sensor.max_range
    origin = box.to_local(sensor.origin_array[None, :])[0]
    dirs = box.dirs_to_local(frustum.dirs)
    has = frustum.has_return
    ends = origin + dirs * max_range
    if has.any():
        ends[has] = box.to_local(frustum.hit_xyz[has])
    starts = np.broadcast_to(origin, ends.shape)
    _, cells = traverse_segments(grid, starts, ends, skip_end=has)
    grid.mark_free(cells)
    free = grid.free_mask.reshape(-1)
    return float(np.count_nonzero(free & in_box) / np.count_nonzero(in_box))


# ------------------------------------------------------------------ verdict


def decide(g, f_fn, config: CarloConfig) -> tuple:
    """The hierarchy: ``(label, stage, f)``. ``f_fn`` is called lazily."""
    if g is not None:
        if g < config.lpd_low:
            return VALID, LPD, None
        if g > config.lpd_high:
            return SPOOFED, LPD, None
    f = f_fn()
    return (SPOOFED if f >= config.fsd_threshold else VALID), FSD, f


def carlo_verdict(sensor: SensorModel, cloud: PointCloud, box: Box3D,
                  config: CarloConfig = CarloConfig(), returns: ReturnMap = None) -> Verdict:
    t0 = time.perf_counter()
    fr = extract_frustum(sensor, cloud, box, returns)
    try:
        g = lpd_ratio(fr)
    except EmptyEvidenceError:
        g = None
    label, stage, f = decide(g, lambda: fsd_ratio(sensor, fr, config), config)
    return Verdict(label, stage, g, f, (time.perf_counter() - t0) * 1e3)


def carlo_batch(sensor: SensorModel, cloud: PointCloud, boxes: Sequence[Box3D],
                config: CarloConfig = CarloConfig()) -> List[Verdict]:
    """Per-box verdicts in input order; failures are reported in ``error``."""
    if len(boxes) == 0:
        return []
    returns = ReturnMap(sensor, cloud)
    out = []
    for box in boxes:
        box = getattr(box, "box", box)
        t0 = time.perf_counter()
        try:
            out.append(carlo_verdict(sensor, cloud, box, config, returns))
        except LidarGuardError as exc:
            out.append(Verdict(None, None, None, None, (time.perf_counter() - t0) * 1e3,
                               f"{exc.kind}: {exc}"))
    return out


# -------------------------------------------------------------- calibration


@dataclass
class RatioDistributions:
    f_valid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    f_spoofed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    g_valid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    g_spoofed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    skipped: int = 0

    NAMES = ("f_valid", "f_spoofed", "g_valid", "g_spoofed")

    def __post_init__(self):
        for name in self.NAMES:
            a = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if len(a) and (a.min() < 0 or a.max() > 1):
                raise ValueError(f"{name} has samples outside [0, 1]")
            setattr(self, name, a)

    def cdf(self, name: str, x) -> np.ndarray:
        """Empirical CDF P(sample <= x)."""
        s = np.sort(getattr(self, name))
        if len(s) == 0:
            return np.full(np.shape(x), np.nan)
        return np.searchsorted(s, np.asarray(x, dtype=np.float64), side="right") / len(s)

    def cdf_table(self, grid=None) -> list:
        """Rows ``(x, F_f_valid, F_f_spoofed, F_g_valid, F_g_spoofed)``."""
        grid = np.linspace(0, 1, 101) if grid is None else np.asarray(grid)
        cols = [self.cdf(n, grid) for n in self.NAMES]
        return [(float(x),) + tuple(float(c[i]) for c in cols) for i, x in enumerate(grid)]

    def g_overlap(self) -> bool:
        """Do the valid and spoofed g ranges overlap?"""
        if not (len(self.g_valid) and len(self.g_spoofed)):
            return False
        return bool(self.g_valid.max() >= self.g_spoofed.min())


def scene_ratios(sensor: SensorModel, cloud: PointCloud, boxes, config: CarloConfig) -> tuple:
    """``(f values, g values, skipped)`` for the boxes of one frame.

    Boxes outside the field of view are skipped; a box whose frustum holds no
    return contributes only f.
    """
    returns = ReturnMap(sensor, cloud)
    fs, gs, skipped = [], [], 0
    for box in boxes:
        try:
            fr = extract_frustum(sensor, cloud, box, returns)
            f = fsd_ratio(sensor, fr, config)
        except (LidarGuardError,):
            skipped += 1
            continue
        fs.append(f)
        try:
            gs.append(lpd_ratio(fr))
        except EmptyEvidenceError:
            pass
    return fs, gs, skipped


def thresholds(dist: RatioDistributions, config: CarloConfig = CarloConfig()) -> CarloConfig:
    """Fit a, b, a', b' and the derived thresholds.

    b / b' are the 99.5th percentiles of the valid samples taken at the next
    sample up, a / a' the 0.5th percentiles of the spoofed samples at the
    next sample down, so the bands never shrink past observed data.
    """
    if not (len(dist.f_valid) and len(dist.f_spoofed)):
        raise NonSeparableError("need f samples from both valid and spoofed scenes",
                                {"n_f_valid": len(dist.f_valid), "n_f_spoofed": len(dist.f_spoofed)})
    b = float(np.percentile(dist.f_valid, VALID_PCT, method="higher"))
    a = float(np.percentile(dist.f_spoofed, SPOOF_PCT, method="lower"))
    diag = {"a": a, "b": b, "n_f_valid": len(dist.f_valid), "n_f_spoofed": len(dist.f_spoofed)}
    if not a > b:
        raise NonSeparableError(f"free-space ratios overlap: a={a:.4f} <= b={b:.4f}", diag)
    if len(dist.g_valid) and len(dist.g_spoofed):
        bp = float(np.percentile(dist.g_valid, VALID_PCT, method="higher"))
        ap = float(np.percentile(dist.g_spoofed, SPOOF_PCT, method="lower"))
        low = min(max(ap - config.eps, 0.0), 1.0)
        high = min(max(bp + config.eps, 0.0), 1.0)
        if low > high:
            # the g ranges are far apart; split the gap so every g is decided by LPD
            low = high = 0.5 * (low + high)
    else:
        ap = bp = None
        low, high = 0.0, 1.0
    return replace(config, lpd_low=low, lpd_high=high, fsd_threshold=0.5 * (a + b),
                   a=a, b=b, a_prime=ap, b_prime=bp)


def calibrate(sensor: SensorModel, valid_scenes, spoofed_scenes,
              config: CarloConfig = CarloConfig()) -> tuple:
    """Collect f / g over ``(cloud, boxes)`` scenes and fit thresholds.

    Returns ``(RatioDistributions, CarloConfig)``.
    """
    valid_scenes, spoofed_scenes = list(valid_scenes), list(spoofed_scenes)
    if not valid_scenes or not spoofed_scenes:
        raise NonSeparableError("calibration needs both valid and spoofed scenes")
    buckets = {}
    skipped = 0
    for tag, scenes in (("valid", valid_scenes), ("spoofed", spoofed_scenes)):
        fs, gs = [], []
        for cloud, boxes in scenes:
            f, g, s = scene_ratios(sensor, cloud, boxes, config)
            fs += f
            gs += g
            skipped += s
        buckets["f_" + tag] = fs
        buckets["g_" + tag] = gs
    dist = RatioDistributions(skipped=skipped, **buckets)
    return dist, thresholds(dist, config)


# ------------------------------------------------------------- persistence


def scenes_digest(scenes) -> str:
    """Content hash of ``(cloud, boxes)`` scenes."""
    h = hashlib.sha256()
    for cloud, boxes in scenes:
        h.update(np.ascontiguousarray(cloud.xyz, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(cloud.intensity, dtype="<f8").tobytes())
        for b in boxes:
            h.update(np.array([*b.center, *b.dims, b.yaw], dtype="<f8").tobytes())
    return h.hexdigest()


def profile_dict(config: CarloConfig, dist: RatioDistributions = None, provenance: dict = None) -> dict:
    out = {"config": asdict(config), "percentiles": {"valid": VALID_PCT, "spoofed": SPOOF_PCT}}
    if dist is not None:
        out["samples"] = {n: len(getattr(dist, n)) for n in dist.NAMES}
        out["fsd_separated"] = bool(config.a is not None and config.b is not None and config.a > config.b)
        out["lpd_overlap"] = dist.g_overlap()
    if provenance:
        out["provenance"] = provenance
    return out


def save_profile(path, config: CarloConfig, dist: RatioDistributions = None, provenance: dict = None) -> None:
    with open(path, "w") as fh:
        json.dump(profile_dict(config, dist, provenance), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_profile(path) -> CarloConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read profile {path}: {exc}") from None
    cfg = data.get("config", data)
    known = set(CarloConfig.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown profile keys: {sorted(unknown)}")
    try:
        return CarloConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


VERDICT_HEADER = ("frame_id", "box_index", "label", "stage", "f", "g", "ms", "error")


def _num(v, fmt="{:.6f}"):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else fmt.format(v)


def format_verdicts(rows, provenance: str = "", timings: bool = True) -> str:
    """CSV of ``(frame_id, box_index, Verdict)`` rows."""
    buf = io.StringIO()
    for line in provenance.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VERDICT_HEADER)
    for fid, i, v in rows:
        w.writerow([fid, i, v.label or "", v.stage or "", _num(v.f), _num(v.g),
                    _num(v.ms, "{:.3f}") if timings else "", v.error or ""])
    return buf.getvalue()
