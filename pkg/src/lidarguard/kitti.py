"""KITTI-format readers/writers plus the toolkit's detection-dump CSV.

Velodyne scans are headerless little-endian float32 (x, y, z, reflectance)
records. Labels are the 15-column devkit text format in the rectified camera
frame; calibration files hold P0-P3, R0_rect and Tr_velo_to_cam.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cloud import PointCloud
from .errors import CalibrationError, MalformedFileError
from .geometry.box import Box3D, wrap_rad

RECORD = np.dtype("<f4")

# --------------------------------------------------------------- velodyne


def read_velodyne_bin(data) -> PointCloud:
    data = bytes(data)
    if len(data) % 16:
        raise MalformedFileError(
            f"{len(data)} bytes is not a whole number of 16-byte records",
            offset=len(data) - len(data) % 16,
        )
    arr = np.frombuffer(data, dtype=RECORD).reshape(-1, 4)
    finite = np.isfinite(arr).all(axis=1)
    if not finite.all():
        rec = int(np.flatnonzero(~finite)[0])
        raise MalformedFileError(f"non-finite value in record {rec}", offset=rec * 16)
    bad = (arr[:, 3] < 0) | (arr[:, 3] > 1)
    if bad.any():
        rec = int(np.flatnonzero(bad)[0])
        raise MalformedFileError(f"reflectance outside [0, 1] in record {rec}", offset=rec * 16 + 12)
    return PointCloud(arr[:, :3].astype(np.float64), arr[:, 3].astype(np.float64))


def write_velodyne_bin(cloud: PointCloud) -> bytes:
    return cloud.to_array().astype(RECORD).tobytes()


def load_velodyne(path, frame_id: str = "") -> PointCloud:
    cloud = read_velodyne_bin(Path(path).read_bytes())
    return cloud.with_frame(frame_id or Path(path).stem)


# ----------------------------------------------------------------- labels


@dataclass(frozen=True)
class LabelRecord:
    object_type: str
    truncated: float
    occluded: int
    alpha: float
    bbox2d: tuple
    dims_hwl: tuple
    location_cam: tuple
    rotation_y: float
    score: Optional[float] = None

    @property
    def dont_care(self) -> bool:
        return self.object_type == "DontCare"

    def to_line(self) -> str:
        vals = [self.truncated, self.occluded, self.alpha, *self.bbox2d, *self.dims_hwl,
                *self.location_cam, self.rotation_y]
        txt = [self.object_type, f"{vals[0]:.2f}", str(int(vals[1])), f"{vals[2]:.6f}"]
        txt += [f"{v:.2f}" for v in vals[3:7]]
        txt += [f"{v:.6f}" for v in vals[7:]]
        if self.score is not None:
            txt.append(f"{self.score:.4f}")
        return " ".join(txt)


def parse_label_file(text) -> List[LabelRecord]:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFileError(f"label file is not UTF-8: {exc}", offset=exc.start) from None
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) not in (15, 16):
            raise MalformedFileError(
                f"line {lineno}: expected 15 or 16 fields, got {len(parts)}", line=lineno
            )
        try:
            nums = [float(p) for p in parts[1:]]
        except ValueError:
            raise MalformedFileError(f"line {lineno}: non-numeric field", line=lineno) from None
        if not all(math.isfinite(v) for v in nums):
            raise MalformedFileError(f"line {lineno}: non-finite field", line=lineno)
        kind = parts[0]
        occ = nums[1]
        if occ != int(occ):
            raise MalformedFileError(f"line {lineno}: occluded must be an integer", line=lineno)
        rec = LabelRecord(
            object_type=kind, truncated=nums[0], occluded=int(occ), alpha=nums[2],
            bbox2d=tuple(nums[3:7]), dims_hwl=tuple(nums[7:10]), location_cam=tuple(nums[10:13]),
            rotation_y=nums[13], score=nums[14] if len(nums) == 15 else None,
        )
        if not rec.dont_care:
            if rec.occluded not in (0, 1, 2, 3):
                raise MalformedFileError(f"line {lineno}: occluded {rec.occluded} not in 0..3", line=lineno)
            if min(rec.dims_hwl) < 0:
                raise MalformedFileError(f"line {lineno}: negative dimension", line=lineno)
        out.append(rec)
    return out


def format_label_file(records) -> str:
    return "".join(r.to_line() + "\n" for r in records)


# ------------------------------------------------------------ calibration

# Values of the devkit's first object-benchmark frame; used for synthetic data.
DEFAULT_TR_VELO_TO_CAM = np.array([
    [7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03],
    [1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02],
    [9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01],
])
DEFAULT_R0_RECT = np.array([
    [9.999239e-01, 9.837760e-03, -7.445048e-04],
    [-9.869795e-03, 9.997421e-01, -2.022164e-02],
    [7.402527e-04, 2.022442e-02, 9.997952e-01],
])
DEFAULT_P2 = np.array([
    [7.215377e02, 0.0, 6.095593e02, 4.485728e01],
    [0.0, 7.215377e02, 1.728540e02, 2.163791e-01],
    [0.0, 0.0, 1.0, 2.745884e-03],
])
IMAGE_SIZE = (1242, 375)


def _orthonormal(m: np.ndarray, tol: float = 1e-3) -> bool:
    return bool(np.abs(m @ m.T - np.eye(3)).max() <= tol)


@dataclass(frozen=True, eq=False)
class Calibration:
    R0_rect: np.ndarray
    Tr_velo_to_cam: np.ndarray
    P: dict = field(default_factory=dict)

    def __post_init__(self):
        r0 = np.array(self.R0_rect, dtype=np.float64).reshape(3, 3)
        tr = np.array(self.Tr_velo_to_cam, dtype=np.float64).reshape(3, 4)
        if not (np.isfinite(r0).all() and np.isfinite(tr).all()):
            raise CalibrationError("non-finite calibration entry")
        object.__setattr__(self, "R0_rect", r0)
        object.__setattr__(self, "Tr_velo_to_cam", tr)
        object.__setattr__(self, "P", {k: np.array(v, dtype=np.float64).reshape(3, 4) for k, v in self.P.items()})

    @classmethod
    def default(cls) -> "Calibration":
        return cls(DEFAULT_R0_RECT, DEFAULT_TR_VELO_TO_CAM, {"P2": DEFAULT_P2})

    @property
    def is_valid(self) -> bool:
        return _orthonormal(self.R0_rect) and _orthonormal(self.Tr_velo_to_cam[:, :3])

    def velo_to_rect_matrix(self) -> np.ndarray:
        r0 = np.eye(4)
        r0[:3, :3] = self.R0_rect
        tr = np.eye(4)
        tr[:3, :] = self.Tr_velo_to_cam
        return r0 @ tr

    def rect_to_velo_matrix(self) -> np.ndarray:
        m = self.velo_to_rect_matrix()
        if abs(np.linalg.det(m[:3, :3])) < 1e-9:
            raise CalibrationError("calibration is singular")
        return np.linalg.inv(m)

    def velo_to_rect(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return xyz @ self.velo_to_rect_matrix()[:3, :3].T + self.velo_to_rect_matrix()[:3, 3]

    def rect_to_velo(self, xyz) -> np.ndarray:
        m = self.rect_to_velo_matrix()
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return xyz @ m[:3, :3].T + m[:3, 3]

    def to_text(self) -> str:
        lines = []
        for k in ("P0", "P1", "P2", "P3"):
            p = self.P.get(k, self.P.get("P2", DEFAULT_P2))
            lines.append(f"{k}: " + " ".join(f"{v:.12e}" for v in p.reshape(-1)))
        lines.append("R0_rect: " + " ".join(f"{v:.12e}" for v in self.R0_rect.reshape(-1)))
        lines.append("Tr_velo_to_cam: " + " ".join(f"{v:.12e}" for v in self.Tr_velo_to_cam.reshape(-1)))
        return "\n".join(lines) + "\n"


def parse_calib_file(text) -> Calibration:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFileError(f"calib file is not UTF-8: {exc}", offset=exc.start) from None
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        if ":" not in raw:
            raise MalformedFileError(f"line {lineno}: expected 'key: values'", line=lineno)
        key, rest = raw.split(":", 1)
        try:
            vals[key.strip()] = (np.array([float(v) for v in rest.split()]), lineno)
        except ValueError:
            raise MalformedFileError(f"line {lineno}: non-numeric value", line=lineno) from None
    def need(key, n):
        if key not in vals:
            raise MalformedFileError(f"calibration is missing {key}")
        arr, lineno = vals[key]
        if arr.size != n:
            raise MalformedFileError(f"line {lineno}: {key} needs {n} values", line=lineno)
        if not np.isfinite(arr).all():
            raise MalformedFileError(f"line {lineno}: non-finite value", line=lineno)
        return arr
    r0_key = "R0_rect" if "R0_rect" in vals else "R_rect"
    r0 = need(r0_key, 9).reshape(3, 3)
    tr = need("Tr_velo_to_cam", 12).reshape(3, 4)
    ps = {k: need(k, 12).reshape(3, 4) for k in ("P0", "P1", "P2", "P3") if k in vals}
    return Calibration(r0, tr, ps)


# ---------------------------------------------------------- label <-> box


def label_to_lidar_box(rec: LabelRecord, calib: Calibration) -> Box3D:
    h, w, l = rec.dims_hwl
    bottom = calib.rect_to_velo(np.array(rec.location_cam))[0]
    center = bottom + np.array([0.0, 0.0, h / 2])
    yaw = wrap_rad(-rec.rotation_y - math.pi / 2)
    score = 1.0 if rec.score is None else min(max(rec.score, 0.0), 1.0)
    return Box3D(center, (l, w, h), yaw, score)


def lidar_box_to_label(box: Box3D, calib: Calibration, object_type: str = "Car",
                       occluded: int = 0, truncated: float = 0.0, score=None) -> LabelRecord:
    l, w, h = box.dims.tolist()
    bottom = box.center - np.array([0.0, 0.0, h / 2])
    loc = calib.velo_to_rect(bottom)[0]
    ry = wrap_rad(-box.yaw - math.pi / 2)
    alpha = wrap_rad(ry - math.atan2(loc[0], loc[2]))
    return LabelRecord(
        object_type=object_type, truncated=truncated, occluded=int(occluded), alpha=alpha,
        bbox2d=_project_bbox(box, calib), dims_hwl=(h, w, l), location_cam=tuple(loc.tolist()),
        rotation_y=ry, score=score,
    )


def _project_bbox(box: Box3D, calib: Calibration) -> tuple:
    p2 = calib.P.get("P2")
    if p2 is None:
        return (0.0, 0.0, 0.0, 0.0)
    rect = calib.velo_to_rect(box.corners())
    hom = np.column_stack([rect, np.ones(8)]) @ p2.T
    z = np.maximum(hom[:, 2], 1e-3)
    u, v = hom[:, 0] / z, hom[:, 1] / z
    w_img, h_img = IMAGE_SIZE
    return (float(np.clip(u.min(), 0, w_img - 1)), float(np.clip(v.min(), 0, h_img - 1)),
            float(np.clip(u.max(), 0, w_img - 1)), float(np.clip(v.max(), 0, h_img - 1)))


# --------------------------------------------------------- detection dump

DUMP_HEADER = "frame_id,x,y,z,l,w,h,yaw,score"


@dataclass(frozen=True, eq=False)
class Detection:
    frame_id: str
    box: Box3D

    @property
    def score(self) -> float:
        return self.box.score


def format_detection_dump(rows, provenance: str = "") -> str:
    out = io.StringIO()
    if provenance:
        for line in provenance.splitlines():
            out.write(f"# {line}\n")
    out.write(DUMP_HEADER + "\n")
    for det in rows:
        b = det.box
        vals = [*b.center.tolist(), *b.dims.tolist(), b.yaw, b.score]
        out.write(det.frame_id + "," + ",".join(f"{v:.9g}" for v in vals) + "\n")
    return out.getvalue()


def parse_detection_dump(text) -> List[Detection]:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFileError(f"dump is not UTF-8: {exc}", offset=exc.start) from None
    lines = [(i, ln) for i, ln in enumerate(text.splitlines(), 1) if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise MalformedFileError("detection dump has no header")
    lineno, header = lines[0]
    if header.strip().replace(" ", "") != DUMP_HEADER:
        raise MalformedFileError(f"line {lineno}: header must be {DUMP_HEADER!r}", line=lineno)
    out = []
    for lineno, ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 9:
            raise MalformedFileError(f"line {lineno}: expected 9 columns, got {len(parts)}", line=lineno)
        try:
            x, y, z, l, w, h, yaw, score = (float(p) for p in parts[1:])
        except ValueError:
            raise MalformedFileError(f"line {lineno}: non-numeric column", line=lineno) from None
        if not all(math.isfinite(v) for v in (x, y, z, l, w, h, yaw, score)):
            raise MalformedFileError(f"line {lineno}: non-finite column", line=lineno)
        if not 0.0 <= score <= 1.0:
            raise MalformedFileError(f"line {lineno}: score {score} outside [0, 1]", line=lineno)
        if min(l, w, h) <= 0:
            raise MalformedFileError(f"line {lineno}: dims must be positive", line=lineno)
        out.append(Detection(parts[0].strip(), Box3D((x, y, z), (l, w, h), yaw, score)))
    return out


# ---------------------------------------------------------------- dataset


class KittiDataset:
    """``velodyne/``, ``label_2/`` and ``calib/`` folders keyed by frame id."""

    VEHICLE_TYPES = ("Car",)

    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / "velodyne").is_dir():
            raise MalformedFileError(f"{self.root} has no velodyne/ directory")

    @property
    def frame_ids(self) -> list:
        return sorted(p.stem for p in (self.root / "velodyne").glob("*.bin"))

    def cloud(self, fid: str) -> PointCloud:
        return load_velodyne(self.root / "velodyne" / f"{fid}.bin", fid)

    def labels(self, fid: str) -> list:
        p = self.root / "label_2" / f"{fid}.txt"
        return parse_label_file(p.read_text()) if p.exists() else []

    def calib(self, fid: str) -> Calibration:
        p = self.root / "calib" / f"{fid}.txt"
        return parse_calib_file(p.read_text()) if p.exists() else Calibration.default()

    def vehicles(self, fid: str, include_dont_care: bool = False):
        """``(LabelRecord, Box3D)`` pairs of vehicle labels in the LiDAR frame."""
        calib = self.calib(fid)
        out = []
        for rec in self.labels(fid):
            if rec.dont_care and not include_dont_care:
                continue
            if rec.object_type in self.VEHICLE_TYPES or (include_dont_care and rec.dont_care):
                out.append((rec, label_to_lidar_box(rec, calib)))
        return out


def write_frame(root, fid: str, cloud: PointCloud, labels=(), calib: Calibration = None) -> None:
    root = Path(root)
    for sub in ("velodyne", "label_2", "calib"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "velodyne" / f"{fid}.bin").write_bytes(write_velodyne_bin(cloud))
    (root / "label_2" / f"{fid}.txt").write_text(format_label_file(labels))
    (root / "calib" / f"{fid}.txt").write_text((calib or Calibration.default()).to_text())
