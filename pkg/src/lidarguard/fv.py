"""Front-view (range image) projection, per-point score fusion and a
connectivity-based scatter score."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cloud import PointCloud, SensorModel, spherical
from .errors import ConfigError, MalformedFileError

# guards floor() against angles a rounding error below a pixel edge
FLOOR_EPS = 1e-9
_EIGHT = np.ones((3, 3), dtype=bool)


def _floor_index(angle, step, origin):
    return np.floor((np.asarray(angle, dtype=np.float64) - origin) / step + FLOOR_EPS).astype(np.int64)


def fv_project(p, d_theta: float, d_phi: float, az_origin: float = 0.0, el_origin: float = 0.0,
               wrap: bool = True) -> tuple:
    """Pixel ``(r, c)`` of a point: floored elevation / azimuth over the
    angular resolutions (degrees), counted from the given origins.

    With ``wrap`` the azimuth is taken modulo 360 from ``az_origin`` so
    columns never go negative.
    """
    xyz = np.asarray(getattr(p, "xyz", p), dtype=np.float64)[:3]
    if not np.any(xyz):
        raise ValueError("cannot project the origin")
    az = math.degrees(math.atan2(xyz[1], xyz[0]))
    el = math.degrees(math.atan2(xyz[2], math.hypot(xyz[0], xyz[1])))
    rel = (az - az_origin) % 360.0 if wrap else az - az_origin
    c = int(math.floor(rel / d_theta + FLOOR_EPS))
    r = int(math.floor((el - el_origin) / d_phi + FLOOR_EPS))
    return r, c


@dataclass(frozen=True)
class FvConfig:
    d_theta: float
    d_phi: float
    az_origin: float
    el_origin: float
    rows: int
    cols: int
    wrap: bool = True

    def __post_init__(self):
        if not (self.d_theta > 0 and self.d_phi > 0):
            raise ConfigError("angular resolutions must be > 0")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("FV lattice must have at least one row and column")

    @classmethod
    def for_sensor(cls, sensor: SensorModel, d_phi: float = None) -> "FvConfig":
        """Lattice with one pixel per ray: rays sit at pixel centers."""
        el = sensor.elevation_array
        if d_phi is None:
            d_phi = float(np.diff(el).mean()) if len(el) > 1 else 1.0
        dt = sensor.azimuth_step
        el0 = float(el.min()) - d_phi / 2
        rows = int(math.ceil((float(el.max()) - float(el.min())) / d_phi + 1 - 1e-9))
        az0 = sensor.azimuth_start - dt / 2
        return cls(dt, d_phi, az0, el0, rows, sensor.n_azimuth, sensor.full_circle)

    def project(self, xyz: np.ndarray) -> tuple:
        """Vectorised ``(r, c, inside)`` for (N, 3) points."""
        _, az, el = spherical(np.asarray(xyz, dtype=np.float64).reshape(-1, 3))
        rel = np.mod(az - self.az_origin, 360.0) if self.wrap else az - self.az_origin
        c = np.floor(rel / self.d_theta + FLOOR_EPS).astype(np.int64)
        if self.wrap:
            c = np.mod(c, self.cols)
        r = _floor_index(el, self.d_phi, self.el_origin)
        inside = (r >= 0) & (r < self.rows) & (c >= 0) & (c < self.cols)
        return r, c, inside


@dataclass(frozen=True, eq=False)
class FvImage:
    config: FvConfig
    range: np.ndarray      # (rows, cols), inf where unoccupied
    intensity: np.ndarray  # of the nearest point, 0 where unoccupied
    count: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.count.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.count > 0


def build_fv_image(cloud: PointCloud, config: FvConfig) -> FvImage:
    """Bin points into the FV lattice; points outside the span are dropped."""
    shape = (config.rows, config.cols)
    rng_img = np.full(shape, np.inf)
    inten = np.zeros(shape)
    count = np.zeros(shape, dtype=np.int64)
    if len(cloud):
        r, c, ok = config.project(cloud.xyz)
        rng = np.linalg.norm(cloud.xyz, axis=1)
        idx = np.flatnonzero(ok)
        flat = r[idx] * config.cols + c[idx]
        np.add.at(count.reshape(-1), flat, 1)
        # nearest point per pixel, intensity tie broken by the larger value
        order = np.lexsort((-cloud.intensity[idx], rng[idx], flat))
        flat_o = flat[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat_o[1:] != flat_o[:-1]
        sel = idx[order[first]]
        rng_img.reshape(-1)[flat_o[first]] = rng[sel]
        inten.reshape(-1)[flat_o[first]] = cloud.intensity[sel]
    return FvImage(config, rng_img, inten, count)


def trace_pixels(cloud: PointCloud, config: FvConfig) -> set:
    r, c, ok = config.project(cloud.xyz)
    return set(zip(r[ok].tolist(), c[ok].tolist()))


def scatter_score(pixels) -> float:
    """1 - (largest 8-connected component / occupied pixels)."""
    pix = np.array(sorted(set(map(tuple, pixels))), dtype=np.int64).reshape(-1, 2)
    if len(pix) == 0:
        raise ValueError("scatter score needs at least one pixel")
    lo = pix.min(axis=0)
    span = pix.max(axis=0) - lo + 1
    raster = np.zeros(span, dtype=bool)
    raster[pix[:, 0] - lo[0], pix[:, 1] - lo[1]] = True
    labels, n = ndimage.label(raster, structure=_EIGHT)
    largest = np.bincount(labels.reshape(-1))[1:].max()
    return float(1.0 - largest / len(pix))


def augment_with_scores(cloud: PointCloud, config: FvConfig, scores: np.ndarray) -> PointCloud:
    """Attach each point's pixel score (NaN for points off the lattice)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (config.rows, config.cols):
        raise ValueError(f"score raster is {scores.shape}, lattice is {(config.rows, config.cols)}")
    out = np.full(len(cloud), np.nan)
    if len(cloud):
        r, c, ok = config.project(cloud.xyz)
        out[ok] = scores[r[ok], c[ok]]
    return PointCloud(cloud.xyz, cloud.intensity, cloud.frame_id, out)


# ------------------------------------------------------------------ exports


def fv_to_csv(img: FvImage, provenance: str = "") -> str:
    """Range raster, one CSV row per image row, blank where unoccupied."""
    buf = io.StringIO()
    for line in provenance.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    for row in img.range:
        w.writerow(["" if not np.isfinite(v) else f"{v:.4f}" for v in row])
    return buf.getvalue()


def fv_to_pgm(img: FvImage, max_range: float = None) -> bytes:
    """Binary 8-bit graymap, near = bright, empty = black, top row = highest
    elevation."""
    rng = img.range[::-1]
    occ = np.isfinite(rng)
    top = max_range or (float(rng[occ].max()) if occ.any() else 1.0)
    val = np.zeros(rng.shape, dtype=np.uint8)
    val[occ] = np.clip(255.0 * (1.0 - rng[occ] / top), 1, 255).astype(np.uint8)
    header = f"P5\n{rng.shape[1]} {rng.shape[0]}\n255\n".encode("ascii")
    return header + val.tobytes()


def read_score_raster(text, config: FvConfig = None) -> np.ndarray:
    """External per-pixel scores: CSV, one row per image row, ``#`` comments."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise MalformedFileError(f"line {lineno}: non-numeric score", line=lineno) from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise MalformedFileError("score raster is empty or ragged")
    arr = np.array(rows)
    if not np.isfinite(arr).all():
        raise MalformedFileError("score raster has non-finite values")
    if config is not None and arr.shape != (config.rows, config.cols):
        raise MalformedFileError(f"score raster is {arr.shape}, lattice is {(config.rows, config.cols)}")
    return arr
