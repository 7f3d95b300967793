"""Triangle meshes: an OBJ subset reader/writer and a procedural sedan."""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import MalformedFileError

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if not np.isfinite(v).all():
            raise ValueError("non-finite vertex")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def __len__(self) -> int:
        return len(self.triangles)

    def soup(self) -> np.ndarray:
        """(T, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        s = self.soup()
        return 0.5 * np.linalg.norm(np.cross(s[:, 1] - s[:, 0], s[:, 2] - s[:, 0]), axis=1)

    def drop_degenerate(self) -> "TriangleMesh":
        keep = self.areas() > DEGENERATE_AREA
        return TriangleMesh(self.vertices, self.triangles[keep])

    def bounds(self) -> tuple:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def posed(self, translation=(0.0, 0.0, 0.0), yaw: float = 0.0) -> "TriangleMesh":
        """Rotate about +z by ``yaw`` then translate."""
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return TriangleMesh(self.vertices @ rot.T + np.asarray(translation, dtype=np.float64), self.triangles)

    @staticmethod
    def merge(meshes) -> "TriangleMesh":
        verts, tris, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + off)
            off += len(m.vertices)
        if not verts:
            return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        return TriangleMesh(np.vstack(verts), np.vstack(tris))


def _obj_index(tok: str, n_vertices: int, lineno: int) -> int:
    head = tok.split("/", 1)[0]
    try:
        i = int(head)
    except ValueError:
        raise MalformedFileError(f"line {lineno}: bad face index {tok!r}", line=lineno) from None
    if i > 0:
        j = i - 1
    elif i < 0:
        j = n_vertices + i
    else:
        raise MalformedFileError(f"line {lineno}: face index 0 is invalid", line=lineno)
    if not 0 <= j < n_vertices:
        raise MalformedFileError(f"line {lineno}: face index {i} out of range", line=lineno)
    return j


def read_obj_mesh(text) -> TriangleMesh:
    """Parse ``v`` and ``f`` records; polygons are fan-triangulated.

    Other directives are ignored. Degenerate triangles are dropped.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFileError(f"mesh is not UTF-8 text: {exc}", offset=exc.start) from None
    verts, tris = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MalformedFileError(f"line {lineno}: vertex needs 3 coordinates", line=lineno)
            try:
                xyz = [float(p) for p in parts[1:4]]
            except ValueError:
                raise MalformedFileError(f"line {lineno}: bad vertex coordinate", line=lineno) from None
            if not all(math.isfinite(v) for v in xyz):
                raise MalformedFileError(f"line {lineno}: non-finite vertex", line=lineno)
            verts.append(xyz)
        elif parts[0] == "f":
            if len(parts) < 4:
                raise MalformedFileError(f"line {lineno}: face needs at least 3 vertices", line=lineno)
            idx = [_obj_index(t, len(verts), lineno) for t in parts[1:]]
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    mesh = TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3))
    return mesh.drop_degenerate()


def write_obj_mesh(mesh: TriangleMesh, comment: str = "") -> str:
    lines = [f"# {comment}"] if comment else []
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ procedural car

# quad faces (outward CCW) of a hexahedron with corners ordered
# bottom: 0(-x,-y) 1(+x,-y) 2(+x,+y) 3(-x,+y), top: 4..7 likewise
_HEX_QUADS = ((0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7))


def _hexahedron(bottom, top):
    """bottom/top: (x0, x1, half_width, z) tuples."""
    bx0, bx1, bw, bz = bottom
    tx0, tx1, tw, tz = top
    v = [(bx0, -bw, bz), (bx1, -bw, bz), (bx1, bw, bz), (bx0, bw, bz),
         (tx0, -tw, tz), (tx1, -tw, tz), (tx1, tw, tz), (tx0, tw, tz)]
    return v, [q for q in _HEX_QUADS]


def sedan_quads(length=3.9, width=1.6, height=1.56, clearance=0.25):
    """Vertices and quad faces of a low-poly sedan.

    Local frame: +x toward the nose, origin on the ground below the center.
    Lower body spans the full footprint from ``clearance`` to the beltline; a
    narrower cabin with raked windshield and rear window sits on top.
    """
    hl, hw = length / 2, width / 2
    belt = clearance + 0.42 * (height - clearance) + 0.09
    body_v, body_q = _hexahedron((-hl, hl, hw, clearance), (-hl, hl, hw, belt))
    cab_v, cab_q = _hexahedron(
        (-0.30 * length, 0.20 * length, hw - 0.06, belt),
        (-0.24 * length, 0.06 * length, hw - 0.18, height),
    )
    verts = body_v + cab_v
    quads = list(body_q) + [tuple(i + 8 for i in q) for q in cab_q]
    return verts, quads


def sedan_mesh(length=3.9, width=1.6, height=1.56, clearance=0.25) -> TriangleMesh:
    verts, quads = sedan_quads(length, width, height, clearance)
    tris = []
    for q in quads:
        tris.append((q[0], q[1], q[2]))
        tris.append((q[0], q[2], q[3]))
    return TriangleMesh(np.array(verts), np.array(tris))


def sedan_obj_text() -> str:
    verts, quads = sedan_quads()
    lines = ["# low-poly sedan, meters, +x forward, origin on ground under the center", "o sedan"]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in verts]
    lines += ["f " + " ".join(str(i + 1) for i in q) for q in quads]
    return "\n".join(lines) + "\n"


def load_mesh(spec: str) -> TriangleMesh:
    """``builtin:sedan`` or a path to an OBJ file."""
    if spec in ("builtin:sedan", "sedan"):
        return read_obj_mesh(resources.files("lidarguard.data").joinpath("sedan.obj").read_text())
    with open(spec, "r", encoding="utf-8", errors="strict") as fh:
        return read_obj_mesh(fh.read())


def plane_mesh(center, normal_yaw: float, width: float, height: float, z0: float) -> TriangleMesh:
    """Vertical rectangle (an occluder wall) facing azimuth ``normal_yaw``.

    ``center`` is its BEV center; it spans ``z0`` .. ``z0 + height``.
    """
    cx, cy = float(center[0]), float(center[1])
    tx, ty = -math.sin(normal_yaw), math.cos(normal_yaw)
    hw = width / 2
    v = np.array([
        [cx - tx * hw, cy - ty * hw, z0], [cx + tx * hw, cy + ty * hw, z0],
        [cx + tx * hw, cy + ty * hw, z0 + height], [cx - tx * hw, cy - ty * hw, z0 + height],
    ])
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))
