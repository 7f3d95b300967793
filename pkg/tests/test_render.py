import math

import numpy as np
import pytest

from lidarguard.errors import ConfigError, MalformedFileError
from lidarguard.mesh import load_mesh, plane_mesh, read_obj_mesh, sedan_mesh, write_obj_mesh
from lidarguard.render import (DEFAULT_GROUND_Z, GROUND, OCCLUDER, TARGET, PlacedMesh, Pose, Scene,
                               default_family_grid, group_traces, render, render_trace_family,
                               scene_from_dict)
from lidarguard.traces import AttackCapability, AttackTrace, azimuth_extent, read_trace, write_trace


def test_obj_round_trip_and_errors():
    m = sedan_mesh()
    m2 = read_obj_mesh(write_obj_mesh(m))
    assert np.allclose(m2.vertices, m.vertices) and np.array_equal(m2.triangles, m.triangles)
    assert len(load_mesh("builtin:sedan")) == len(m)
    quad = read_obj_mesh("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert len(quad) == 2
    for bad in ("v 0 0\n", "v 0 0 x\n", "v 0 0 0\nf 1 2 9\n", "f 1 2\n"):
        with pytest.raises(MalformedFileError):
            read_obj_mesh(bad)


def test_degenerate_triangles_dropped():
    m = read_obj_mesh("v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 4\n")
    assert len(m) == 1


def test_render_hits_nearest_surface(hdl64, backend):
    car = PlacedMesh(sedan_mesh(), Pose((10.0, 0.0, DEFAULT_GROUND_Z), 0.0))
    wall = PlacedMesh(plane_mesh((6.0, 0.0), math.pi, 1.0, 3.0, DEFAULT_GROUND_Z))
    res = render(hdl64, Scene(car, (wall,), DEFAULT_GROUND_Z))
    alone = render(hdl64, Scene(car, (), None))
    assert 0 < res.target_count() < alone.target_count()
    assert (res.source == OCCLUDER).any() and (res.source == GROUND).any()
    # every return is the first surface on its ray: no target return hides behind the wall's span
    tgt = res.cloud.xyz[res.source == TARGET]
    assert tgt[:, 0].min() > 6.0
    # one return per ray
    flat = res.ray_ids[:, 0] * hdl64.n_azimuth + res.ray_ids[:, 1]
    assert len(np.unique(flat)) == len(flat)


def test_render_masks_remove_target_returns(hdl64):
    car = PlacedMesh(sedan_mesh(), Pose((10.0, 0.0, DEFAULT_GROUND_Z), 0.0))
    full = render(hdl64, Scene(car, (), None)).target_count()
    masked = render(hdl64, Scene(car, (), None, ((-2.0, 2.0),))).target_count()
    assert 0 < masked < full


def test_scene_from_dict(hdl64):
    s = scene_from_dict({"mesh": "builtin:sedan", "pose": {"x": 12, "yaw_deg": 90},
                         "occluders": [{"kind": "wall", "x": 6, "y": 0}], "ground": True})
    assert s.ground_z == DEFAULT_GROUND_Z and len(s.occluders) == 1
    with pytest.raises(ConfigError):
        scene_from_dict({"mesh": "builtin:sedan", "occluders": [{"kind": "wall"}]})


def test_family_is_seeded_and_grouped(vlp16):
    postures, patterns = default_family_grid(3, 6, 3)
    a = render_trace_family(vlp16, sedan_mesh(), postures, patterns, 3)
    b = render_trace_family(vlp16, sedan_mesh(), postures, patterns, 3)
    assert len(a) == len(b) > 0
    assert all(np.array_equal(x.points.xyz, y.points.xyz) for x, y in zip(a, b))
    groups = group_traces(a, per_group=2)
    for (lo, hi), members in groups.items():
        assert len(members) <= 2 and all(lo < len(t) <= hi for t in members)


def test_trace_file_round_trip(tmp_path, hdl64):
    car = PlacedMesh(sedan_mesh(), Pose((10.0, 0.0, DEFAULT_GROUND_Z), 0.0))
    pts = render(hdl64, Scene(car, (), None)).target_points()
    t = AttackTrace(pts, "rendered", 10.0, {"note": "x"})
    write_trace(tmp_path / "t", t, {"seed": 1})
    back = read_trace(tmp_path / "t")
    assert len(back) == len(t) and back.meta["note"] == "x"
    assert np.allclose(back.points.xyz, t.points.xyz, atol=1e-5)


def test_capability_and_extent():
    with pytest.raises(ValueError):
        AttackCapability(max_points=0)
    assert azimuth_extent([179.0, -179.0]) == pytest.approx(2.0)
    assert azimuth_extent([10.0]) == 0.0
    assert azimuth_extent([-5.0, 0.0, 5.0]) == pytest.approx(10.0)
