import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarguard.attack import (calibrate_to_rays, check_capability, extract_vehicle_points, inject,
                               perturb_scale, place_front_near, prune_to_capability, target_box,
                               translate_trace)
from lidarguard.cloud import PointCloud, cartesian, load_sensor, nearest_rays, spherical
from lidarguard.errors import (CapabilityViolationError, EmptyTraceError, OutOfFovError, PlacementError)
from lidarguard.geometry.box import Box3D
from lidarguard.mesh import sedan_mesh
from lidarguard.render import DEFAULT_GROUND_Z, PlacedMesh, Pose, Scene, render
from lidarguard.traces import AttackCapability, AttackTrace

SENSOR = load_sensor("hdl64")


def blob(rng, n, center=(20.0, 3.0, -1.0), spread=1.0):
    xyz = np.asarray(center) + rng.normal(0, spread, (n, 3))
    return AttackTrace(PointCloud(xyz, rng.uniform(0, 1, n)), "rendered", 20.0)


def lattice_trace(n_ch=15, n_az=20, rng_m=6.5, ch0=30, az0=990):
    """Points sitting exactly on distinct lattice rays."""
    ch = np.repeat(np.arange(ch0, ch0 + n_ch), n_az)
    ai = np.tile(np.arange(az0, az0 + n_az), n_ch)
    xyz = cartesian(rng_m, SENSOR.azimuth_array[ai], SENSOR.elevation_array[ch])
    return AttackTrace(PointCloud(xyz, np.full(len(xyz), 0.5)), "rendered", rng_m)


def pairwise(xyz):
    return np.linalg.norm(xyz[:, None] - xyz[None], axis=-1)


def test_translate_is_rigid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = blob(rng, 30)
        out = translate_trace(t, rng.uniform(-3, 3), rng.uniform(-10, 10))
        assert np.abs(pairwise(out.points.xyz) - pairwise(t.points.xyz)).max() <= 1e-9


def test_translate_identity_is_same_object():
    t = blob(np.random.default_rng(1), 10)
    assert translate_trace(t, 0.0, 0.0) is t


def test_translate_moves_centroid_along_bearing():
    t = blob(np.random.default_rng(2), 40)
    c0 = t.centroid
    out = translate_trace(t, 0.0, 5.0)
    d = out.centroid - c0
    assert math.hypot(d[0], d[1]) == pytest.approx(5.0)
    assert math.atan2(d[1], d[0]) == pytest.approx(math.atan2(c0[1], c0[0]))


def test_translate_rejects_axis_centroid():
    t = AttackTrace(PointCloud(np.array([[0.0, 0, 1], [0, 0, 2]]), np.zeros(2)))
    with pytest.raises(PlacementError):
        translate_trace(t, 0.1, 1.0)


def test_place_front_near():
    t = blob(np.random.default_rng(3), 50)
    out = place_front_near(t, azimuth=4.0, range_m=6.0)
    c = out.centroid
    assert math.hypot(c[0], c[1]) == pytest.approx(6.0)
    assert math.degrees(math.atan2(c[1], c[0])) == pytest.approx(4.0)
    assert out.meta["placement"] == {"azimuth_deg": 4.0, "range_m": 6.0}
    with pytest.raises(PlacementError):
        place_front_near(t, range_m=20.0)


def test_calibrate_snaps_onto_rays_keeping_range():
    rng = np.random.default_rng(4)
    t = place_front_near(blob(rng, 300, spread=0.6))
    cal = calibrate_to_rays(SENSOR, t)
    ch, ai, ok = nearest_rays(SENSOR, cal.points.xyz)
    assert ok.all()
    flat = SENSOR.flat_index(ch, ai)
    assert len(np.unique(flat)) == len(flat)
    from lidarguard.cloud import ray_directions
    r = spherical(cal.points.xyz)[0]
    assert np.allclose(cal.points.xyz, ray_directions(SENSOR, ch, ai) * r[:, None], atol=1e-9)


def test_calibrate_keeps_nearest_on_shared_ray():
    d = cartesian(1.0, SENSOR.azimuth_array[1000], SENSOR.elevation_array[40])
    t = AttackTrace(PointCloud(np.array([d * 9.0, d * 7.0, d * 8.0]), np.zeros(3)))
    cal = calibrate_to_rays(SENSOR, t)
    assert len(cal) == 1 and spherical(cal.points.xyz)[0][0] == pytest.approx(7.0)


def test_calibrate_out_of_fov():
    t = AttackTrace(PointCloud(np.array([[0.1, 0, 5.0]]), np.zeros(1)))
    with pytest.raises(OutOfFovError):
        calibrate_to_rays(SENSOR, t)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 600), st.floats(0.05, 3.0), st.integers(0, 10 ** 6))
def test_prune_obeys_capability_and_is_idempotent(n, spread, seed):
    rng = np.random.default_rng(seed)
    t = place_front_near(blob(rng, n, spread=spread))
    cap = AttackCapability()
    p = prune_to_capability(t, cap)
    check_capability(p, cap)
    assert len(p) <= 200 and p.azimuth_extent <= 10.0 + 1e-9
    assert prune_to_capability(p, cap) is p
    # points are a subset of the input
    src = {tuple(x) for x in t.points.xyz.tolist()}
    assert all(tuple(x) in src for x in p.points.xyz.tolist())


def test_prune_keeps_compliant_trace():
    t = lattice_trace(5, 10)
    assert prune_to_capability(t) is t


def test_inject_300_point_trace_yields_200():
    t = lattice_trace()
    assert len(t) == 300
    p = prune_to_capability(t)
    assert len(p) == 200
    bg = render(SENSOR, Scene(None, (), DEFAULT_GROUND_Z)).cloud
    rep = inject(bg, SENSOR, p)
    assert rep.injected_point_count == 200
    assert int(rep.spoofed_mask.sum()) == 200


def test_inject_replaces_rays_and_restores_exactly():
    bg = render(SENSOR, Scene(None, (), DEFAULT_GROUND_Z)).cloud
    car = PlacedMesh(sedan_mesh(), Pose((20.0, 2.0, DEFAULT_GROUND_Z), 0.5))
    src = AttackTrace(render(SENSOR, Scene(car, (), None)).target_points())
    t = prune_to_capability(calibrate_to_rays(SENSOR, place_front_near(src)))
    rep = inject(bg, SENSOR, t)
    # one return per ray survives
    ch, ai, ok = nearest_rays(SENSOR, rep.cloud.xyz)
    flat = SENSOR.flat_index(ch, ai)
    assert len(np.unique(flat)) == len(flat)
    assert len(rep.cloud) == len(bg) - len(rep.removed_index) + len(t)
    assert rep.replaced_ray_count == len(rep.removed_index) > 0
    back = rep.restore()
    assert np.array_equal(back.xyz, bg.xyz) and np.array_equal(back.intensity, bg.intensity)
    box = rep.target_box
    assert box.center[2] == pytest.approx(DEFAULT_GROUND_Z + 0.78)
    assert math.hypot(*(box.center[:2] - t.centroid[:2])) < 1e-9


def test_inject_rejects_over_capability():
    t = lattice_trace()
    with pytest.raises(CapabilityViolationError):
        inject(PointCloud.empty(), SENSOR, t)
    d = cartesian(6.0, SENSOR.azimuth_array[1000], SENSOR.elevation_array[40])
    dup = AttackTrace(PointCloud(np.array([d, d * 1.1]), np.zeros(2)))
    with pytest.raises(CapabilityViolationError):
        inject(PointCloud.empty(), SENSOR, dup)


def test_extract_vehicle_points():
    rng = np.random.default_rng(5)
    box = Box3D((15.0, 0.0, -1.0), (4.0, 2.0, 1.5), 0.2)
    inside = box.center + rng.uniform(-0.5, 0.5, (20, 3))
    outside = box.center + np.array([10.0, 0, 0]) + rng.normal(size=(20, 3))
    cloud = PointCloud(np.vstack([inside, outside]), np.zeros(40), "f")
    t = extract_vehicle_points(cloud, box)
    assert len(t) == 20 and t.source_kind == "occluded"
    with pytest.raises(EmptyTraceError):
        extract_vehicle_points(cloud, Box3D((0, 50, 0), (1, 1, 1)))


def test_perturb_scale():
    t = blob(np.random.default_rng(6), 30)
    same, d0 = perturb_scale(t, 0.0)
    assert d0 == 0.0 and np.array_equal(same.points.xyz, t.points.xyz)
    out, d = perturb_scale(t, 0.1, seed=3)
    r0 = np.linalg.norm(t.points.xyz, axis=1)
    r1 = np.linalg.norm(out.points.xyz, axis=1)
    assert np.all(np.abs(r1 / r0 - 1) <= 0.1 + 1e-12) and d > 0
    fixed, _ = perturb_scale(t, 0.1, scales=1.05)
    assert np.allclose(fixed.points.xyz, t.points.xyz * 1.05)
    with pytest.raises(ValueError):
        perturb_scale(t, 1.5)


def test_target_box_faces_sensor():
    t = blob(np.random.default_rng(7), 10, center=(6.0, 6.0, -1.0), spread=0.1)
    b = target_box(t)
    assert b.yaw == pytest.approx(math.atan2(t.centroid[1], t.centroid[0]))
