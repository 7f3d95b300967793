import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarguard.cloud import (Point, PointCloud, SensorModel, from_spherical, load_sensor, nearest_ray,
                              nearest_rays, ray_direction, sensor_from_dict, to_spherical, wrap_deg)
from lidarguard.errors import ConfigError, DegeneratePointError, InvalidRayError, OutOfFovError

from oracles import nearest_ray_brute


def test_point_validation():
    with pytest.raises(ValueError):
        Point(math.nan, 0, 0)
    with pytest.raises(ValueError):
        Point(1, 0, 0, 1.5)
    assert np.array_equal(Point(1, 2, 3).xyz, [1, 2, 3])


def test_cloud_is_immutable_and_validated():
    c = PointCloud(np.ones((3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        c.xyz[0, 0] = 5
    with pytest.raises(ValueError):
        PointCloud(np.ones((3, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        PointCloud(np.ones((1, 3)), np.array([2.0]))
    assert len(PointCloud.empty()) == 0
    cc = PointCloud.concat([c, c], "x")
    assert len(cc) == 6 and cc.frame_id == "x"


def test_wrap_deg_range():
    a = wrap_deg(np.array([-180.0, 180.0, 540.0, -181.0, 0.0]))
    assert np.allclose(a, [180.0, 180.0, 180.0, 179.0, 0.0])
    assert np.all((a > -180) & (a <= 180))


@given(st.floats(0.5, 100), st.floats(-179.9, 180), st.floats(-80, 80))
def test_spherical_round_trip(r, az, el):
    p = from_spherical(r, az, el)
    r2, az2, el2 = to_spherical(p)
    assert r2 == pytest.approx(r, rel=1e-12)
    assert abs(wrap_deg(az2 - az)) < 1e-9
    assert el2 == pytest.approx(el, abs=1e-9)


def test_origin_is_degenerate(hdl64):
    with pytest.raises(DegeneratePointError):
        to_spherical(Point(0, 0, 0))
    with pytest.raises(DegeneratePointError):
        nearest_ray(hdl64, Point(0, 0, 0))


def test_presets_load(hdl64, vlp16):
    assert hdl64.n_channels == 64 and hdl64.full_circle
    assert vlp16.n_channels == 16
    with pytest.raises(ConfigError):
        load_sensor("nope")
    with pytest.raises(ConfigError):
        sensor_from_dict({"elevations_deg": [0, 1], "channels": 3, "azimuth_step_deg": 1, "max_range_m": 10})
    with pytest.raises(ConfigError):
        SensorModel((1.0, 0.0), 0.2)


def test_ray_direction_bounds(hdl64):
    d = ray_direction(hdl64, (0, 0))
    assert np.linalg.norm(d) == pytest.approx(1.0)
    with pytest.raises(InvalidRayError):
        ray_direction(hdl64, (64, 0))


@pytest.mark.parametrize("preset", ["hdl64", "vlp16"])
def test_nearest_ray_matches_exhaustive_search(preset):
    sensor = load_sensor(preset)
    rng = np.random.default_rng(1)
    lo, hi = sensor.elevation_array[[0, -1]]
    for _ in range(300):
        el = rng.uniform(lo - 0.1, hi + 0.1)
        az = rng.uniform(-180, 180)
        p = from_spherical(rng.uniform(1, 80), az, el).xyz
        assert tuple(nearest_ray(sensor, p)) == nearest_ray_brute(sensor, p)


def test_nearest_ray_ties_go_low(hdl64):
    # exactly between two azimuth columns and two channels
    az = hdl64.azimuth_array[10] + hdl64.azimuth_step / 2
    el = 0.5 * (hdl64.elevation_array[20] + hdl64.elevation_array[21])
    p = from_spherical(10.0, wrap_deg(az), el).xyz
    c, k = nearest_ray(hdl64, p)
    assert (c, k) == nearest_ray_brute(hdl64, p)


def test_out_of_fov(hdl64):
    with pytest.raises(OutOfFovError):
        nearest_ray(hdl64, from_spherical(5.0, 0.0, 60.0).xyz)
    partial = SensorModel((0.0, 1.0), 1.0, -45.0, 45.0)
    _, _, ok = nearest_rays(partial, np.array([[-5.0, 0.0, 0.0], [5.0, 0.0, 0.0]]))
    assert ok.tolist() == [False, True]


@settings(max_examples=50)
@given(st.floats(-179.99, 180), st.floats(-20, 1))
def test_ray_points_snap_to_themselves(az, el):
    s = load_sensor("hdl64")
    c, k = nearest_ray(s, from_spherical(7.0, az, el).xyz)
    back = nearest_ray(s, 7.0 * ray_direction(s, (c, k)))
    assert tuple(back) == (c, k)
