import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidarguard.carlo import (FSD, LPD, SPOOFED, VALID, CarloConfig, RatioDistributions, box_grid,
                              calibrate, carlo_batch, carlo_verdict, decide, format_verdicts, fsd_ratio,
                              load_profile, lpd_counts, lpd_ratio, save_profile, thresholds)
from lidarguard.cloud import PointCloud
from lidarguard.errors import ConfigError, EmptyEvidenceError, NonSeparableError
from lidarguard.geometry.box import Box3D
from lidarguard.geometry.frustum import extract_frustum
from lidarguard.mesh import sedan_mesh
from lidarguard.render import DEFAULT_GROUND_Z, PlacedMesh, Pose, Scene, render

from oracles import lpd_fixture

BOX = Box3D((10.0, 0.0, DEFAULT_GROUND_Z + 0.78), (3.9, 1.6, 1.56), 0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        CarloConfig(cell_size=0)
    with pytest.raises(ConfigError):
        CarloConfig(lpd_low=0.6, lpd_high=0.5)
    with pytest.raises(ConfigError):
        CarloConfig(fsd_threshold=1.0)


@pytest.mark.parametrize("g", [0.0, 0.3, 0.9, 1.0])
def test_lpd_ratio_fixture(hdl64, g):
    cloud = lpd_fixture(hdl64, BOX, g)
    fr = extract_frustum(hdl64, cloud, BOX)
    before, inside, behind = lpd_counts(fr)
    assert (before, inside, behind) == (10 - round(10 * g), 0, round(10 * g))
    assert lpd_ratio(fr) == pytest.approx(g)


def test_lpd_no_returns(hdl64):
    fr = extract_frustum(hdl64, PointCloud.empty(), BOX)
    with pytest.raises(EmptyEvidenceError):
        lpd_ratio(fr)


def test_box_grid_counts():
    grid, in_box = box_grid(Box3D((0, 0, 0), (1.0, 0.5, 0.25)), 0.25)
    assert grid.dims == (4, 2, 1) and in_box.all()
    grid, in_box = box_grid(Box3D((0, 0, 0), (1.1, 0.5, 0.25)), 0.25)
    assert grid.dims == (5, 2, 1) and in_box.sum() == 5 * 2
    # a box smaller than one cell still owns the cell at its center
    grid, in_box = box_grid(Box3D((0, 0, 0), (0.1, 0.1, 0.1)), 0.25)
    assert grid.dims == (1, 1, 1) and in_box.all()


def test_fsd_empty_box_is_all_free(hdl64, backend):
    fr = extract_frustum(hdl64, PointCloud.empty(), BOX)
    assert fsd_ratio(hdl64, fr) > 0.95


def test_fsd_solid_box_is_mostly_occluded(hdl64, backend):
    box_mesh = PlacedMesh(sedan_mesh(), Pose((10.0, 0.0, DEFAULT_GROUND_Z), 0.0))
    cloud = render(hdl64, Scene(box_mesh, (), DEFAULT_GROUND_Z)).cloud
    fr = extract_frustum(hdl64, cloud, BOX)
    f = fsd_ratio(hdl64, fr)
    assert f < 0.6
    # a penetrated (sparse) version of the same car reads as far more free
    sparse = cloud.subset(np.arange(0, len(cloud), 7))
    assert fsd_ratio(hdl64, extract_frustum(hdl64, sparse, BOX)) > f


def test_fsd_returns_at_front_face(hdl64):
    fr = extract_frustum(hdl64, PointCloud.empty(), BOX)
    # every ray returns exactly where it enters the box
    cloud = PointCloud(fr.dirs * fr.t_enter[:, None], np.zeros(len(fr)))
    f = fsd_ratio(hdl64, extract_frustum(hdl64, cloud, BOX))
    # only the outer layer of cells, which pokes past the faces, is crossed
    assert f < 0.1


def test_decide_hierarchy():
    cfg = CarloConfig(lpd_low=0.3, lpd_high=0.6, fsd_threshold=0.5)
    called = []

    def f_fn(v):
        return lambda: called.append(v) or v
    assert decide(0.1, f_fn(0.9), cfg) == (VALID, LPD, None)
    assert decide(0.9, f_fn(0.1), cfg) == (SPOOFED, LPD, None)
    assert called == []
    assert decide(0.45, f_fn(0.7), cfg) == (SPOOFED, FSD, 0.7)
    assert decide(0.45, f_fn(0.2), cfg) == (VALID, FSD, 0.2)
    assert decide(None, f_fn(0.5), cfg) == (SPOOFED, FSD, 0.5)  # f >= threshold


def test_verdict_g09_spoofed_by_lpd(hdl64):
    cloud = lpd_fixture(hdl64, BOX, 0.9)
    v = carlo_verdict(hdl64, cloud, BOX, CarloConfig(lpd_low=0.2, lpd_high=0.5))
    assert (v.label, v.stage) == (SPOOFED, LPD) and v.g == pytest.approx(0.9) and v.f is None


def test_batch_reports_errors_inline(hdl64):
    boxes = [BOX, Box3D((0, 0, 80), (1, 1, 1))]
    out = carlo_batch(hdl64, PointCloud.empty(), boxes)
    assert out[0].error is None and out[0].stage == FSD
    assert out[1].label is None and out[1].error.startswith("empty-frustum")


def test_thresholds_toy_example():
    dist = RatioDistributions(f_valid=[0.1, 0.15, 0.2], f_spoofed=[0.8, 0.9, 1.0],
                              g_valid=[0.0, 0.1, 0.4], g_spoofed=[0.3, 0.7, 0.9])
    cfg = thresholds(dist, CarloConfig(eps=0.05))
    assert (cfg.a, cfg.b) == (0.8, 0.2)
    assert cfg.fsd_threshold == pytest.approx(0.5)
    assert (cfg.a_prime, cfg.b_prime) == (0.3, 0.4)
    assert cfg.lpd_low == pytest.approx(0.25) and cfg.lpd_high == pytest.approx(0.45)


def test_thresholds_collapse_when_g_separated():
    dist = RatioDistributions(f_valid=[0.2], f_spoofed=[0.9], g_valid=[0.1], g_spoofed=[0.8])
    cfg = thresholds(dist)
    assert cfg.lpd_low == cfg.lpd_high == pytest.approx(0.5 * (0.75 + 0.15))


def test_thresholds_non_separable():
    with pytest.raises(NonSeparableError) as e:
        thresholds(RatioDistributions(f_valid=[0.5, 0.7], f_spoofed=[0.6, 0.9]))
    assert e.value.diagnostics["a"] <= e.value.diagnostics["b"]
    with pytest.raises(NonSeparableError):
        thresholds(RatioDistributions(f_valid=[0.1]))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 1))
def test_cdf_is_monotone_step(samples, x):
    d = RatioDistributions(f_valid=samples)
    grid = np.linspace(0, 1, 21)
    c = d.cdf("f_valid", grid)
    assert np.all(np.diff(c) >= 0) and c[-1] == 1.0
    assert d.cdf("f_valid", x) == pytest.approx(np.mean(np.array(samples) <= x))


def test_calibrate_and_profile_round_trip(hdl64, tmp_path):
    car = PlacedMesh(sedan_mesh(), Pose((7.0, 0.5, DEFAULT_GROUND_Z), 0.3))
    real = render(hdl64, Scene(car, (), DEFAULT_GROUND_Z)).cloud
    box = Box3D((7.0, 0.5, DEFAULT_GROUND_Z + 0.78), (3.9, 1.6, 1.56), 0.3)
    ground = render(hdl64, Scene(None, (), DEFAULT_GROUND_Z)).cloud
    dist, cfg = calibrate(hdl64, [(real, [box])], [(ground, [box])])
    assert cfg.a > cfg.b
    save_profile(tmp_path / "p.json", cfg, dist, {"seed": 0})
    assert load_profile(tmp_path / "p.json") == cfg
    (tmp_path / "bad.json").write_text('{"config": {"cell_size": 0.25, "bogus": 1}}')
    with pytest.raises(ConfigError):
        load_profile(tmp_path / "bad.json")


def test_format_verdicts_without_timings(hdl64):
    v = carlo_verdict(hdl64, lpd_fixture(hdl64, BOX, 0.9), BOX, CarloConfig(lpd_high=0.5))
    text = format_verdicts([("000001", 0, v)], "tool\nseed 0", timings=False)
    lines = text.splitlines()
    assert lines[:2] == ["# tool", "# seed 0"]
    assert lines[3] == "000001,0,Spoofed,LPD,,0.900000,,"
    assert not math.isnan(v.ms)
