import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarguard.cloud import PointCloud
from lidarguard.errors import LidarGuardError, MalformedFileError
from lidarguard.geometry.box import Box3D
from lidarguard.geometry.iou import iou3d
from lidarguard.kitti import (Calibration, Detection, KittiDataset, format_detection_dump, format_label_file,
                              label_to_lidar_box, lidar_box_to_label, parse_calib_file, parse_detection_dump,
                              parse_label_file, read_velodyne_bin, write_frame, write_velodyne_bin)


def random_bin(rng, n):
    arr = rng.normal(size=(n, 4)).astype("<f4")
    arr[:, 3] = rng.uniform(0, 1, n)
    return arr.tobytes()


def test_velodyne_round_trip_is_byte_exact():
    rng = np.random.default_rng(0)
    for n in (0, 1, 1000):
        data = random_bin(rng, n)
        assert write_velodyne_bin(read_velodyne_bin(data)) == data


def test_velodyne_malformed():
    with pytest.raises(MalformedFileError) as e:
        read_velodyne_bin(b"\0" * 17)
    assert e.value.offset == 16
    bad = np.array([[0, 0, np.nan, 0]], dtype="<f4").tobytes()
    with pytest.raises(MalformedFileError):
        read_velodyne_bin(bad)
    with pytest.raises(MalformedFileError):
        read_velodyne_bin(np.array([[0, 0, 0, 2]], dtype="<f4").tobytes())


@settings(max_examples=200)
@given(st.binary(max_size=200))
def test_velodyne_fuzz_never_crashes(data):
    try:
        read_velodyne_bin(data)
    except LidarGuardError:
        pass


LABEL = "Car 0.00 1 -1.57 100.00 150.00 200.00 250.00 1.50 1.60 3.90 1.00 1.70 10.00 -1.570000\n"


def test_label_parse_and_format():
    recs = parse_label_file(LABEL)
    assert len(recs) == 1 and recs[0].occluded == 1 and recs[0].score is None
    again = parse_label_file(format_label_file(recs))
    assert again[0].dims_hwl == recs[0].dims_hwl
    assert parse_label_file(LABEL.strip() + " 0.9\n")[0].score == pytest.approx(0.9)


@pytest.mark.parametrize("line", [
    "Car 0 1 0 0 0 0 0 1 1 1 0 0 0",            # too few fields
    "Car 0 x 0 0 0 0 0 1 1 1 0 0 0 0",          # non-numeric
    "Car 0 7 0 0 0 0 0 1 1 1 0 0 0 0",          # bad occlusion flag
    "Car 0 1.5 0 0 0 0 0 1 1 1 0 0 0 0",        # fractional occlusion
    "Car 0 1 0 0 0 0 0 1 1 nan 0 0 0 0",        # non-finite
])
def test_label_malformed(line):
    with pytest.raises(MalformedFileError):
        parse_label_file(line)


def test_box_label_round_trip():
    calib = Calibration.default()
    rng = np.random.default_rng(2)
    for _ in range(50):
        b = Box3D((rng.uniform(5, 40), rng.uniform(-10, 10), rng.uniform(-1.5, 0)),
                  rng.uniform(1, 5, 3), rng.uniform(-math.pi, math.pi))
        back = label_to_lidar_box(lidar_box_to_label(b, calib), calib)
        assert np.allclose(back.center, b.center, atol=1e-9)
        assert iou3d(back, b) == pytest.approx(1.0, abs=1e-9)


def test_calib_text_round_trip_and_errors():
    c = Calibration.default()
    c2 = parse_calib_file(c.to_text())
    assert np.allclose(c2.Tr_velo_to_cam, c.Tr_velo_to_cam) and c2.is_valid
    with pytest.raises(MalformedFileError):
        parse_calib_file("R0_rect: 1 0 0\n")
    with pytest.raises(MalformedFileError):
        parse_calib_file("garbage line\n")


def test_detection_dump_round_trip_is_byte_exact():
    rng = np.random.default_rng(3)
    rows = [Detection(f"{i % 4:06d}", Box3D(rng.normal(size=3), rng.uniform(0.5, 4, 3),
                                            rng.uniform(-3, 3), rng.uniform(0, 1))) for i in range(40)]
    text = format_detection_dump(rows, "tool x\nseed 1")
    assert format_detection_dump(parse_detection_dump(text), "tool x\nseed 1") == text


@pytest.mark.parametrize("text", [
    "", "wrong,header\n", "frame_id,x,y,z,l,w,h,yaw,score\na,1,2\n",
    "frame_id,x,y,z,l,w,h,yaw,score\na,1,2,3,1,1,1,0,1.5\n",
    "frame_id,x,y,z,l,w,h,yaw,score\na,1,2,3,-1,1,1,0,0.5\n",
    "frame_id,x,y,z,l,w,h,yaw,score\na,1,2,3,1,1,1,0,zz\n",
])
def test_detection_dump_malformed(text):
    with pytest.raises(MalformedFileError):
        parse_detection_dump(text)


@settings(max_examples=200)
@given(st.text(max_size=200))
def test_dump_fuzz_never_crashes(text):
    try:
        parse_detection_dump("frame_id,x,y,z,l,w,h,yaw,score\n" + text)
    except LidarGuardError:
        pass


@settings(max_examples=200)
@given(st.binary(max_size=300))
def test_label_and_calib_fuzz_never_crash(data):
    for fn in (parse_label_file, parse_calib_file, parse_detection_dump):
        try:
            fn(data)
        except LidarGuardError:
            pass


def test_dataset_layout(tmp_path):
    cloud = PointCloud(np.array([[1.0, 2, 3]]), np.array([0.5]))
    box = Box3D((10, 0, -0.95), (3.9, 1.6, 1.56), 0.3)
    write_frame(tmp_path, "000007", cloud, [lidar_box_to_label(box, Calibration.default(), occluded=2)])
    ds = KittiDataset(tmp_path)
    assert ds.frame_ids == ["000007"]
    assert len(ds.cloud("000007")) == 1
    (rec, b), = ds.vehicles("000007")
    # label text keeps six decimals
    assert rec.occluded == 2 and iou3d(b, box) == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(MalformedFileError):
        KittiDataset(tmp_path / "missing")
