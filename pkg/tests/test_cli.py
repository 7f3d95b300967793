import json

import numpy as np
import pytest

from lidarguard import cli
from lidarguard.carlo import CarloConfig, save_profile
from lidarguard.cloud import PointCloud, cartesian, load_sensor
from lidarguard.geometry.box import Box3D
from lidarguard.kitti import Detection, format_detection_dump, load_velodyne, write_frame
from lidarguard.render import DEFAULT_GROUND_Z
from lidarguard.traces import AttackTrace, read_trace, write_trace

from oracles import lpd_fixture

HDL64 = load_sensor("hdl64")
BOX = Box3D((10.0, 0.0, DEFAULT_GROUND_Z + 0.78), (3.9, 1.6, 1.56), 0.0)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


def error_of(err):
    line = err.strip().splitlines()[-1]
    return json.loads(line)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    assert cli.main(["synth", "--frames", "2", "--seed", "4", "--out", str(root)]) == 0
    return root


def test_usage_errors_exit_1(capsys):
    code, _, err = run(capsys, "nope")
    assert code == 1 and error_of(err)["exit_code"] == 1
    code, _, err = run(capsys, "eval")
    assert code == 1 and error_of(err)["error"] == "usage"


def test_missing_file_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "detect", tmp_path / "missing", "--out", tmp_path / "o")
    assert code == 2
    e = error_of(err)
    assert e["exit_code"] == 2 and "not found" in e["message"]


def test_bad_config_exit_1(capsys, tmp_path):
    (tmp_path / "c.json").write_text("[1, 2]")
    code, _, err = run(capsys, "synth", "--config", tmp_path / "c.json", "--out", tmp_path / "o")
    assert code == 1


def test_internal_error_exit_3(capsys, tmp_path, monkeypatch):
    def boom(run):
        raise RuntimeError("kaboom")
    monkeypatch.setitem(cli.COMMANDS, "synth", boom)
    code, _, err = run(capsys, "synth", "--out", tmp_path)
    assert code == 3 and error_of(err) == {"error": "internal", "message": "RuntimeError: kaboom", "exit_code": 3}


def test_config_merge_order(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 7, "max-points": 150, "frames": 3}))
    args = cli.build_parser().parse_args(["synth", "--config", str(tmp_path / "c.json"), "--seed", "9"])
    del args.command
    cfg = cli.merge_config("synth", args)
    assert cfg["seed"] == 9            # flag beats file
    assert cfg["max_points"] == 150    # file beats default
    assert cfg["frames"] == 3
    assert cfg["azimuth_window"] == cli.DEFAULTS["azimuth_window"]
    base = dict(cfg, out="a", jobs=1)
    assert cli.config_hash(base) == cli.config_hash(dict(cfg, out="b", jobs=4))
    assert cli.config_hash(base) != cli.config_hash(dict(cfg, seed=10))


def test_synth_provenance(dataset):
    info = json.loads((dataset / "dataset.json").read_text())
    assert info["provenance"]["seed"] == 4 and len(info["provenance"]["config_sha256"]) == 64
    assert len(list((dataset / "velodyne").glob("*.bin"))) == 2


def lattice_trace(n_ch=15, n_az=20, rng_m=6.5, ch0=30, az0=990):
    ch = np.repeat(np.arange(ch0, ch0 + n_ch), n_az)
    ai = np.tile(np.arange(az0, az0 + n_az), n_ch)
    xyz = cartesian(rng_m, HDL64.azimuth_array[ai], HDL64.elevation_array[ch])
    return AttackTrace(PointCloud(xyz, np.full(len(xyz), 0.5)), "rendered", rng_m)


def test_inject_prunes_to_capability(capsys, tmp_path, dataset):
    write_trace(tmp_path / "big", lattice_trace())
    manifest = {"dataset": str(dataset), "items": [{"frame": "000000", "trace": str(tmp_path / "big"),
                                                   "azimuth": 0.0, "range": 6.5}]}
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    code, out, err = run(capsys, "inject", tmp_path / "m.json", "--out", tmp_path / "o")
    assert code == 0, err
    t = read_trace(tmp_path / "o" / "traces" / "000000")
    assert len(t) == 200 and t.azimuth_extent <= 10.0
    lines = (tmp_path / "o" / "injections.csv").read_text().splitlines()
    assert lines[0].startswith("# lidarguard")
    assert lines[4].split(",")[3] == "200"
    injected = load_velodyne(tmp_path / "o" / "velodyne" / "000000.bin")
    pristine = load_velodyne(dataset / "velodyne" / "000000.bin")
    assert len(injected) <= len(pristine) + 200


def test_inject_rejects_unknown_frame(capsys, tmp_path, dataset):
    write_trace(tmp_path / "t", lattice_trace(3, 3))
    (tmp_path / "m.json").write_text(json.dumps({"dataset": str(dataset),
                                                 "items": [{"frame": "999999", "trace": str(tmp_path / "t")}]}))
    code, _, err = run(capsys, "inject", tmp_path / "m.json", "--out", tmp_path / "o")
    assert code == 2 and error_of(err)["error"] == "malformed-file"


def test_carlo_check_flags_lpd(capsys, tmp_path):
    cloud = lpd_fixture(HDL64, BOX, 0.9)
    write_frame(tmp_path / "ds", "000001", cloud)
    (tmp_path / "d.csv").write_text(format_detection_dump([Detection("000001", BOX.replace(score=0.8))]))
    save_profile(tmp_path / "p.json", CarloConfig(lpd_low=0.2, lpd_high=0.5))
    code, out, err = run(capsys, "carlo-check", tmp_path / "ds", tmp_path / "d.csv",
                         "--profile", tmp_path / "p.json", "--out", tmp_path / "o")
    assert code == 0, err
    assert out == {"boxes": 1, "spoofed": 1, "errors": 0}
    row = [l for l in (tmp_path / "o" / "verdicts.csv").read_text().splitlines() if not l.startswith("#")][1]
    assert row.startswith("000001,0,Spoofed,LPD,,0.900000")


def test_carlo_check_rejects_orphan_detections(capsys, tmp_path):
    write_frame(tmp_path / "ds", "000001", PointCloud.empty())
    (tmp_path / "d.csv").write_text(format_detection_dump([Detection("000002", BOX)]))
    code, _, err = run(capsys, "carlo-check", tmp_path / "ds", tmp_path / "d.csv", "--out", tmp_path / "o")
    assert code == 2


def test_detect_and_eval(capsys, tmp_path, dataset):
    code, out, err = run(capsys, "detect", dataset, "--out", tmp_path / "d")
    assert code == 0, err
    code, out, err = run(capsys, "eval", tmp_path / "d" / "detections.csv", dataset, "--iou", 0.3,
                         "--out", tmp_path / "e")
    assert code == 0, err
    assert 0.0 <= out["ap"] <= 1.0


def test_fv_outputs(capsys, tmp_path, dataset):
    code, out, err = run(capsys, "fv", dataset / "velodyne" / "000000.bin", "--out", tmp_path)
    assert code == 0, err
    assert (tmp_path / "range.pgm").read_bytes().startswith(b"P5\n")
    assert json.loads((tmp_path / "fv.json").read_text())["provenance"]["tool"].startswith("lidarguard")


def test_campaign_rerun_byte_identical(capsys, tmp_path):
    manifest = {"dataset": {"synthetic": {"frames": 2, "seed": 3}},
                "traces": {"family": {"seed": 0, "postures": 4, "patterns": 2}},
                "defense": {"lpd_low": 0.3, "lpd_high": 0.6, "fsd_threshold": 0.5},
                "pairs": "round-robin"}
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    outs = []
    for name, jobs in (("a", 1), ("b", 1), ("c", 2)):
        code, out, err = run(capsys, "campaign", tmp_path / "m.json", "--out", tmp_path / name, "--jobs", jobs)
        assert code == 0, err
        outs.append(out)
    for f in ("rows.csv", "groups.csv", "summary.json"):
        a = (tmp_path / "a" / f).read_bytes()
        assert a == (tmp_path / "b" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()
    rows = (tmp_path / "a" / "rows.csv").read_text().splitlines()
    assert rows[0].startswith("# lidarguard") and rows[1].startswith("# seed")
