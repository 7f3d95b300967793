"""``lidarguard`` command line: one binary, one subcommand per pipeline step.

Options merge as defaults < ``--config`` JSON file < command-line flags.
Every output carries a provenance header (tool version, seed, config hash).
Exit codes: 0 ok, 1 usage or bad configuration, 2 data error, 3 internal
error; failures also print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (calibrate_to_rays, extract_vehicle_points, inject, place_front_near,
                     prune_to_capability, select_candidates)
from .carlo import (CarloConfig, calibrate, carlo_batch, format_verdicts, load_profile, save_profile,
                    scenes_digest)
from .cloud import load_sensor
from .errors import ConfigError, LidarGuardError, MalformedFileError
from .fv import (FvConfig, augment_with_scores, build_fv_image, fv_to_csv, fv_to_pgm, read_score_raster,
                 scatter_score, trace_pixels)
from .harness.campaign import (CampaignPair, CampaignSpec, calibration_scenes, cdf_csv, default_pairs,
                               false_spoof_rate, groups_csv, rows_csv, run_campaign, size_group,
                               stratified_pairs, summary_dict)
from .harness.detector import ProxyDetectorConfig, proxy_detect
from .harness.metrics import SuccessRule, a2sr, asr, average_precision, gt_scores, target_score
from .harness.synth import SynthConfig, SyntheticDataset, spoofed_front_near, valid_front_near
from .kitti import (Detection, KittiDataset, format_detection_dump, load_velodyne,
                    parse_detection_dump, read_velodyne_bin, write_frame, write_velodyne_bin)
from .mesh import load_mesh, sedan_mesh
from .render import default_family_grid, load_scene, render, render_trace_family
from .traces import AttackCapability, AttackTrace, read_trace, write_trace

log = logging.getLogger("lidarguard")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
# keys that never change results and so stay out of the config hash
UNHASHED = ("out", "jobs", "config", "command", "verbose")

DEFAULTS = {
    "sensor": "hdl64",
    "seed": 0,
    "jobs": 1,
    "max_points": 200,
    "azimuth_window": 10.0,
    "target_distance": [5.0, 8.0],
}

COMMAND_DEFAULTS = {
    "synth": {"frames": 20},
    "render": {"scene": None, "family": False, "postures": 40, "patterns": 6, "mesh": "builtin:sedan"},
    "extract": {"kind": "occluded", "margin": 0.1},
    "inject": {},
    "detect": {},
    "carlo-fit": {"benchmark": 0, "ground": True, "valid": None, "spoofed": None, "spoofed_boxes": None,
                  "family_postures": 40, "family_patterns": 6, "cell_size": 0.25, "eps": 0.05},
    "carlo-check": {"profile": None, "timings": False},
    "fv": {"d_phi": None, "d_theta": None, "scores": None, "trace": None},
    "campaign": {},
    "eval": {"targets": None, "iou": 0.7, "distance": 1.0, "score_threshold": 0.3},
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- plumbing


def _error_line(kind: str, message: str, code: int, **extra) -> str:
    d = {"error": kind, "message": message, "exit_code": code}
    d.update(extra)
    return json.dumps(d, sort_keys=True, default=str)


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def merge_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(command, {}))
    flags = vars(args)
    if flags.get("config"):
        cfg.update(load_config_file(flags["config"]))
    cfg.update({k: v for k, v in flags.items() if k != "config"})
    cfg["command"] = command
    return cfg


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k not in UNHASHED}
    return hashlib.sha256(json.dumps(keep, sort_keys=True, default=str).encode()).hexdigest()


class Run:
    """Merged configuration plus the provenance it stamps on outputs."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        try:
            self.seed = int(cfg["seed"])
            self.jobs = max(1, int(cfg["jobs"]))
            self.capability = AttackCapability(int(cfg["max_points"]), float(cfg["azimuth_window"]),
                                               tuple(cfg["target_distance"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad configuration: {exc}") from None
        self.sensor = load_sensor(cfg["sensor"])
        self.hash = config_hash(cfg)
        self.out = Path(cfg["out"]) if cfg.get("out") else None

    @property
    def provenance(self) -> dict:
        return {"tool": f"lidarguard {__version__}", "seed": self.seed, "config_sha256": self.hash}

    @property
    def header(self) -> str:
        p = self.provenance
        return f"{p['tool']}\nseed {p['seed']}\nconfig_sha256 {p['config_sha256']}"

    def output(self, name: str) -> Path:
        if self.out is None:
            raise ConfigError("--out is required")
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.output(name)
        p.write_text(text)
        return p

    def write_json(self, name: str, data: dict) -> Path:
        data = dict(data)
        data["provenance"] = self.provenance
        return self.write_text(name, json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def need_path(p, what: str, kind: str = "any") -> Path:
    if p is None:
        raise ConfigError(f"{what} is required")
    p = Path(p)
    ok = p.is_dir() if kind == "dir" else p.is_file() if kind == "file" else p.exists()
    if not ok:
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def parallel_map(fn, items, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def float32_roundtrip(trace: AttackTrace) -> AttackTrace:
    """The trace as it will read back from a ``.bin`` file."""
    pts = read_velodyne_bin(write_velodyne_bin(trace.points)).with_frame(trace.points.frame_id)
    return trace.with_points(pts)


def fit_trace(trace: AttackTrace, capability: AttackCapability) -> AttackTrace:
    """Prune in stored precision, so the written file itself obeys the
    capability."""
    return prune_to_capability(float32_roundtrip(trace), capability)


def emit_trace(stem, trace: AttackTrace, capability: AttackCapability, provenance: dict) -> AttackTrace:
    t = fit_trace(trace, capability)
    write_trace(stem, t, provenance)
    return t


def open_dataset(cfg: dict, run: Run):
    """``dataset`` is a KITTI-layout root or ``{"synthetic": {frames, seed}}``."""
    spec = cfg.get("dataset")
    if isinstance(spec, dict) and "synthetic" in spec:
        s = spec["synthetic"] or {}
        return SyntheticDataset(run.sensor, int(s.get("frames", 20)), int(s.get("seed", run.seed)))
    if isinstance(spec, dict) and "root" in spec:
        spec = spec["root"]
    return KittiDataset(need_path(spec, "dataset", "dir"))


def read_dump(path) -> list:
    return parse_detection_dump(need_path(path, "detection dump", "file").read_bytes())


def boxes_by_frame(dets) -> dict:
    out = {}
    for d in dets:
        out.setdefault(d.frame_id, []).append(d)
    return out


# ---------------------------------------------------------------- synth


def cmd_synth(run: Run) -> dict:
    ds = SyntheticDataset(run.sensor, int(run.cfg["frames"]), run.seed)
    root = run.output("")
    ds.write(root)
    run.write_json("dataset.json", {"frames": ds.n_frames, "synthetic": asdict(SynthConfig())})
    return {"frames": ds.n_frames, "out": str(root)}


# ---------------------------------------------------------------- render


def cmd_render(run: Run) -> dict:
    cfg = run.cfg
    if cfg["family"]:
        mesh = load_mesh(cfg["mesh"])
        postures, patterns = default_family_grid(run.seed, int(cfg["postures"]), int(cfg["patterns"]))
        traces = render_trace_family(run.sensor, mesh, postures, patterns, run.seed)
        rows = []
        for k, tr in enumerate(traces):
            t = emit_trace(run.output("traces") / f"{k:05d}", tr, run.capability, run.provenance)
            rows.append((f"traces/{k:05d}.bin", len(t), t.azimuth_extent, tr.source_range))
        _write_index(run, rows)
        return {"traces": len(rows)}
    scene_path = need_path(cfg["scene"], "scene file", "file")
    scene = load_scene(scene_path)
    res = render(run.sensor, scene)
    pts = res.target_points() if scene.target is not None else res.cloud
    if len(pts) == 0:
        raise LidarGuardError("the scene produced no target returns")
    c = pts.xyz.mean(axis=0)
    tr = AttackTrace(pts, "rendered", float(math.hypot(c[0], c[1])), {"scene": scene_path.name})
    t = emit_trace(run.output("trace"), tr, run.capability, run.provenance)
    run.output("scene.bin").write_bytes(write_velodyne_bin(res.cloud))
    return {"points": len(t), "rendered_points": len(pts), "azimuth_extent_deg": t.azimuth_extent}


def _write_index(run: Run, rows, name: str = "index.csv") -> None:
    buf = io.StringIO()
    for line in run.header.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("path", "n_points", "group", "azimuth_extent_deg", "source_range_m"))
    for path, n, ext, rng in rows:
        w.writerow([path, n, "{}-{}".format(*size_group(n)) if n else "", f"{ext:.6f}", f"{rng:.4f}"])
    run.write_text(name, buf.getvalue())


# ---------------------------------------------------------------- extract


def cmd_extract(run: Run) -> dict:
    cfg = run.cfg
    ds = open_dataset(cfg, run)
    cands = select_candidates(ds, cfg["kind"])
    rows, skipped = [], 0
    for k, cand in enumerate(cands):
        try:
            tr = extract_vehicle_points(ds.cloud(cand.frame_id), cand.box, float(cfg["margin"]), cfg["kind"])
        except LidarGuardError:
            skipped += 1
            continue
        tr = tr.with_points(tr.points, frame_id=cand.frame_id, box_index=k)
        t = fit_trace(tr, run.capability)
        lo, hi = size_group(len(t))
        rel = f"group_{lo:03d}_{hi:03d}/{cand.frame_id}_{k:04d}"
        write_trace(run.output(rel), t, run.provenance)
        rows.append((rel + ".bin", len(t), t.azimuth_extent, t.source_range))
    _write_index(run, rows)
    return {"candidates": len(cands), "traces": len(rows), "skipped": skipped}


# ---------------------------------------------------------------- inject


def _load_manifest(path) -> tuple:
    p = need_path(path, "manifest", "file")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {p} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("manifest must hold a JSON object")
    return data, p.parent


def _resolve(base: Path, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def cmd_inject(run: Run) -> dict:
    """Manifest: ``{"dataset": root, "items": [{"frame", "trace", "azimuth",
    "range", "place"}]}``; ``place: false`` keeps the trace where it is."""
    data, base = _load_manifest(run.cfg["manifest"])
    ds_spec = data.get("dataset")
    if isinstance(ds_spec, str):
        ds_spec = str(_resolve(base, ds_spec))
    ds = open_dataset({"dataset": ds_spec}, run)
    items = data.get("items")
    if not isinstance(items, list) or not items:
        raise ConfigError("manifest needs a non-empty 'items' list")
    known = set(ds.frame_ids)
    for it in items:
        if str(it.get("frame")) not in known:
            raise MalformedFileError(f"manifest frame {it.get('frame')!r} is not in the dataset")
        need_path(_resolve(base, it["trace"]).with_suffix(".bin"), "trace", "file")
    table, targets = [], []
    for k, it in enumerate(items):
        fid = str(it["frame"])
        tr = read_trace(_resolve(base, it["trace"]))
        if it.get("place", True):
            tr = place_front_near(tr, run.capability, float(it.get("azimuth", 0.0)), it.get("range"))
        tr = calibrate_to_rays(run.sensor, tr)
        tr = fit_trace(tr, run.capability)
        rep = inject(ds.cloud(fid), run.sensor, tr, run.capability)
        oid = f"{k:06d}"
        write_trace(run.output("traces") / oid, tr, run.provenance)
        calib = ds.calib(fid)
        write_frame(run.output(""), oid, rep.cloud.with_frame(oid), ds.labels(fid), calib)
        targets.append(Detection(oid, rep.target_box.replace(score=1.0)))
        table.append([oid, fid, it["trace"], len(tr), f"{tr.azimuth_extent:.6f}", rep.replaced_ray_count,
                      *(f"{v:.4f}" for v in rep.target_box.center[:2])])
    buf = io.StringIO()
    for line in run.header.splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("frame_id", "source_frame", "trace", "n_points", "azimuth_extent_deg", "replaced_rays",
                "target_x", "target_y"))
    w.writerows(table)
    run.write_text("injections.csv", buf.getvalue())
    run.write_text("targets.csv", format_detection_dump(targets, run.header))
    return {"injected": len(table)}


# ---------------------------------------------------------------- detect


def _detect_one(args):
    root, fid, det_cfg = args
    return proxy_detect(load_velodyne(Path(root) / "velodyne" / f"{fid}.bin", fid), det_cfg)


def cmd_detect(run: Run) -> dict:
    ds = KittiDataset(need_path(run.cfg["frames"], "frames", "dir"))
    det_cfg = ProxyDetectorConfig()
    parts = parallel_map(_detect_one, [(str(ds.root), f, det_cfg) for f in ds.frame_ids], run.jobs)
    dets = [d for p in parts for d in p]
    run.write_text("detections.csv", format_detection_dump(dets, run.header))
    return {"frames": len(parts), "detections": len(dets)}


# ---------------------------------------------------------------- CARLO


def _dataset_scenes(root: Path, boxes_dump=None) -> list:
    ds = KittiDataset(root)
    by = boxes_by_frame(read_dump(boxes_dump)) if boxes_dump else None
    out = []
    for fid in ds.frame_ids:
        boxes = [d.box for d in by.get(fid, [])] if by is not None else [b for _, b in ds.vehicles(fid)]
        if boxes:
            out.append((ds.cloud(fid), boxes))
    return out


def cmd_carlo_fit(run: Run) -> dict:
    cfg = run.cfg
    base = CarloConfig(cell_size=float(cfg["cell_size"]), eps=float(cfg["eps"]))
    n = int(cfg["benchmark"])
    if n > 0:
        postures, patterns = default_family_grid(run.seed, int(cfg["family_postures"]), int(cfg["family_patterns"]))
        traces = render_trace_family(run.sensor, sedan_mesh(), postures, patterns, run.seed)
        valid = valid_front_near(run.sensor, n, run.seed, bool(cfg["ground"]), run.capability)
        spoofed = spoofed_front_near(run.sensor, traces, n, run.seed + 1, bool(cfg["ground"]), run.capability)
    else:
        valid_root = need_path(cfg["valid"], "valid scene set", "dir")
        spoof_root = need_path(cfg["spoofed"], "spoofed scene set", "dir")
        if cfg["spoofed_boxes"]:
            need_path(cfg["spoofed_boxes"], "spoofed boxes", "file")
        valid = _dataset_scenes(valid_root)
        spoofed = _dataset_scenes(spoof_root, cfg["spoofed_boxes"])
    dist, fitted = calibrate(run.sensor, valid, spoofed, base)
    prov = dict(run.provenance, valid_sha256=scenes_digest(valid), spoofed_sha256=scenes_digest(spoofed))
    save_profile(run.output("profile.json"), fitted, dist, prov)
    grid = np.linspace(0.0, 1.0, 101)
    run.write_text("fsd_cdf.csv", cdf_csv({"f_valid": dist.f_valid, "f_spoofed": dist.f_spoofed}, grid, run.header))
    run.write_text("lpd_cdf.csv", cdf_csv({"g_valid": dist.g_valid, "g_spoofed": dist.g_spoofed}, grid, run.header))
    summary = {"a": fitted.a, "b": fitted.b, "a_prime": fitted.a_prime, "b_prime": fitted.b_prime,
               "fsd_separated": bool(fitted.a > fitted.b), "lpd_overlap": dist.g_overlap(),
               "f_valid_max": _max(dist.f_valid), "f_spoofed_min": _min(dist.f_spoofed),
               "g_valid_max": _max(dist.g_valid), "g_spoofed_min": _min(dist.g_spoofed),
               "valid_scenes": len(valid), "spoofed_scenes": len(spoofed), "skipped_boxes": dist.skipped}
    run.write_json("ratios.json", summary)
    return summary


def _max(a):
    return float(np.max(a)) if len(a) else None


def _min(a):
    return float(np.min(a)) if len(a) else None


def _check_one(args):
    sensor, path, fid, boxes, config = args
    cloud = load_velodyne(path, fid)
    return [(fid, i, v) for i, v in enumerate(carlo_batch(sensor, cloud, boxes, config))]


def cmd_carlo_check(run: Run) -> dict:
    cfg = run.cfg
    frames = need_path(cfg["frames"], "frames", "any")
    dets = read_dump(cfg["detections"])
    config = load_profile(need_path(cfg["profile"], "profile", "file")) if cfg["profile"] else CarloConfig()
    if frames.is_dir():
        ds = KittiDataset(frames)
        paths = {f: ds.root / "velodyne" / f"{f}.bin" for f in ds.frame_ids}
    else:
        paths = {frames.stem: frames}
    by = boxes_by_frame(dets)
    missing = sorted(set(by) - set(paths))
    if missing:
        raise MalformedFileError(f"detections name frames with no point cloud: {missing[:5]}")
    work = [(run.sensor, str(paths[f]), f, [d.box for d in by[f]], config) for f in sorted(by)]
    rows = [r for part in parallel_map(_check_one, work, run.jobs) for r in part]
    run.write_text("verdicts.csv", format_verdicts(rows, run.header, bool(cfg["timings"])))
    n_sp = sum(v.label == "Spoofed" for _, _, v in rows)
    return {"boxes": len(rows), "spoofed": n_sp, "errors": sum(bool(v.error) for _, _, v in rows)}


# ---------------------------------------------------------------- FV


def cmd_fv(run: Run) -> dict:
    cfg = run.cfg
    path = need_path(cfg["frame"], "frame", "file")
    cloud = load_velodyne(path, path.stem)
    fc = FvConfig.for_sensor(run.sensor, cfg["d_phi"])
    if cfg["d_theta"]:
        dt = float(cfg["d_theta"])
        fc = FvConfig(dt, fc.d_phi, run.sensor.azimuth_start - dt / 2, fc.el_origin, fc.rows,
                      int(math.ceil(360.0 / dt - 1e-9)), True)
    img = build_fv_image(cloud, fc)
    run.write_text("range.csv", fv_to_csv(img, run.header))
    run.output("range.pgm").write_bytes(fv_to_pgm(img))
    info = {"rows": fc.rows, "cols": fc.cols, "d_theta": fc.d_theta, "d_phi": fc.d_phi,
            "az_origin": fc.az_origin, "el_origin": fc.el_origin, "occupied": int(img.occupied.sum())}
    if cfg["trace"]:
        tr = read_trace(need_path(Path(cfg["trace"]).with_suffix(".bin"), "trace", "file"))
        info["trace_scatter_score"] = scatter_score(trace_pixels(tr.points, fc))
    if cfg["scores"]:
        scores = read_score_raster(need_path(cfg["scores"], "score raster", "file").read_text(), fc)
        aug = augment_with_scores(cloud, fc, scores)
        buf = io.StringIO()
        for line in run.header.splitlines():
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("x", "y", "z", "intensity", "score"))
        for p, s in zip(aug.to_array(), aug.scores):
            w.writerow([f"{v:.6f}" for v in p] + ["" if np.isnan(s) else f"{s:.6f}"])
        run.write_text("augmented.csv", buf.getvalue())
    run.write_json("fv.json", info)
    return info


# ---------------------------------------------------------------- campaign


def _family(spec: dict, run: Run) -> list:
    seed = int(spec.get("seed", run.seed))
    postures, patterns = default_family_grid(seed, int(spec.get("postures", 40)), int(spec.get("patterns", 6)))
    return render_trace_family(run.sensor, sedan_mesh(), postures, patterns, seed)


def _traces(spec, base: Path, run: Run) -> list:
    if isinstance(spec, dict) and "family" in spec:
        return _family(spec["family"] or {}, run)
    if isinstance(spec, dict) and "dir" in spec:
        spec = spec["dir"]
    if not isinstance(spec, str):
        raise ConfigError("manifest 'traces' must be a directory or {'family': {...}}")
    root = need_path(_resolve(base, spec), "trace directory", "dir")
    return [read_trace(p) for p in sorted(root.rglob("*.bin"))]


def _defense(spec, base: Path, run: Run, capability, detector):
    if spec is None or spec is False:
        return None, {}
    if isinstance(spec, str):
        return load_profile(need_path(_resolve(base, spec), "profile", "file")), {}
    if not isinstance(spec, dict):
        raise ConfigError("manifest 'defense' must be null, a profile path or {'calibrate': {...}}")
    if "calibrate" not in spec:
        return _dataclass(CarloConfig, spec), {}
    c = spec["calibrate"] or {}
    seed = int(c.get("seed", run.seed + 1))
    ds = SyntheticDataset(run.sensor, int(c.get("frames", 60)), seed)
    traces = _family({"seed": seed, "postures": c.get("postures", 40), "patterns": c.get("patterns", 6)}, run)
    valid, spoofed = calibration_scenes(run.sensor, ds, traces, capability, seed, detector)
    base_cfg = _dataclass(CarloConfig, {k: v for k, v in c.items() if k in ("cell_size", "eps")})
    dist, cfg = calibrate(run.sensor, valid, spoofed, base_cfg)
    return cfg, {"dist": dist}


def _dataclass(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from None


def cmd_campaign(run: Run) -> dict:
    """Manifest keys: ``dataset`` (root or ``{"synthetic": {...}}``),
    ``traces`` (directory or ``{"family": {...}}``), ``defense`` (null,
    profile path, CARLO config or ``{"calibrate": {...}}``), ``pairs``
    (``"round-robin"``, ``{"stratified": {...}}`` or explicit
    ``[frame, trace, azimuth, range]`` lists), optional ``rule``,
    ``detector``, ``detections`` and ``false_spoof_rate``."""
    data, base = _load_manifest(run.cfg["manifest"])
    ds_spec = data.get("dataset")
    if isinstance(ds_spec, str):
        ds_spec = str(_resolve(base, ds_spec))
    ds = open_dataset({"dataset": ds_spec}, run)
    rule = _dataclass(SuccessRule, data.get("rule", {}))
    detector = _dataclass(ProxyDetectorConfig, data.get("detector", {}))
    cap = run.capability
    if "capability" in data:
        c = data["capability"]
        cap = _dataclass(AttackCapability, {**cap.to_dict(), **c,
                                            "target_distance": tuple(c.get("target_distance", cap.target_distance))})
    dumps = None
    if data.get("detections"):
        dumps = boxes_by_frame(read_dump(_resolve(base, data["detections"])))
    traces = _traces(data.get("traces"), base, run)
    if not traces:
        raise MalformedFileError("campaign has no traces")
    defense, extra = _defense(data.get("defense"), base, run, cap, detector)
    ps = data.get("pairs", "round-robin")
    n_frames = len(ds.frame_ids)
    if ps == "round-robin":
        pairs = default_pairs(n_frames, len(traces))
    elif isinstance(ps, dict) and "stratified" in ps:
        s = ps["stratified"] or {}
        pairs = stratified_pairs(run.sensor, traces, n_frames, cap, int(s.get("seed", run.seed)),
                                 int(s.get("per_group", 10)), int(s.get("lo", 0)), int(s.get("hi", 200)))
    elif isinstance(ps, list):
        pairs = [CampaignPair(*p) for p in ps]
        bad = [p for p in pairs if not (0 <= p.frame < n_frames and 0 <= p.trace < len(traces))]
        if bad:
            raise MalformedFileError(f"pairs out of range: {bad[:3]}")
    else:
        raise ConfigError("manifest 'pairs' must be 'round-robin', {'stratified': {...}} or a list")
    spec = CampaignSpec(cap, defense, rule, detector, run.seed)
    result = run_campaign(run.sensor, ds, traces, spec, pairs, run.jobs, dumps)
    run.write_text("rows.csv", rows_csv(result, run.header))
    run.write_text("groups.csv", groups_csv(result, run.header))
    summary = summary_dict(result)
    summary["traces"] = len(traces)
    if defense is not None:
        save_profile(run.output("profile.json"), defense, extra.get("dist"), run.provenance)
        if data.get("false_spoof_rate", False):
            flagged, judged = false_spoof_rate(run.sensor, ds, defense)
            summary["false_spoof"] = {"flagged": flagged, "judged": judged,
                                      "rate": flagged / judged if judged else None}
    run.write_json("summary.json", summary)
    return summary


# ---------------------------------------------------------------- eval


def cmd_eval(run: Run) -> dict:
    cfg = run.cfg
    dets = read_dump(cfg["detections"])
    ds = KittiDataset(need_path(cfg["labels"], "labels", "dir"))
    gts = {f: [b for _, b in ds.vehicles(f)] for f in ds.frame_ids}
    iou = float(cfg["iou"])
    by = boxes_by_frame(dets)
    report = {"detections": len(dets), "ground_truth": sum(len(v) for v in gts.values()), "iou": iou}
    if report["ground_truth"]:
        report["ap"] = average_precision(dets, gts, iou)
    if cfg["targets"]:
        rule = _dataclass(SuccessRule, {"distance": float(cfg["distance"]),
                                        "score_threshold": float(cfg["score_threshold"])})
        targets = read_dump(cfg["targets"])
        scores = [target_score(by.get(t.frame_id, []), t.box, rule) for t in targets]
        report["attacks"] = len(targets)
        report["asr"] = asr([s >= rule.score_threshold for s in scores])
        # ground-truth recall is measured without the spoofed target boxes
        report["a2sr"] = a2sr(scores, gt_scores(by, gts, iou))
    run.write_json("eval.json", report)
    return report


# ---------------------------------------------------------------- parser


COMMANDS = {
    "synth": cmd_synth, "render": cmd_render, "extract": cmd_extract, "inject": cmd_inject,
    "detect": cmd_detect, "carlo-fit": cmd_carlo_fit, "carlo-check": cmd_carlo_check, "fv": cmd_fv,
    "campaign": cmd_campaign, "eval": cmd_eval,
}


def build_parser() -> Parser:
    S = argparse.SUPPRESS
    common = Parser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file of option values")
    common.add_argument("--sensor", help="preset name (hdl64, vlp16) or sensor JSON file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")
    common.add_argument("--max-points", dest="max_points", type=int)
    common.add_argument("--azimuth-window", dest="azimuth_window", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="lidarguard", description="LiDAR spoofing traces and occlusion-aware verification.")
    p.add_argument("--version", action="version", version=f"lidarguard {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("synth", parents=[common], argument_default=S, help="write a synthetic KITTI-layout dataset")
    s.add_argument("--frames", type=int)

    s = sub.add_parser("render", parents=[common], argument_default=S, help="scene file -> trace")
    s.add_argument("scene", nargs="?")
    s.add_argument("--family", action="store_true", help="render the seeded posture x occlusion family")
    s.add_argument("--postures", type=int)
    s.add_argument("--patterns", type=int)
    s.add_argument("--mesh")

    s = sub.add_parser("extract", parents=[common], argument_default=S, help="dataset -> trace library")
    s.add_argument("dataset")
    s.add_argument("--kind", choices=("occluded", "distant"))
    s.add_argument("--margin", type=float)

    s = sub.add_parser("inject", parents=[common], argument_default=S, help="manifest -> spoofed frames")
    s.add_argument("manifest")

    s = sub.add_parser("detect", parents=[common], argument_default=S, help="frames -> proxy detection dump")
    s.add_argument("frames")

    s = sub.add_parser("carlo-fit", parents=[common], argument_default=S, help="scene sets -> CARLO profile")
    s.add_argument("--valid")
    s.add_argument("--spoofed")
    s.add_argument("--spoofed-boxes", dest="spoofed_boxes")
    s.add_argument("--benchmark", type=int, help="render N valid and N spoofed front-near scenes instead")
    s.add_argument("--no-ground", dest="ground", action="store_false")
    s.add_argument("--cell-size", dest="cell_size", type=float)
    s.add_argument("--eps", type=float)

    s = sub.add_parser("carlo-check", parents=[common], argument_default=S, help="frames + detections -> verdicts")
    s.add_argument("frames", help="KITTI-layout root or one .bin file")
    s.add_argument("detections")
    s.add_argument("--profile")
    s.add_argument("--timings", action="store_true", help="include per-box milliseconds (not reproducible)")

    s = sub.add_parser("fv", parents=[common], argument_default=S, help="frame -> front-view rasters")
    s.add_argument("frame")
    s.add_argument("--d-phi", dest="d_phi", type=float)
    s.add_argument("--d-theta", dest="d_theta", type=float)
    s.add_argument("--scores", help="per-pixel score CSV to attach to points")
    s.add_argument("--trace", help="trace whose FV scatter score to report")

    s = sub.add_parser("campaign", parents=[common], argument_default=S, help="manifest -> campaign CSVs")
    s.add_argument("manifest")

    s = sub.add_parser("eval", parents=[common], argument_default=S, help="dump + labels -> ASR / A2SR / AP")
    s.add_argument("detections")
    s.add_argument("labels")
    s.add_argument("--targets", help="target-box dump from inject")
    s.add_argument("--iou", type=float)
    s.add_argument("--distance", type=float)
    s.add_argument("--score-threshold", dest="score_threshold", type=float)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(_error_line("usage", str(exc), EXIT_USAGE), file=sys.stderr)
        return EXIT_USAGE
    command = args.command
    del args.command
    try:
        cfg = merge_config(command, args)
        if cfg.get("verbose"):
            logging.getLogger().setLevel(logging.INFO)
        run = Run(cfg)
        out = COMMANDS[command](run)
    except ConfigError as exc:
        print(_error_line(exc.kind, str(exc), EXIT_USAGE), file=sys.stderr)
        return EXIT_USAGE
    except LidarGuardError as exc:
        extra = {"diagnostics": getattr(exc, "diagnostics", None)} if getattr(exc, "diagnostics", None) else {}
        print(_error_line(exc.kind, str(exc), EXIT_DATA, **extra), file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(_error_line("io", str(exc), EXIT_DATA), file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log.debug("internal error", exc_info=True)
        print(_error_line("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL), file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps(out, sort_keys=True, default=_jsonable))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
