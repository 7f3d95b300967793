"""Attack campaigns: inject traces into frames, detect, optionally defend,
judge, and aggregate per trace-size group."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from ..attack import calibrate_to_rays, extract_vehicle_points, inject, place_front_near, select_candidates
from ..carlo import SPOOFED, CarloConfig, carlo_batch
from ..cloud import PointCloud, SensorModel
from ..errors import LidarGuardError, MetricError
from ..geometry.box import points_in_box
from ..traces import AttackCapability, AttackTrace
from .detector import ProxyDetectorConfig, proxy_detect
from .metrics import SuccessRule, a2sr, asr, ecdf_table, target_score
from .synth import draw_placement, jitter_box, spoof_trace

log = logging.getLogger(__name__)

GROUP_WIDTH = 10
# BEV distance at which a detection counts as finding a labeled vehicle,
# used for the recall side of A2SR
GT_MATCH_DISTANCE = 2.0


def size_group(n: int, width: int = GROUP_WIDTH) -> tuple:
    """``(lo, hi]`` bucket holding ``n`` points."""
    lo = width * ((max(int(n), 1) - 1) // width)
    return lo, lo + width


@dataclass
class PairResult:
    pair: int
    frame_id: str
    trace_id: int
    n_points: int = 0
    azimuth: float = math.nan
    range_m: float = math.nan
    score: float = math.nan             # target score, undefended
    success: bool = False
    score_defended: float = math.nan
    success_defended: bool = False
    n_detections: int = 0
    n_flagged: int = 0
    target_stage: str = ""
    gt_scores: tuple = ()
    gt_scores_defended: tuple = ()
    error: str = ""


@dataclass
class ExperimentResult:
    rows: List[PairResult] = field(default_factory=list)
    defended: bool = False
    label: str = "proxy-scale"

    @property
    def ok_rows(self) -> List[PairResult]:
        return [r for r in self.rows if not r.error]

    @property
    def errors(self) -> List[PairResult]:
        return [r for r in self.rows if r.error]

    def flags(self, defended: bool = False) -> np.ndarray:
        key = "success_defended" if defended else "success"
        return np.array([getattr(r, key) for r in self.ok_rows], dtype=bool)

    def asr(self, defended: bool = False) -> float:
        return asr(self.flags(defended))

    def group_asr(self, defended: bool = False) -> Dict[tuple, tuple]:
        """``{(lo, hi): (count, asr)}`` over 10-point groups, ascending."""
        key = "success_defended" if defended else "success"
        groups: Dict[tuple, list] = {}
        for r in self.ok_rows:
            groups.setdefault(size_group(r.n_points), []).append(getattr(r, key))
        return {g: (len(v), asr(v)) for g, v in sorted(groups.items())}

    def a2sr(self, defended: bool = False) -> float:
        rows = self.ok_rows
        att = [r.score_defended if defended else r.score for r in rows]
        gt = [s for r in rows for s in (r.gt_scores_defended if defended else r.gt_scores)]
        return a2sr(att, gt)


# ------------------------------------------------------------------ running


@dataclass(frozen=True)
class CampaignSpec:
    capability: AttackCapability = AttackCapability()
    defense: Optional[CarloConfig] = None
    rule: SuccessRule = SuccessRule()
    detector: ProxyDetectorConfig = ProxyDetectorConfig()
    seed: int = 0
    azimuth_span: float = 20.0


def _gt_scores(dets, boxes) -> tuple:
    out = []
    for b in boxes:
        s = [d.score for d in dets if math.hypot(*(d.box.center[:2] - b.center[:2])) <= GT_MATCH_DISTANCE]
        out.append(max(s) if s else math.nan)
    return tuple(out)


class CampaignPair(NamedTuple):
    frame: int
    trace: int
    azimuth: Optional[float] = None   # degrees; None draws from the seed
    range_m: Optional[float] = None

    @property
    def placement(self):
        return None if self.azimuth is None else (self.azimuth, self.range_m)


def run_pair(sensor: SensorModel, cloud: PointCloud, gt_boxes, trace: AttackTrace, spec: CampaignSpec,
             pair: int, trace_id: int, detections=None, placement: tuple = None) -> PairResult:
    """One injection, detection and judgement. ``detections`` (an external
    dump for the injected frame) replaces the proxy detector."""
    res = PairResult(pair, cloud.frame_id, trace_id)
    rng = np.random.default_rng([spec.seed, pair])
    try:
        t = spoof_trace(sensor, trace, rng, spec.capability, spec.azimuth_span, placement)
        if len(t) == 0:
            raise LidarGuardError("trace lost every point during placement")
        rep = inject(cloud, sensor, t, spec.capability)
    except LidarGuardError as exc:
        res.error = f"{getattr(exc, 'kind', 'error')}: {exc}"
        return res
    c = t.centroid
    res.n_points = len(t)
    res.azimuth = math.degrees(math.atan2(c[1], c[0]))
    res.range_m = math.hypot(c[0], c[1])
    target = rep.target_box
    dets = detections if detections is not None else proxy_detect(rep.cloud, spec.detector)
    res.n_detections = len(dets)
    res.score = target_score(dets, target, spec.rule)
    res.success = bool(res.score >= spec.rule.score_threshold)
    res.gt_scores = _gt_scores(dets, gt_boxes)
    if spec.defense is None:
        res.score_defended, res.success_defended = res.score, res.success
        res.gt_scores_defended = res.gt_scores
        return res
    verdicts = carlo_batch(sensor, rep.cloud, [d.box for d in dets], spec.defense)
    kept = [d for d, v in zip(dets, verdicts) if v.label != SPOOFED]
    res.n_flagged = len(dets) - len(kept)
    for d, v in zip(dets, verdicts):
        if spec.rule.located(d.box, target) and d.score == res.score:
            res.target_stage = v.stage or ""
            break
    res.score_defended = target_score(kept, target, spec.rule)
    res.success_defended = bool(res.score_defended >= spec.rule.score_threshold)
    res.gt_scores_defended = _gt_scores(kept, gt_boxes)
    return res


def default_pairs(n_frames: int, n_traces: int) -> list:
    """Round-robin pairing: pair k uses frame k mod F and trace k mod T."""
    if n_frames == 0 or n_traces == 0:
        return []
    return [CampaignPair(k % n_frames, k % n_traces) for k in range(max(n_frames, n_traces))]


def stratified_pairs(sensor: SensorModel, traces: Sequence[AttackTrace], n_frames: int,
                     capability: AttackCapability = AttackCapability(), seed: int = 0,
                     per_group: int = 10, lo: int = 0, hi: int = 200, azimuth_span: float = 20.0) -> list:
    """A manifest with up to ``per_group`` pairs in every 10-point group.

    Each trace gets one seeded placement; the injected size is known before
    the campaign runs, so traces are drawn per group of that size. Frames are
    assigned round-robin.
    """
    rng = np.random.default_rng(seed)
    by_group: Dict[tuple, list] = {}
    for ti, tr in enumerate(traces):
        place = draw_placement(rng, capability, azimuth_span)
        try:
            n = len(spoof_trace(sensor, tr, rng, capability, azimuth_span, place))
        except LidarGuardError:
            continue
        if lo < n <= hi:
            by_group.setdefault(size_group(n), []).append((ti, place))
    picked = []
    for g in sorted(by_group):
        members = by_group[g]
        if len(members) > per_group:
            members = [members[i] for i in np.sort(rng.choice(len(members), per_group, replace=False))]
        picked += members
    return [CampaignPair(k % n_frames, ti, az, r) for k, (ti, (az, r)) in enumerate(picked)] if n_frames else []


def _run_chunk(args):
    sensor, dataset, traces, spec, chunk, dumps = args
    fids = dataset.frame_ids
    out = []
    for k, p in chunk:
        p = CampaignPair(*p)
        fid = fids[p.frame]
        boxes = [b for _, b in dataset.vehicles(fid)]
        dets = None if dumps is None else dumps.get((fid, k), dumps.get(fid, []))
        out.append(run_pair(sensor, dataset.cloud(fid), boxes, traces[p.trace], spec, k, p.trace, dets,
                            p.placement))
    return out


def run_campaign(sensor: SensorModel, dataset, traces: Sequence[AttackTrace], spec: CampaignSpec = CampaignSpec(),
                 pairs=None, jobs: int = 1, dumps: dict = None) -> ExperimentResult:
    """Inject every (frame, trace) pair and judge it.

    Per-pair failures are kept as rows with ``error`` set. The result only
    depends on the inputs and ``spec.seed``, not on ``jobs``.
    """
    traces = list(traces)
    if pairs is None:
        pairs = default_pairs(len(dataset.frame_ids), len(traces))
    work = list(enumerate(pairs))
    if not work:
        return ExperimentResult([], spec.defense is not None)
    jobs = max(1, int(jobs))
    if jobs == 1:
        rows = _run_chunk((sensor, dataset, traces, spec, work, dumps))
    else:
        size = math.ceil(len(work) / jobs)
        chunks = [work[i:i + size] for i in range(0, len(work), size)]
        with ProcessPoolExecutor(jobs) as ex:
            parts = ex.map(_run_chunk, [(sensor, dataset, traces, spec, c, dumps) for c in chunks])
            rows = [r for p in parts for r in p]
    rows.sort(key=lambda r: r.pair)
    for r in rows:
        if r.error:
            log.warning("pair %d (frame %s, trace %d) failed: %s", r.pair, r.frame_id, r.trace_id, r.error)
    return ExperimentResult(rows, spec.defense is not None)


# -------------------------------------------------------------- calibration


def calibration_scenes(sensor: SensorModel, dataset, traces: Sequence[AttackTrace],
                       capability: AttackCapability = AttackCapability(), seed: int = 0,
                       detector: ProxyDetectorConfig = ProxyDetectorConfig(), jitter: int = 1) -> tuple:
    """Valid and spoofed ``(cloud, boxes)`` scenes for fitting CARLO.

    Valid: every labeled vehicle plus ``jitter`` detector-like perturbed
    copies (IoU >= 0.7). Spoofed: one injected trace per frame, boxed both
    by its target box and by any proxy detection at the target.
    """
    rng = np.random.default_rng(seed)
    valid, spoofed = [], []
    rule = SuccessRule()
    for i, fid in enumerate(dataset.frame_ids):
        cloud = dataset.cloud(fid)
        boxes = [b for _, b in dataset.vehicles(fid)]
        boxes += [jitter_box(b, rng) for b in boxes for _ in range(jitter)]
        if boxes:
            valid.append((cloud, boxes))
        if not traces:
            continue
        tr = traces[int(rng.integers(len(traces)))]
        try:
            t = spoof_trace(sensor, tr, rng, capability)
            if len(t) == 0:
                continue
            rep = inject(cloud, sensor, t, capability)
        except LidarGuardError:
            continue
        sboxes = [rep.target_box]
        sboxes += [d.box for d in proxy_detect(rep.cloud, detector) if rule.located(d.box, rep.target_box)]
        spoofed.append((rep.cloud, sboxes))
    return valid, spoofed


def false_spoof_rate(sensor: SensorModel, dataset, config: CarloConfig) -> tuple:
    """``(flagged, judged)`` over the labeled vehicles of ``dataset``."""
    flagged = judged = 0
    for fid in dataset.frame_ids:
        boxes = [b for _, b in dataset.vehicles(fid)]
        for v in carlo_batch(sensor, dataset.cloud(fid), boxes, config):
            if v.error:
                continue
            judged += 1
            flagged += v.label == SPOOFED
    return flagged, judged


# ------------------------------------------------------- score fluctuation


def score_fluctuation(sensor: SensorModel, dataset, kind: str, seed: int = 0,
                      detector: ProxyDetectorConfig = ProxyDetectorConfig(), margin: float = 0.1,
                      azimuth_span: float = 20.0) -> np.ndarray:
    """Relative proxy-score change when an occluded / distant vehicle's
    points are moved, intact, to a front-near spot of the same frame.

    Capability limits do not apply here: the point set moves whole. Vehicles
    the detector misses at their original place are skipped.
    """
    rng = np.random.default_rng(seed)
    band = AttackCapability().target_distance
    unlimited = AttackCapability(max_points=10 ** 9, azimuth_window=360.0)
    out = []
    for cand in select_candidates(dataset, kind):
        cloud = dataset.cloud(cand.frame_id)
        dets = proxy_detect(cloud, detector)
        before = [d.score for d in dets
                  if math.hypot(*(d.box.center[:2] - cand.box.center[:2])) <= GT_MATCH_DISTANCE]
        if not before:
            continue
        try:
            tr = extract_vehicle_points(cloud, cand.box, margin, kind)
            t = place_front_near(tr, unlimited, float(rng.uniform(-azimuth_span, azimuth_span)),
                                 float(rng.uniform(*band)))
            t = calibrate_to_rays(sensor, t)
        except LidarGuardError:
            continue
        rest = cloud.subset(np.flatnonzero(~points_in_box(cloud.xyz, cand.box, margin)))
        rep = inject(rest, sensor, t, unlimited)
        after = target_score(proxy_detect(rep.cloud, detector), rep.target_box, SuccessRule())
        s0 = max(before)
        out.append(((0.0 if math.isnan(after) else after) - s0) / s0)
    return np.array(out)


# ------------------------------------------------------------------ exports


def _comment(buf, provenance: str):
    for line in provenance.splitlines():
        buf.write(f"# {line}\n")


def _f(v, fmt="{:.6f}"):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else fmt.format(v)


ROW_HEADER = ("pair", "frame_id", "trace_id", "n_points", "group", "azimuth_deg", "range_m",
              "score", "success", "score_defended", "success_defended", "n_detections", "n_flagged",
              "target_stage", "error")


def rows_csv(result: ExperimentResult, provenance: str = "") -> str:
    buf = io.StringIO()
    _comment(buf, provenance)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_HEADER)
    for r in result.rows:
        g = "" if r.error else "{}-{}".format(*size_group(r.n_points))
        w.writerow([r.pair, r.frame_id, r.trace_id, r.n_points, g, _f(r.azimuth, "{:.4f}"),
                    _f(r.range_m, "{:.4f}"), _f(r.score), int(r.success), _f(r.score_defended),
                    int(r.success_defended), r.n_detections, r.n_flagged, r.target_stage, r.error])
    return buf.getvalue()


def groups_csv(result: ExperimentResult, provenance: str = "") -> str:
    buf = io.StringIO()
    _comment(buf, provenance)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("group_lo", "group_hi", "count", "asr", "asr_defended"))
    if result.ok_rows:
        und = result.group_asr(False)
        dfd = result.group_asr(True)
        for g, (n, a) in und.items():
            w.writerow([g[0], g[1], n, f"{a:.6f}", f"{dfd[g][1]:.6f}"])
    return buf.getvalue()


def summary_dict(result: ExperimentResult) -> dict:
    out = {"label": result.label, "pairs": len(result.rows), "failed_pairs": len(result.errors),
           "defended": result.defended}
    if result.ok_rows:
        out["asr"] = result.asr(False)
        out["asr_defended"] = result.asr(True)
        try:
            out["a2sr"] = result.a2sr(False)
            out["a2sr_defended"] = result.a2sr(True)
        except MetricError:
            pass
    return out


def cdf_csv(columns: Dict[str, Sequence[float]], grid, provenance: str = "") -> str:
    """One ``x`` column plus the empirical CDF of every named sample set."""
    buf = io.StringIO()
    _comment(buf, provenance)
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(["x"] + [f"cdf_{n}" for n in names])
    tables = [ecdf_table(columns[n], grid) for n in names]
    for i, x in enumerate(np.asarray(grid, dtype=np.float64)):
        w.writerow([f"{x:.6f}"] + [_f(t[i][1]) for t in tables])
    return buf.getvalue()
