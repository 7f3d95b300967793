"""Attack success and detection quality metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from ..errors import MetricError
from ..geometry.box import Box3D
from ..geometry.iou import iou3d

RECALL_LEVELS = np.linspace(0.0, 1.0, 11)


@dataclass(frozen=True)
class SuccessRule:
    """A detection "is" the spoofed car if it clears ``score_threshold`` and
    lies within ``distance`` meters (BEV centers) of the target, or overlaps
    it by ``iou`` in ``iou`` mode."""

    mode: str = "distance"
    distance: float = 1.0
    iou: float = 0.7
    score_threshold: float = 0.3

    def __post_init__(self):
        if self.mode not in ("distance", "iou"):
            raise ValueError(f"mode must be 'distance' or 'iou', got {self.mode!r}")
        if not (self.distance > 0 and 0 < self.iou <= 1 and 0 <= self.score_threshold <= 1):
            raise ValueError("success rule thresholds out of range")

    def located(self, box: Box3D, target: Box3D) -> bool:
        if self.mode == "distance":
            return math.hypot(*(box.center[:2] - target.center[:2])) <= self.distance
        return iou3d(box, target) >= self.iou


def _box(d):
    return getattr(d, "box", d)


def target_score(detections, target_box: Box3D, rule: SuccessRule = SuccessRule()) -> float:
    """Best score among detections at the target location (NaN if none)."""
    best = math.nan
    for d in detections:
        b = _box(d)
        if rule.located(b, target_box) and (math.isnan(best) or b.score > best):
            best = b.score
    return best


def judge_success(detections, target_box: Box3D, rule: SuccessRule = SuccessRule()) -> bool:
    s = target_score(detections, target_box, rule)
    return bool(s >= rule.score_threshold)


def asr(flags) -> float:
    """Successes over samples."""
    flags = np.asarray(list(flags), dtype=bool)
    if len(flags) == 0:
        raise MetricError("attack success rate of an empty result set")
    return float(flags.mean())


def _rate_at(scores: np.ndarray, t: float) -> float:
    return float(np.count_nonzero(scores >= t) / len(scores)) if len(scores) else 0.0


def a2sr(attack_scores, gt_scores) -> float:
    """Attack success averaged over 11 recall levels.

    ``attack_scores[i]``: score of the detection at attack ``i``'s target
    (NaN when absent). ``gt_scores[j]``: score of the detection matched to
    ground-truth vehicle ``j`` (NaN when missed). For each recall level r the
    operating threshold is the highest observed score t with recall(t) >= r;
    levels no threshold reaches contribute 0.
    """
    att = np.asarray(attack_scores, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt_scores, dtype=np.float64).reshape(-1)
    if len(gt) == 0:
        raise MetricError("A2SR needs ground truth to measure recall")
    if len(att) == 0:
        raise MetricError("A2SR of an empty attack set")
    cand = np.unique(np.concatenate([att[np.isfinite(att)], gt[np.isfinite(gt)]]))
    if len(cand) == 0:
        return 0.0
    recall = np.array([_rate_at(gt, t) for t in cand])  # non-increasing in t
    total = 0.0
    for r in RECALL_LEVELS:
        ok = np.flatnonzero(recall >= r - 1e-12)
        if len(ok):
            total += _rate_at(att, cand[ok.max()])
    return total / len(RECALL_LEVELS)


def match_frame(dets: Sequence, gts: Sequence[Box3D], iou_thresh: float) -> tuple:
    """Greedy matching of one frame's detections (already score-sorted).

    Each detection takes the unmatched ground truth it overlaps most, if
    that overlap reaches ``iou_thresh``. Returns ``(tp flags, matched gt per
    detection or -1)``.
    """
    taken = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(dets), dtype=bool)
    which = np.full(len(dets), -1, dtype=np.int64)
    for i, d in enumerate(dets):
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou3d(_box(d), g)
            if v >= iou_thresh and v > best:
                best, best_j = v, j
        if best_j >= 0:
            taken[best_j] = True
            tp[i] = True
            which[i] = best_j
    return tp, which


def _sorted(dets: Sequence) -> list:
    idx = sorted(range(len(dets)), key=lambda i: (-_box(dets[i]).score, i))
    return [dets[i] for i in idx]


def gt_scores(detections_by_frame: Dict[str, list], groundtruth: Dict[str, List[Box3D]],
              iou_thresh: float = 0.7) -> np.ndarray:
    """Per ground-truth box, the score of its greedy match (NaN if none)."""
    out = []
    for fid in sorted(groundtruth):
        gts = groundtruth[fid]
        dets = _sorted(detections_by_frame.get(fid, []))
        s = np.full(len(gts), np.nan)
        _, which = match_frame(dets, gts, iou_thresh)
        for i, j in enumerate(which):
            if j >= 0:
                s[j] = _box(dets[i]).score
        out.append(s)
    return np.concatenate(out) if out else np.zeros(0)


def pr_curve(dump, groundtruth: Dict[str, List[Box3D]], iou_thresh: float = 0.7) -> tuple:
    """Precision and recall after each detection in global score order."""
    n_gt = sum(len(v) for v in groundtruth.values())
    if n_gt == 0:
        raise MetricError("average precision needs at least one ground-truth box")
    by_frame: Dict[str, list] = {}
    for k, d in enumerate(dump):
        by_frame.setdefault(d.frame_id, []).append((k, d))
    tp_of = {}
    for fid, items in by_frame.items():
        items.sort(key=lambda kd: (-kd[1].score, kd[0]))
        tp, _ = match_frame([d for _, d in items], groundtruth.get(fid, []), iou_thresh)
        for (k, _), t in zip(items, tp):
            tp_of[k] = bool(t)
    order = sorted(range(len(dump)), key=lambda k: (-dump[k].score, k))
    tp = np.array([tp_of[k] for k in order], dtype=np.float64)
    ctp = np.cumsum(tp)
    n = np.arange(1, len(tp) + 1)
    return ctp / n, ctp / n_gt


def average_precision(dump, groundtruth: Dict[str, List[Box3D]], iou_thresh: float = 0.7) -> float:
    """11-point interpolated AP with greedy per-frame matching.

    Matching runs per frame in score order; since frames do not interact this
    equals one global score-ordered pass.
    """
    prec, rec = pr_curve(dump, groundtruth, iou_thresh)
    if len(prec) == 0:
        return 0.0
    ap = 0.0
    for r in RECALL_LEVELS:
        m = rec >= r - 1e-12
        ap += float(prec[m].max()) if m.any() else 0.0
    return ap / len(RECALL_LEVELS)


def ecdf_table(samples, grid) -> list:
    """``(x, P(sample <= x))`` rows."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    grid = np.asarray(grid, dtype=np.float64)
    if len(s) == 0:
        return [(float(x), math.nan) for x in grid]
    return [(float(x), float(np.searchsorted(s, x, side="right") / len(s))) for x in grid]
