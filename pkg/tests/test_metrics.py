import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarguard.errors import MetricError
from lidarguard.geometry.box import Box3D
from lidarguard.geometry.iou import iou3d
from lidarguard.harness.metrics import (SuccessRule, a2sr, asr, average_precision, ecdf_table, gt_scores,
                                        judge_success, target_score)
from lidarguard.kitti import Detection

from oracles import a2sr_brute, ap_brute

TARGET = Box3D((6.5, 0.0, -0.95), (3.9, 1.6, 1.56), 0.0)


def test_asr():
    assert asr([True, False, True, True]) == 0.75
    with pytest.raises(MetricError):
        asr([])


def test_success_rule():
    near = Detection("0", TARGET.replace(center=(6.9, 0.3, -0.95), score=0.5))
    far = Detection("0", TARGET.replace(center=(9.0, 0.0, -0.95), score=0.9))
    weak = Detection("0", TARGET.replace(score=0.2))
    assert target_score([near, far, weak], TARGET) == 0.5
    assert judge_success([near], TARGET) and not judge_success([weak, far], TARGET)
    assert math.isnan(target_score([], TARGET))
    rule = SuccessRule(mode="iou", iou=0.5)
    assert judge_success([Detection("0", TARGET.replace(score=0.4))], TARGET, rule)
    with pytest.raises(ValueError):
        SuccessRule(mode="nope")


def test_a2sr_worked_cases():
    # every gt found at 0.9: all recall levels use t = 0.9
    assert a2sr([0.95, 0.5], [0.9, 0.9]) == pytest.approx(0.5)
    # half the gt missed: levels above 0.5 are unreachable and count 0
    assert a2sr([0.95, 0.95], [0.9, np.nan]) == pytest.approx(6 / 11)
    assert a2sr([np.nan], [np.nan]) == 0.0
    with pytest.raises(MetricError):
        a2sr([0.5], [])
    with pytest.raises(MetricError):
        a2sr([], [0.5])


scores = st.one_of(st.just(float("nan")), st.sampled_from([0.1, 0.2, 0.35, 0.5, 0.7, 0.9]),
                   st.floats(0.0, 1.0))


@given(st.lists(scores, min_size=1, max_size=12), st.lists(scores, min_size=1, max_size=12))
def test_a2sr_matches_oracle(att, gt):
    assert a2sr(att, gt) == pytest.approx(a2sr_brute(att, gt), abs=1e-12)


def _toy_frames(seed):
    rng = np.random.default_rng(seed)
    gts, dets = {}, []
    for f in range(5):
        fid = f"{f:06d}"
        gts[fid] = [Box3D((rng.uniform(5, 40), rng.uniform(-10, 10), -0.95), (3.9, 1.6, 1.56),
                          rng.uniform(-1, 1)) for _ in range(rng.integers(0, 4))]
        for g in gts[fid]:
            for _ in range(rng.integers(0, 3)):
                c = g.center + np.array([*rng.normal(0, 0.4, 2), 0.0])
                dets.append(Detection(fid, Box3D(c, g.dims, g.yaw + rng.normal(0, 0.1),
                                                 float(rng.choice([0.3, 0.5, 0.8, rng.uniform()])))))
        for _ in range(rng.integers(0, 2)):
            dets.append(Detection(fid, Box3D((rng.uniform(5, 40), rng.uniform(-10, 10), -0.95),
                                             (3.9, 1.6, 1.56), 0.0, float(rng.uniform()))))
    return dets, gts


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.7]))
def test_average_precision_matches_oracle(seed, thresh):
    dets, gts = _toy_frames(seed)
    if sum(map(len, gts.values())) == 0:
        with pytest.raises(MetricError):
            average_precision(dets, gts, thresh)
        return
    assert average_precision(dets, gts, thresh) == pytest.approx(ap_brute(dets, gts, iou3d, thresh), abs=1e-12)


def test_average_precision_perfect_and_empty():
    gts = {"0": [TARGET], "1": [TARGET.replace(center=(20, 5, -0.95))]}
    dets = [Detection(f, g.replace(score=0.9)) for f, bs in gts.items() for g in bs]
    assert average_precision(dets, gts) == pytest.approx(1.0)
    assert average_precision([], gts) == 0.0


def test_gt_scores_greedy():
    gts = {"0": [TARGET]}
    dets = {"0": [TARGET.replace(score=0.4), TARGET.replace(score=0.8)]}
    s = gt_scores(dets, gts)
    assert s.tolist() == [0.8]
    assert np.isnan(gt_scores({}, gts)).all()


def test_ecdf_table():
    assert ecdf_table([0.1, 0.2, 0.2, 0.9], [0.0, 0.2, 1.0]) == [(0.0, 0.0), (0.2, 0.75), (1.0, 1.0)]
    assert math.isnan(ecdf_table([], [0.5])[0][1])
