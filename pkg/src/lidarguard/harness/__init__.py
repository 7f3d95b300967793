"""Experiment harness: proxy detector, metrics, synthetic data, campaigns."""
from .campaign import (CampaignSpec, ExperimentResult, PairResult, calibration_scenes, false_spoof_rate,
                       run_campaign, score_fluctuation, size_group)
from .detector import ProxyDetectorConfig, proxy_detect
from .metrics import SuccessRule, a2sr, asr, average_precision, judge_success, target_score
from .synth import SynthConfig, SyntheticDataset, synth_frame

__all__ = [
    "CampaignSpec", "ExperimentResult", "PairResult", "calibration_scenes", "false_spoof_rate",
    "run_campaign", "score_fluctuation", "size_group", "ProxyDetectorConfig", "proxy_detect",
    "SuccessRule", "a2sr", "asr", "average_precision", "judge_success", "target_score",
    "SynthConfig", "SyntheticDataset", "synth_frame",
]
