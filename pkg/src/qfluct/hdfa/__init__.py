"""Hierarchical discrete fluctuation auto-segmentation."""

from .hierarchy import (
    HierarchyConfig,
    RtnLevel,
    active_levels,
    analyse_level,
    hyperparameter_spread_uncertainty,
    run_hierarchy,
)
from .hmm import GaussianHmm2, fit_hmm2, viterbi_states
from .rates import SwitchingRates, censor_rate, correct_rate, switching_rates
from .segmentation import (
    PlateauWarning,
    Segment,
    reconstruct,
    segment_series,
    select_l_min,
    select_lambda_ll,
)
from .summary import SegmentSummary, summarize_segment

__all__ = [
    "GaussianHmm2", "HierarchyConfig", "PlateauWarning", "RtnLevel", "Segment",
    "SegmentSummary", "SwitchingRates", "active_levels", "analyse_level", "censor_rate",
    "correct_rate", "fit_hmm2", "hyperparameter_spread_uncertainty", "reconstruct",
    "run_hierarchy", "segment_series", "select_l_min", "select_lambda_ll",
    "summarize_segment", "switching_rates", "viterbi_states",
]
