"""Asymmetric co-tracking engine.

A fast budgeted nearest-neighbour classifier and a slow long-memory oracle
label candidate patches together, coupled by uncertainty sampling; the
target is localized as the score-weighted mean of positive candidates.
"""

from .core import Candidate, LabeledSet, Rect, TargetState, iou
from .cotracker import (CoTracker, FrameResult, TrackerConfig, VARIANTS,
                        label_candidates, localize, select_uncertain)
from .evaluate import SuccessCurve, aggregate, success_curve
from .features import FeatureProjector, color_histogram, pca_fit, project
from .knn import KnnStore
from .oracle import ArchiveNNOracle, OracleBase, ScriptedOracle
from .sampler import (RegionOfInterest, SamplerConfig, draw_candidates,
                      draw_global_background, make_roi)
from .simulator import FrameHandle, Scenario, builtin_scenarios

__version__ = "0.1.0"

__all__ = [
    "ArchiveNNOracle", "Candidate", "CoTracker", "FeatureProjector",
    "FrameHandle", "FrameResult", "KnnStore", "LabeledSet", "OracleBase",
    "Rect", "RegionOfInterest", "SamplerConfig", "Scenario", "ScriptedOracle",
    "SuccessCurve", "TargetState", "TrackerConfig", "VARIANTS", "aggregate",
    "builtin_scenarios", "color_histogram", "draw_candidates",
    "draw_global_background", "iou", "label_candidates", "localize",
    "make_roi", "pca_fit", "project", "select_uncertain", "success_curve",
]
