"""Entropy-driven unsupervised keypoint discovery for short videos."""
from .diffengine import GradientReport, PairObjective, finite_diff_check, gradcheck
from .discoverer import DiscoveryConfig, Trajectory, discover, read_trajectory
from .entropy import (HistogramSpec, conditional_entropy, fano_bound, joint_entropy, load_emap,
                      mutual_information, save_emap, spatial_entropy)
from .geometry import HeatmapParams, KeypointState, aggregate_mask, gaussian_field, heatmap, soft_argmax
from .image_io import load_ppm, load_video, make_frame, preprocess, save_ppm
from .losses import LossBreakdown, LossWeights
from .metrics import MetricsReport, evaluate
from .synth import ObjectSpec, SceneSpec, preset, render

__version__ = "0.1.0"

__all__ = [
    "GradientReport", "PairObjective", "finite_diff_check", "gradcheck",
    "DiscoveryConfig", "Trajectory", "discover", "read_trajectory",
    "HistogramSpec", "conditional_entropy", "fano_bound", "joint_entropy", "load_emap",
    "mutual_information", "save_emap", "spatial_entropy",
    "HeatmapParams", "KeypointState", "aggregate_mask", "gaussian_field", "heatmap", "soft_argmax",
    "load_ppm", "load_video", "make_frame", "preprocess", "save_ppm",
    "LossBreakdown", "LossWeights", "MetricsReport", "evaluate",
    "ObjectSpec", "SceneSpec", "preset", "render",
]
