"""Nonlinear blind source separation from local velocity statistics.

Measurements are binned in state space; in each bin the second- and
fourth-order correlations of the measurement velocity define a local frame
that is unique up to a signed permutation. Expressing velocities in that
frame gives weights that do not depend on the sensors. Groups of
uncorrelated weight components define a coordinate map, and the data are
separable when the transformed components are statistically independent.
"""

from ._backend import BACKEND
from .binning import BinGrid, PhaseSamples, build_grid, estimate_velocity
from .config import PipelineConfig, SourceSpec, load_config
from .coordmap import CoordinateMap, build_map, evaluate_map, trace_streamline
from .errors import PhaseSepError
from .frames import FrameField, LocalFrame, align_frames, build_frame, build_frames
from .pipeline import SeparationOptions, SeparationResult, separate, subsystem_weights
from .separability import independence_stats, recovery_score, recurse, verdict_pipeline
from .signal_io import (MixingParams, TimeSeries, generate_sources, load_series, mix_sources,
                        pca_normalize, store_series)
from .weights import (Partition, WeightSeries, compute_weights, enumerate_partitions,
                      match_signed_permutation, weight_correlation)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BinGrid", "CoordinateMap", "FrameField", "LocalFrame", "MixingParams",
    "Partition", "PhaseSamples", "PhaseSepError", "PipelineConfig", "SeparationOptions",
    "SeparationResult", "SourceSpec", "TimeSeries", "WeightSeries", "align_frames",
    "build_frame", "build_frames", "build_grid", "build_map", "compute_weights",
    "enumerate_partitions", "estimate_velocity", "evaluate_map", "generate_sources",
    "independence_stats", "load_config", "load_series", "match_signed_permutation",
    "mix_sources", "pca_normalize", "recovery_score", "recurse", "separate",
    "store_series", "subsystem_weights", "trace_streamline", "verdict_pipeline",
    "weight_correlation",
]
