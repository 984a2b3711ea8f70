"""Deterministic simulator and control plane for mixed-resolution edge
offloading of transformer-backed video analytics."""

from .estimator import (
    Configuration,
    EncodeProfile,
    EstimatorBundle,
    InferenceDelayModels,
    NetEstimate,
    estimate_accuracy,
    estimate_latency,
    estimate_size,
    update_net_estimate,
)
from .grid import (
    DownsampleMask,
    GridGeometry,
    RegionType,
    RegionTypeMap,
    build_geometry,
    mask_from_types,
    mixed_pixel_count,
    token_count,
)
from .harness import (
    MetricsReport,
    Policy,
    compare_estimators,
    default_geometry,
    f1_match,
    profile_and_train,
    run_experiment,
    run_sweep,
)
from .mlp import MlpModel, load_model, mlp_forward, mlp_train, save_model
from .motion import analyze_motion, classify_regions, compute_relevance
from .netsim import NetworkTrace, generate_trace, load_trace, rtt_at, transmit
from .optimizer import (
    EvaluatedConfig,
    RuntimeState,
    enumerate_candidates,
    knee_point,
    pareto_frontier,
    select_configuration,
)
from .scene import PRESETS, FrameTruth, SceneConfig, generate_truth, ground_truth_boxes
from .serversim import (
    InferenceResult,
    PayloadKind,
    ServerProfile,
    default_profile,
    infer,
    true_accuracy,
    true_size,
)

__version__ = "0.1.0"
