"""Category-aware domain-specific approximation for object detection.

Trace-driven evaluation of image-size x proposal-count approximation
configs: accuracy metrics, oracle limit studies, static policies, the
AutoFocus dynamic controller, and a streaming simulator.
"""

from .config_lattice import ApproxConfig, ConfigGrid, enumerate_grid, nearest_config
from .costmodel import CostModel, builtin_cost_model, fps_lookup
from .kernels import BACKEND as KERNEL_BACKEND
from .metrics import (
    ApGridReport,
    BBox,
    Detection,
    GroundTruth,
    average_precision,
    category_map,
    iou,
    match_detections,
    normalized_ap_grid,
)
from .oracle import OracleReport, coverage_curve, limit_study, optimal_config, safe_set
from .policy import (
    AutoFocusModel,
    AutoFocusPolicy,
    StaticPolicy,
    autofocus_decide,
    extract_features,
    fit_regressor,
    fit_static,
    polynomial_expand,
    train_autofocus,
)
from .simulator import StreamResult, compare_report, simulate_stream
from .trace_store import (
    DetectionTrace,
    EmulatorParams,
    FrameRecord,
    emulate_detection,
    generate_synthetic,
    load_trace,
    save_trace,
)

__version__ = "0.1.0"

__all__ = [
    "ApGridReport", "ApproxConfig", "AutoFocusModel", "AutoFocusPolicy", "BBox", "ConfigGrid",
    "CostModel", "Detection", "DetectionTrace", "EmulatorParams", "FrameRecord", "GroundTruth",
    "KERNEL_BACKEND", "OracleReport", "StaticPolicy", "StreamResult", "autofocus_decide",
    "average_precision", "builtin_cost_model", "category_map", "compare_report",
    "coverage_curve", "emulate_detection", "enumerate_grid", "extract_features",
    "fit_regressor", "fit_static", "fps_lookup", "generate_synthetic", "iou", "limit_study",
    "load_trace", "match_detections", "nearest_config", "normalized_ap_grid",
    "optimal_config", "polynomial_expand", "safe_set", "save_trace", "simulate_stream",
    "train_autofocus",
]
