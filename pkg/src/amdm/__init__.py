"""Adaptive multi-dimensional monitoring of agentic workflows.

Per-axis adaptive thresholds on aggregated metric z-scores, a joint
Mahalanobis test across axes, comparison detectors, a labelled telemetry
simulator, quiet-period calibration and a benchmark harness.
"""

from .baselines import (
    DETECTOR_KINDS,
    DetectorKind,
    EwmaOnlyDetector,
    MahalanobisOnlyDetector,
    StaticConfig,
    StaticDetector,
    build_detector,
)
from .calibration import (
    CalibrationError,
    CalibrationReport,
    UnreachableTargetError,
    calibrate,
)
from .config import ConfigError, RunConfig
from .core import (
    AXES,
    AmdmConfig,
    Axis,
    Detection,
    Direction,
    MetricRegistry,
    MetricSample,
    MetricSpec,
    MonitorError,
    MonitorHandle,
    Trace,
    register_metrics,
)
from .evaluation import (
    DEFAULT_SCENARIO,
    EvalConfig,
    RunResult,
    Scenario,
    ablation_sweep,
    measure_latency,
    pr_curve,
    roc_curve,
    run_benchmark,
    summarize,
)
from .numerics import OnlineCovariance, chi_square_cdf, chi_square_quantile
from .records import DecisionSummary, EventRecord, RecordError
from .simulator import (
    AnomalyInjection,
    AnomalyKind,
    LabeledStream,
    WorkflowProfile,
    generate,
    profile,
)

__version__ = "0.1.0"

__all__ = [
    "AXES",
    "DEFAULT_SCENARIO",
    "DETECTOR_KINDS",
    "AmdmConfig",
    "AnomalyInjection",
    "AnomalyKind",
    "Axis",
    "CalibrationError",
    "CalibrationReport",
    "ConfigError",
    "DecisionSummary",
    "Detection",
    "DetectorKind",
    "Direction",
    "EvalConfig",
    "EventRecord",
    "EwmaOnlyDetector",
    "LabeledStream",
    "MahalanobisOnlyDetector",
    "MetricRegistry",
    "MetricSample",
    "MetricSpec",
    "MonitorError",
    "MonitorHandle",
    "OnlineCovariance",
    "RecordError",
    "RunConfig",
    "RunResult",
    "Scenario",
    "StaticConfig",
    "StaticDetector",
    "Trace",
    "UnreachableTargetError",
    "WorkflowProfile",
    "ablation_sweep",
    "build_detector",
    "calibrate",
    "chi_square_cdf",
    "chi_square_quantile",
    "generate",
    "measure_latency",
    "pr_curve",
    "profile",
    "register_metrics",
    "roc_curve",
    "run_benchmark",
    "summarize",
]
