"""Quiet-period calibration of the per-axis multiplier k and the joint
threshold.

The detector runs once over the quiet stream; the per-axis flag rule
``|S - theta| > k * sigma_S`` is then re-evaluated for every grid value of
k on the recorded scores, which yields exactly the flags a run with that k
would produce.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import AXES, N_AXES, AmdmConfig, MetricRegistry, MonitorHandle
from .numerics import chi_square_quantile
from .simulator import LabeledStream

K_GRID: tuple[float, ...] = tuple(1.5 + 0.25 * i for i in range(15))
MIN_QUIET_WINDOWS = 10


class CalibrationError(ValueError):
    """The quiet stream or the targets cannot produce a calibration."""


class UnreachableTargetError(CalibrationError):
    """No grid value of k meets the per-axis false-positive target."""


@dataclass(frozen=True)
class CalibrationReport:
    """Outcome of a calibration run.

    Attributes:
        recommended_k: Smallest grid k whose per-axis FPR meets the target
            on every axis.
        alpha: Joint false-alarm target.
        joint_threshold: Chi-square ``1 - alpha`` quantile with one degree
            of freedom per axis.
        axis_fpr: Per-axis flag rate at ``recommended_k``.
        joint_fpr: Joint flag rate over the quiet stream.
        quiet_length: Steps in the quiet stream.
        evaluated_steps: Steps on which axis flags were possible.
        target_axis_fpr: The requested per-axis rate.
        grid: ``(k, worst per-axis FPR)`` for every grid value.
    """

    recommended_k: float
    alpha: float
    joint_threshold: float
    axis_fpr: dict[str, float]
    joint_fpr: float
    quiet_length: int
    evaluated_steps: int
    target_axis_fpr: float
    grid: tuple[tuple[float, float], ...] = field(default=())

    def to_json(self) -> str:
        d = asdict(self)
        d["grid"] = [list(p) for p in self.grid]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> CalibrationReport:
        d = json.loads(text)
        d["grid"] = tuple(tuple(p) for p in d["grid"])
        return cls(**d)


def axis_flag_rates(
    scores: np.ndarray, thresholds: np.ndarray, score_std: np.ndarray, k: float
) -> np.ndarray:
    """Per-axis fraction of steps with ``|S - theta| > k * sigma_S``."""
    flags = np.abs(scores - thresholds) > k * score_std
    return flags.mean(axis=0)


def calibrate(
    stream: LabeledStream | np.ndarray,
    registry: MetricRegistry | None = None,
    config: AmdmConfig | None = None,
    *,
    target_axis_fpr: float = 0.001,
    alpha: float | None = None,
    grid: Sequence[float] = K_GRID,
) -> CalibrationReport:
    """Pick k for a per-axis false-positive target on a quiet stream.

    Args:
        stream: A labelled stream with no anomalies, or a raw
            ``(steps, metrics)`` array (then ``registry`` is required).
        registry: Metric registry; defaults to the stream's profile.
        config: Detector configuration; its ``k`` is ignored.
        target_axis_fpr: Largest acceptable per-axis flag rate, in (0, 1).
        alpha: Joint false-alarm target; defaults to ``config.alpha``.
        grid: Candidate k values.

    Raises:
        CalibrationError: Stream too short, contains anomalies, or a target
            is out of range.
        UnreachableTargetError: Even the largest grid k exceeds the target.
    """
    config = config or AmdmConfig()
    alpha = config.alpha if alpha is None else float(alpha)
    if not (0.0 < alpha < 1.0):
        raise CalibrationError(f"alpha must lie in (0, 1), got {alpha}")
    if isinstance(stream, LabeledStream):
        if any(label is not None for label in stream.truth):
            raise CalibrationError("quiet stream contains labelled anomalies")
        registry = registry or stream.profile.registry()
        values = stream.values
    else:
        if registry is None:
            raise CalibrationError("a registry is required for raw value arrays")
        values = np.asarray(stream, dtype=float)
    n = len(values)
    w = config.window
    if n < MIN_QUIET_WINDOWS * w:
        raise CalibrationError(
            f"quiet period of {n} steps is shorter than {MIN_QUIET_WINDOWS} windows "
            f"({MIN_QUIET_WINDOWS * w})"
        )
    if not (0.0 <= target_axis_fpr < 1.0):
        raise CalibrationError(f"target per-axis FPR must lie in [0, 1), got {target_axis_fpr}")
    if target_axis_fpr == 0.0:
        raise UnreachableTargetError(
            "a zero per-axis false-positive rate cannot be certified from a finite quiet period"
        )
    grid = sorted(float(k) for k in grid)
    if not grid or grid[0] <= 0:
        raise CalibrationError("k grid must be non-empty and positive")

    cfg = config.replace(alpha=alpha)
    trace = MonitorHandle(registry, cfg).run(values)
    # axis flags are possible once both the metric and score windows are full
    live = slice(2 * w - 2, n)
    s = trace.axis_scores[live]
    th = trace.thresholds[live]
    sd = trace.score_std[live]
    d2 = trace.d_squared
    joint_live = ~np.isnan(d2)
    joint_fpr = float(trace.alarm[joint_live].mean()) if joint_live.any() else math.nan

    table = [(k, axis_flag_rates(s, th, sd, k)) for k in grid]
    chosen = next(((k, r) for k, r in table if r.max() <= target_axis_fpr), None)
    if chosen is None:
        k_max, r_max = table[-1]
        raise UnreachableTargetError(
            f"per-axis FPR target {target_axis_fpr} unreachable: at k={k_max} the worst axis "
            f"rate is {r_max.max():.6g}"
        )
    k, rates = chosen
    return CalibrationReport(
        recommended_k=k,
        alpha=alpha,
        joint_threshold=chi_square_quantile(N_AXES, 1.0 - alpha),
        axis_fpr={ax.value: float(r) for ax, r in zip(AXES, rates)},
        joint_fpr=joint_fpr,
        quiet_length=n,
        evaluated_steps=len(s),
        target_axis_fpr=float(target_axis_fpr),
        grid=tuple((kk, float(r.max())) for kk, r in table),
    )


__all__ = [
    "K_GRID",
    "CalibrationError",
    "CalibrationReport",
    "UnreachableTargetError",
    "axis_flag_rates",
    "calibrate",
]
