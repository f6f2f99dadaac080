"""Comparison detectors sharing the AMDM detector interface.

All detectors expose ``reset()``, ``step(sample) -> Detection`` and
``run(values, steps) -> Trace``; the overall decision of every detector is
its joint flag, so the evaluation harness treats them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from . import _kernels
from .core import (
    AXES,
    N_AXES,
    AmdmConfig,
    Detection,
    MetricRegistry,
    MetricSample,
    MonitorError,
    MonitorHandle,
    Trace,
    _SampleFeed,
)


class DetectorKind(str, Enum):
    STATIC = "static"
    EWMA_ONLY = "ewma-only"
    MAHALANOBIS_ONLY = "mahalanobis-only"
    AMDM = "amdm"


DETECTOR_KINDS: tuple[DetectorKind, ...] = tuple(DetectorKind)


@dataclass(frozen=True)
class StaticConfig:
    """Fixed per-metric (lower, upper) limits."""

    limits: Mapping[str, tuple[float, float]]

    def __post_init__(self) -> None:
        for name, (lo, hi) in self.limits.items():
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"limits for {name!r} must satisfy lower < upper, got {(lo, hi)}")

    @classmethod
    def from_quiet(
        cls, values: np.ndarray, names, n_sigma: float = 3.0
    ) -> StaticConfig:
        """mean +- n_sigma * std of each column of a quiet-period block."""
        values = np.asarray(values, dtype=float)
        mu = values.mean(axis=0)
        sd = values.std(axis=0)
        sd = np.maximum(sd, 1e-12 * (1.0 + np.abs(mu)))
        return cls({n: (float(m - n_sigma * s), float(m + n_sigma * s))
                    for n, m, s in zip(names, mu, sd)})


class StaticDetector:
    """Each metric checked independently against fixed limits.

    An axis is flagged when any of its metrics leaves its limits; the
    overall flag is "any axis flagged". The continuous score is the largest
    |x - centre| / half-width over metrics (above 1 means a violation).
    """

    kind = DetectorKind.STATIC

    def __init__(self, registry: MetricRegistry, config: StaticConfig) -> None:
        missing = [n for n in registry.names if n not in config.limits]
        if missing:
            raise ValueError(f"no static limits for metrics: {missing}")
        self.registry = registry
        self.config = config
        lims = np.array([config.limits[n] for n in registry.names], dtype=float)
        self.lower = lims[:, 0]
        self.upper = lims[:, 1]
        self.reset()

    def reset(self) -> None:
        self._feed = _SampleFeed(self.registry, max_stale=10**9)

    def _evaluate(self, values: np.ndarray, steps: np.ndarray) -> Trace:
        out = Trace(steps, math.nan)
        data = out.data
        for t in range(len(steps)):
            _kernels._reset_row(data, t, N_AXES)
        outside = (values < self.lower) | (values > self.upper)
        cols = _kernels.out_columns(N_AXES)
        flags = np.zeros((len(values), N_AXES), dtype=bool)
        for j in range(N_AXES):
            flags[:, j] = outside[:, self.registry.axis_of == j].any(axis=1)
        data[:, cols["axis_flags"]] = flags
        data[:, cols["alarm"]] = flags.any(axis=1)
        centre = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower)
        data[:, cols["score"]] = (np.abs(values - centre) / half).max(axis=1)
        return out

    def step(self, sample: MetricSample) -> Detection:
        x = self._feed.row(sample)
        return self._evaluate(x[None, :], np.array([sample.step])).detection(0)

    def run(self, values: np.ndarray, steps: np.ndarray | None = None) -> Trace:
        values = np.ascontiguousarray(values, dtype=float)
        steps = self._feed.check_block(values, steps)
        return self._evaluate(values, steps)


class EwmaOnlyDetector(MonitorHandle):
    """AMDM's per-axis path alone: no joint statistic, alarm = any axis flag."""

    kind = DetectorKind.EWMA_ONLY

    def __init__(self, registry: MetricRegistry, config: AmdmConfig | None = None) -> None:
        super().__init__(registry, config, joint=False)


class MahalanobisOnlyDetector:
    """Joint test on axis scores normalised with frozen quiet-period statistics.

    No rolling windows and no EWMA thresholds; the joint mean and covariance
    are still estimated online exactly as in AMDM. Axis flags are always
    empty.
    """

    kind = DetectorKind.MAHALANOBIS_ONLY

    def __init__(
        self,
        registry: MetricRegistry,
        center: np.ndarray,
        scale: np.ndarray,
        config: AmdmConfig | None = None,
    ) -> None:
        self.registry = registry
        self.config = config or AmdmConfig()
        self.center = np.asarray(center, dtype=float).copy()
        self.scale = np.asarray(scale, dtype=float).copy()
        if self.center.shape != (len(registry),) or self.scale.shape != (len(registry),):
            raise ValueError("center and scale need one entry per metric")
        if not np.all(self.scale > 0):
            raise ValueError("scale entries must be > 0")
        self._pf, self._pi = self.config.kernel_params(joint=True)
        self.reset()

    @classmethod
    def from_quiet(
        cls, registry: MetricRegistry, quiet: np.ndarray, config: AmdmConfig | None = None
    ) -> MahalanobisOnlyDetector:
        quiet = np.asarray(quiet, dtype=float)
        mu = quiet.mean(axis=0)
        sd = quiet.std(axis=0)
        cfg = config or AmdmConfig()
        sd = np.maximum(sd, cfg.sigma_floor * (1.0 + np.abs(mu)))
        return cls(registry, mu, sd, cfg)

    def reset(self) -> None:
        a = N_AXES
        self._feed = _SampleFeed(self.registry, max_stale=self.config.window)
        self._counters = np.zeros(2, dtype=np.int64)
        self._jmean = np.zeros(a)
        self._jmats = np.zeros((3, a, a))

    def _process(self, values: np.ndarray, out: Trace) -> None:
        _kernels.frozen_joint_block(
            values, self.registry.axis_of, self.registry.coef, self.center, self.scale,
            self._pf, self._pi, self._jmean, self._jmats, self._counters, out.data,
        )

    def step(self, sample: MetricSample) -> Detection:
        x = self._feed.row(sample)
        out = Trace(np.array([sample.step]), self.config.joint_threshold)
        self._process(x[None, :], out)
        return out.detection(0)

    def run(self, values: np.ndarray, steps: np.ndarray | None = None) -> Trace:
        values = np.ascontiguousarray(values, dtype=float)
        steps = self._feed.check_block(values, steps)
        out = Trace(steps, self.config.joint_threshold)
        self._process(values, out)
        return out


def static_step(detector: StaticDetector, sample: MetricSample) -> Detection:
    return detector.step(sample)


def ewma_only_step(detector: EwmaOnlyDetector, sample: MetricSample) -> Detection:
    return detector.step(sample)


def mahalanobis_only_step(detector: MahalanobisOnlyDetector, sample: MetricSample) -> Detection:
    return detector.step(sample)


def build_detector(
    kind: DetectorKind | str,
    registry: MetricRegistry,
    config: AmdmConfig | None = None,
    quiet: np.ndarray | None = None,
    *,
    static_sigma: float = 3.0,
):
    """Construct a detector; static and Mahalanobis-only need a quiet block."""
    kind = DetectorKind(kind)
    config = config or AmdmConfig()
    if kind is DetectorKind.AMDM:
        return MonitorHandle(registry, config)
    if kind is DetectorKind.EWMA_ONLY:
        return EwmaOnlyDetector(registry, config)
    if quiet is None:
        raise MonitorError(f"detector {kind.value!r} needs quiet-period data")
    if kind is DetectorKind.STATIC:
        limits = StaticConfig.from_quiet(quiet, registry.names, static_sigma)
        return StaticDetector(registry, limits)
    return MahalanobisOnlyDetector.from_quiet(registry, quiet, config)


__all__ = [
    "AXES",
    "DETECTOR_KINDS",
    "DetectorKind",
    "EwmaOnlyDetector",
    "MahalanobisOnlyDetector",
    "StaticConfig",
    "StaticDetector",
    "build_detector",
    "ewma_only_step",
    "mahalanobis_only_step",
    "static_step",
]
