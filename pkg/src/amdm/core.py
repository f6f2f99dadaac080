"""The AMDM detector: metric registry, axis scores, adaptive thresholds and
joint Mahalanobis detection.

Typical use::

    handle = register_metrics(specs, AmdmConfig())
    for sample in samples:
        detection = handle.step(sample)

``handle.run(values)`` processes a whole ``(steps, metrics)`` array with the
same streaming state and returns a :class:`Trace`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from itertools import compress
from operator import itemgetter
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .numerics import NotReadyError, OnlineCovariance, chi_square_quantile


class Axis(str, Enum):
    CAPABILITY = "capability"
    ROBUSTNESS = "robustness"
    SAFETY = "safety"
    HUMAN = "human"
    ECONOMIC = "economic"


AXES: tuple[Axis, ...] = tuple(Axis)
N_AXES = len(AXES)
assert N_AXES == _kernels.JOINT_DIM


class Direction(str, Enum):
    HIGHER_IS_WORSE = "higher-is-worse"
    LOWER_IS_WORSE = "lower-is-worse"

    @property
    def sign(self) -> float:
        return 1.0 if self is Direction.HIGHER_IS_WORSE else -1.0


class MonitorError(ValueError):
    """Invalid input to a detector (unknown metric, bad step, bad value)."""


@dataclass(frozen=True)
class MetricSpec:
    name: str
    axis: Axis
    direction: Direction = Direction.HIGHER_IS_WORSE
    weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", Axis(self.axis))
        object.__setattr__(self, "direction", Direction(self.direction))
        if not self.name or not self.name.isidentifier():
            raise ValueError(f"metric name must be an identifier, got {self.name!r}")
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError(f"weight of {self.name!r} must be positive, got {self.weight}")


@dataclass(frozen=True)
class MetricSample:
    step: int
    values: Mapping[str, float]


class AxisScore(NamedTuple):
    axis: Axis
    score: float
    threshold: float
    score_std: float


class Detection(NamedTuple):
    """Outcome of one monitoring step.

    ``d_squared`` is ``None`` while the joint state is warming up (or for
    detectors with no joint statistic). ``attribution`` is only set on steps
    with a joint flag. ``score`` is the detector's continuous decision
    statistic, used for ROC construction.
    """

    step: int
    axis_flags: frozenset[Axis]
    joint_flag: bool
    d_squared: float | None
    joint_threshold: float
    attribution: Mapping[Axis, float] | None = None
    score: float = math.nan


@dataclass(frozen=True)
class AmdmConfig:
    """Detector hyperparameters.

    Attributes:
        lam: EWMA smoothing of the axis thresholds.
        window: Rolling window length for metric and axis-score statistics.
        k: Per-axis multiplier on the rolling std of the axis score.
        alpha: Joint false-alarm rate; the threshold is the chi-square
            ``1 - alpha`` quantile with one degree of freedom per axis.
        shrinkage: Weight of the diagonal target in the joint covariance.
        warmup: Joint updates folded in before joint decisions start.
        forgetting: Exponential weight of each new sample in the joint mean
            and covariance, once the count-weighted weight 1/n drops below it.
        epsilon: Ridge on the joint covariance diagonal.
        sigma_floor: Relative floor on z-score divisors.
    """

    lam: float = 0.25
    window: int = 80
    k: float = 3.0
    alpha: float = 0.01
    shrinkage: float = 0.1
    warmup: int = max(2 * N_AXES, 25)
    forgetting: float = 0.005
    epsilon: float = 1e-6
    sigma_floor: float = 1e-6

    def __post_init__(self) -> None:
        if not (0.0 < self.lam <= 1.0):
            raise ValueError(f"lam must lie in (0, 1], got {self.lam}")
        if int(self.window) != self.window or self.window < 2:
            raise ValueError(f"window must be an integer >= 2, got {self.window}")
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (0.0 <= self.shrinkage <= 1.0):
            raise ValueError(f"shrinkage must lie in [0, 1], got {self.shrinkage}")
        if int(self.warmup) != self.warmup or self.warmup < N_AXES + 1:
            raise ValueError(f"warmup must be an integer >= {N_AXES + 1}, got {self.warmup}")
        if not (0.0 < self.forgetting < 1.0):
            raise ValueError(f"forgetting must lie in (0, 1), got {self.forgetting}")
        if not (self.epsilon > 0 and self.sigma_floor > 0):
            raise ValueError("epsilon and sigma_floor must be > 0")

    @cached_property
    def joint_threshold(self) -> float:
        return chi_square_quantile(N_AXES, 1.0 - self.alpha)

    def replace(self, **changes) -> AmdmConfig:
        return replace(self, **changes)

    def kernel_params(self, joint: bool = True) -> tuple[np.ndarray, np.ndarray]:
        pf = np.zeros(7)
        pf[_kernels.P_LAM] = self.lam
        pf[_kernels.P_K] = self.k
        pf[_kernels.P_THRESHOLD] = self.joint_threshold
        pf[_kernels.P_BETA] = self.forgetting
        pf[_kernels.P_GAMMA] = self.shrinkage
        pf[_kernels.P_EPS] = self.epsilon
        pf[_kernels.P_FLOOR] = self.sigma_floor
        pi = np.zeros(3, dtype=np.int64)
        pi[_kernels.P_WINDOW] = self.window
        pi[_kernels.P_WARMUP] = self.warmup
        pi[_kernels.P_USE_JOINT] = int(joint)
        return pf, pi


class MetricRegistry:
    """Ordered, validated metric specs with precomputed aggregation weights."""

    def __init__(self, specs: Iterable[MetricSpec]) -> None:
        specs = tuple(specs)
        if not specs:
            raise ValueError("at least one metric is required")
        names = [s.name for s in specs]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate metric names: {dupes}")
        covered = {s.axis for s in specs}
        missing = [a.value for a in AXES if a not in covered]
        if missing:
            raise ValueError(f"axes without metrics: {missing}")
        self.specs = specs
        self.names = tuple(names)
        self.index = {n: i for i, n in enumerate(names)}
        self.axis_of = np.array([AXES.index(s.axis) for s in specs], dtype=np.int64)
        totals = np.zeros(N_AXES)
        for s, j in zip(specs, self.axis_of):
            totals[j] += s.weight
        self.coef = np.array(
            [s.direction.sign * s.weight / totals[j] for s, j in zip(specs, self.axis_of)]
        )

    def __len__(self) -> int:
        return len(self.specs)

    def metrics_of(self, axis: Axis) -> list[MetricSpec]:
        return [s for s in self.specs if s.axis == Axis(axis)]


def aggregate_axis(z: Mapping[str, float], specs: Sequence[MetricSpec], axis: Axis) -> float:
    """Weighted mean of direction-adjusted z-scores of one axis."""
    members = [s for s in specs if s.axis == Axis(axis)]
    if not members:
        raise ValueError(f"axis {Axis(axis).value!r} has no metrics")
    total = sum(s.weight for s in members)
    return sum(s.direction.sign * s.weight * z[s.name] for s in members) / total


def attribute(state: OnlineCovariance, s) -> dict[Axis, float]:
    """Share of D^2 carried by each axis.

    Terms r_A * (inv r)_A sum to D^2; negative terms are clamped to zero
    before renormalising.
    """
    terms = state.contributions(s)
    return _shares(terms)


def _shares(terms) -> dict[Axis, float]:
    clamped = [max(float(v), 0.0) for v in terms]
    total = sum(clamped)
    if total <= 0:
        return {a: 1.0 / N_AXES for a in AXES}
    return {a: v / total for a, v in zip(AXES, clamped)}


_COLS = _kernels.out_columns(N_AXES)


class Trace:
    """Per-step outputs of a detector over a block of samples.

    Backed by one packed float matrix written by the kernels; the named
    properties are views into it. ``alarm`` is the detector's overall
    decision (its joint flag) and ``score`` its continuous decision
    statistic.
    """

    def __init__(self, steps, joint_threshold: float, data: np.ndarray | None = None) -> None:
        self.steps = np.asarray(steps, dtype=np.int64)
        self.joint_threshold = float(joint_threshold)
        if data is None:
            data = np.empty((len(self.steps), _kernels.out_width(N_AXES)))
        self.data = data

    def __len__(self) -> int:
        return len(self.steps)

    axis_scores = property(lambda self: self.data[:, _COLS["axis_scores"]])
    thresholds = property(lambda self: self.data[:, _COLS["thresholds"]])
    score_std = property(lambda self: self.data[:, _COLS["score_std"]])
    contributions = property(lambda self: self.data[:, _COLS["contributions"]])
    d_squared = property(lambda self: self.data[:, _COLS["d_squared"]])
    score = property(lambda self: self.data[:, _COLS["score"]])

    @property
    def axis_flags(self) -> np.ndarray:
        return self.data[:, _COLS["axis_flags"]] != 0

    @property
    def alarm(self) -> np.ndarray:
        return self.data[:, _COLS["alarm"]] != 0

    def detection(self, i: int) -> Detection:
        row = self.data[i].tolist()
        a = N_AXES
        d2 = row[5 * a]
        joint = row[5 * a + 1] != 0.0
        attribution = None
        if joint and d2 == d2:
            attribution = _shares(row[4 * a:5 * a])
        return Detection(
            int(self.steps[i]),
            frozenset(compress(AXES, row[3 * a:4 * a])),
            joint,
            None if d2 != d2 else d2,
            self.joint_threshold,
            attribution,
            row[5 * a + 2],
        )

    def axis_scores_at(self, i: int) -> tuple[AxisScore, ...]:
        """Per-axis score, threshold and rolling std; empty before warm-up."""
        if np.isnan(self.thresholds[i, 0]):
            return ()
        return tuple(
            AxisScore(ax, float(s), float(th), float(sd))
            for ax, s, th, sd in zip(
                AXES, self.axis_scores[i], self.thresholds[i], self.score_std[i]
            )
        )

    def detections(self) -> list[Detection]:
        return [self.detection(i) for i in range(len(self))]


class _SampleFeed:
    """Turns MetricSample mappings into value rows.

    Enforces increasing steps, rejects unknown names and non-finite values,
    and carries missing metrics forward for at most ``max_stale`` steps.
    """

    def __init__(self, registry: MetricRegistry, max_stale: int) -> None:
        self.registry = registry
        self.max_stale = max_stale
        self.last_step: int | None = None
        self.last_values = np.full(len(registry), np.nan)
        self.stale_run = np.zeros(len(registry), dtype=np.int64)
        self.stale_total = np.zeros(len(registry), dtype=np.int64)
        self._any_stale = False
        self._pick = itemgetter(*registry.names)

    def _check_step(self, step: int) -> None:
        if step < 0:
            raise MonitorError(f"step must be non-negative, got {step}")
        if self.last_step is not None and step <= self.last_step:
            raise MonitorError(f"step {step} does not exceed previous step {self.last_step}")

    def _check_finite(self, x: np.ndarray, step: int) -> None:
        if not np.isfinite(x).all():
            i = int(np.flatnonzero(~np.isfinite(x))[0])
            raise MonitorError(
                f"non-finite value {x[i]!r} for metric {self.registry.names[i]!r} at step {step}"
            )

    def row(self, sample: MetricSample) -> np.ndarray:
        step = int(sample.step)
        self._check_step(step)
        values = sample.values
        if len(values) == len(self.registry.names):
            try:
                vals = self._pick(values)
            except KeyError:
                vals = None
            if vals is not None:
                if len(self.registry.names) == 1:
                    vals = (vals,)
                total = sum(vals)
                if total - total != 0.0:  # some value is inf or nan
                    self._check_finite(np.array(vals, dtype=float), step)
                x = np.array(vals, dtype=float)
                if self._any_stale:
                    self.stale_run.fill(0)
                    self._any_stale = False
                self.last_values = x
                self.last_step = step
                return x
        return self._slow_row(values, step)

    def _slow_row(self, values: Mapping[str, float], step: int) -> np.ndarray:
        unknown = [n for n in values if n not in self.registry.index]
        if unknown:
            raise MonitorError(f"unregistered metrics at step {step}: {sorted(unknown)}")
        x = self.last_values.copy()
        seen = np.zeros(len(self.registry), dtype=bool)
        for name, v in values.items():
            i = self.registry.index[name]
            x[i] = float(v)
            seen[i] = True
        self._check_finite(np.where(seen, x, 0.0), step)
        missing = ~seen
        never = missing & np.isnan(self.last_values)
        if never.any():
            names = [self.registry.names[i] for i in np.flatnonzero(never)]
            raise MonitorError(f"metrics {names} missing at step {step} with no prior value")
        self.stale_run[missing] += 1
        self._any_stale = True
        self.stale_total[missing] += 1
        self.stale_run[seen] = 0
        over = self.stale_run > self.max_stale
        if over.any():
            names = [self.registry.names[i] for i in np.flatnonzero(over)]
            raise MonitorError(
                f"metrics {names} missing for more than {self.max_stale} steps at step {step}"
            )
        self.last_values = x
        self.last_step = step
        return x

    def check_row(self, x: np.ndarray, step: int) -> None:
        if x.shape != (len(self.registry),):
            raise MonitorError(f"expected {len(self.registry)} values, got shape {x.shape}")
        self._check_step(step)
        self._check_finite(x, step)
        self.last_step = step
        self.last_values = x
        self.stale_run[:] = 0

    def check_block(self, values: np.ndarray, steps=None) -> np.ndarray:
        if values.ndim != 2 or values.shape[1] != len(self.registry):
            raise MonitorError(
                f"expected values of shape (n, {len(self.registry)}), got {values.shape}"
            )
        start = 0 if self.last_step is None else self.last_step + 1
        if steps is None:
            steps = np.arange(start, start + len(values), dtype=np.int64)
        steps = np.asarray(steps, dtype=np.int64)
        if steps.shape != (len(values),):
            raise MonitorError("steps must have one entry per row")
        if not len(steps):
            return steps
        if not np.isfinite(values).all():
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise MonitorError(
                f"non-finite value for metric {self.registry.names[c]!r} at step {steps[r]}"
            )
        if steps[0] < start or np.any(np.diff(steps) <= 0):
            raise MonitorError("steps must be non-negative and strictly increasing")
        self.last_step = int(steps[-1])
        self.last_values = values[-1].copy()
        self.stale_run[:] = 0
        return steps

    @property
    def staleness(self) -> dict[str, int]:
        return {n: int(c) for n, c in zip(self.registry.names, self.stale_total) if c}


class MonitorHandle:
    """Streaming AMDM state for one metric stream.

    With ``joint=False`` the joint path is skipped entirely and the overall
    alarm becomes "any axis flagged" (the EWMA-only baseline).
    """

    kind = "amdm"

    def __init__(
        self, registry: MetricRegistry, config: AmdmConfig | None = None, *, joint: bool = True
    ) -> None:
        self.registry = registry
        self.config = config or AmdmConfig()
        self.joint = joint
        self._pf, self._pi = self.config.kernel_params(joint)
        self.reset()

    def reset(self) -> None:
        m, a, w = len(self.registry), N_AXES, self.config.window
        self._feed = _SampleFeed(self.registry, max_stale=w)
        self._mbuf = np.zeros((w, m))
        self._mstat = np.zeros((3, m))
        self._sbuf = np.zeros((w, a))
        self._sstat = np.zeros((4, a))
        self._counters = np.zeros(2, dtype=np.int64)
        self._jmean = np.zeros(a)
        self._jmats = np.zeros((3, a, a))
        self._one = Trace(np.zeros(1), self.config.joint_threshold)
        self._one.data[:] = np.nan
        self._state = (
            self.registry.axis_of, self.registry.coef, self._pf, self._pi,
            self._mbuf, self._mstat, self._sbuf, self._sstat,
            self._jmean, self._jmats, self._counters,
        )

    @property
    def n_seen(self) -> int:
        return int(self._counters[_kernels.N_SEEN])

    def axis_scores(self) -> tuple[AxisScore, ...]:
        """Axis scores of the most recent single step."""
        return self._one.axis_scores_at(0)

    @property
    def staleness(self) -> dict[str, int]:
        """Carried-forward value counts per metric (only metrics with any)."""
        return self._feed.staleness

    @property
    def joint_state(self) -> OnlineCovariance:
        """Snapshot of the joint mean, covariance and inverse."""
        c = self.config
        state = OnlineCovariance(
            N_AXES, forgetting=c.forgetting, shrinkage=c.shrinkage,
            epsilon=c.epsilon, warmup=c.warmup,
        )
        state.count = int(self._counters[_kernels.N_JOINT])
        state.mean[:] = self._jmean
        state.raw[:] = self._jmats[_kernels.J_RAW]
        state.covariance[:] = self._jmats[_kernels.J_SHRUNK]
        state.inverse[:] = self._jmats[_kernels.J_INV]
        return state

    def _process(self, values: np.ndarray, out: Trace) -> None:
        _kernels.amdm_block(values, *self._state, out.data)

    def step_values(self, x: np.ndarray, step: int) -> Detection:
        """One streaming step on a value row ordered like the registry."""
        x = np.ascontiguousarray(x, dtype=float).reshape(1, -1)
        self._feed.check_row(x[0], step)
        out = self._one
        out.steps[0] = step
        self._process(x, out)
        return out.detection(0)

    def step(self, sample: MetricSample) -> Detection:
        x = self._feed.row(sample)
        out = self._one
        out.steps[0] = sample.step
        _kernels.amdm_block(x[None, :], *self._state, out.data)
        return out.detection(0)

    def run(self, values: np.ndarray, steps: np.ndarray | None = None) -> Trace:
        """Stream a ``(rows, metrics)`` block and return its trace."""
        values = np.ascontiguousarray(values, dtype=float)
        steps = self._feed.check_block(values, steps)
        out = Trace(steps, self.config.joint_threshold)
        self._process(values, out)
        return out


def register_metrics(
    specs: Iterable[MetricSpec], config: AmdmConfig | None = None
) -> MonitorHandle:
    """Validate ``specs`` and allocate per-metric windows, per-axis EWMAs and
    the five-dimensional joint state."""
    return MonitorHandle(MetricRegistry(specs), config)


__all__ = [
    "AXES",
    "N_AXES",
    "Axis",
    "AmdmConfig",
    "AxisScore",
    "Detection",
    "Direction",
    "MetricRegistry",
    "MetricSample",
    "MetricSpec",
    "MonitorError",
    "MonitorHandle",
    "NotReadyError",
    "Trace",
    "aggregate_axis",
    "attribute",
    "register_metrics",
]
