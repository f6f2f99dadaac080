"""Seeded synthetic telemetry for multi-agent workflows.

Every metric is an AR(1) process with Gaussian innovations around its
baseline mean, scaled to its baseline standard deviation. Anomalies are
additive perturbations on the metrics of the axes they affect; the noise is
drawn before and independently of any injection, so metrics on untouched
axes are bit-identical with and without an injection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .core import Axis, Direction, MetricRegistry, MetricSample, MetricSpec


class AnomalyKind(str, Enum):
    GOAL_DRIFT = "goal-drift"
    SAFETY_VIOLATION = "safety-violation"
    TRUST_SHOCK = "trust-shock"
    COST_SPIKE = "cost-spike"


ANOMALY_KINDS: tuple[AnomalyKind, ...] = tuple(AnomalyKind)

KIND_AXES: dict[AnomalyKind, frozenset[Axis]] = {
    AnomalyKind.GOAL_DRIFT: frozenset({Axis.CAPABILITY, Axis.ROBUSTNESS}),
    AnomalyKind.SAFETY_VIOLATION: frozenset({Axis.SAFETY}),
    AnomalyKind.TRUST_SHOCK: frozenset({Axis.HUMAN}),
    AnomalyKind.COST_SPIKE: frozenset({Axis.ECONOMIC}),
}

GRADUAL_KINDS = frozenset({AnomalyKind.GOAL_DRIFT})

PROFILE_NAMES = ("modernisation", "data-quality", "credit-memo")

DEFAULT_AR = 0.6


@dataclass(frozen=True)
class WorkflowProfile:
    name: str
    metrics: tuple[MetricSpec, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    ar: tuple[float, ...]
    common_share: float = 0.0
    common_ar: float = DEFAULT_AR
    wander_share: float = 0.0
    wander_ar: float = 0.995

    def __post_init__(self) -> None:
        object.__setattr__(self, "metrics", tuple(self.metrics))
        for attr in ("means", "stds", "ar"):
            object.__setattr__(self, attr, tuple(float(v) for v in getattr(self, attr)))
        m = len(self.metrics)
        if m != 15:
            raise ValueError(f"a profile has 15 metrics, got {m}")
        per_axis = {a: 0 for a in Axis}
        for spec in self.metrics:
            per_axis[spec.axis] += 1
        if any(c != 3 for c in per_axis.values()):
            raise ValueError(f"a profile has exactly 3 metrics per axis, got {per_axis}")
        if not (len(self.means) == len(self.stds) == len(self.ar) == m):
            raise ValueError("means, stds and ar need one entry per metric")
        if not all(math.isfinite(v) for v in self.means):
            raise ValueError("baseline means must be finite")
        if not all(s > 0 and math.isfinite(s) for s in self.stds):
            raise ValueError("baseline stds must be positive")
        if not all(0.0 <= r < 1.0 for r in self.ar + (self.common_ar, self.wander_ar)):
            raise ValueError("AR coefficients must lie in [0, 1)")
        if not (0.0 <= self.common_share and 0.0 <= self.wander_share
                and self.common_share + self.wander_share < 1.0):
            raise ValueError("common_share and wander_share must be >= 0 and sum below 1")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.metrics]

    def registry(self) -> MetricRegistry:
        return MetricRegistry(self.metrics)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "metrics": [
                {"name": s.name, "axis": s.axis.value, "direction": s.direction.value,
                 "weight": s.weight}
                for s in self.metrics
            ],
            "means": list(self.means),
            "stds": list(self.stds),
            "ar": list(self.ar),
            "common_share": self.common_share,
            "common_ar": self.common_ar,
            "wander_share": self.wander_share,
            "wander_ar": self.wander_ar,
        }

    @classmethod
    def from_dict(cls, d: dict) -> WorkflowProfile:
        return cls(
            name=d["name"],
            metrics=tuple(MetricSpec(**m) for m in d["metrics"]),
            means=d["means"],
            stds=d["stds"],
            ar=d["ar"],
            **{k: float(d[k]) for k in ("common_share", "common_ar", "wander_share", "wander_ar")
               if k in d},
        )


_HI = Direction.HIGHER_IS_WORSE
_LO = Direction.LOWER_IS_WORSE

# (name, axis, direction, mean, std) per profile
_PROFILE_TABLE: dict[str, list[tuple[str, Axis, Direction, float, float]]] = {
    "modernisation": [
        ("task_success_rate", Axis.CAPABILITY, _LO, 0.86, 0.03),
        ("test_pass_rate", Axis.CAPABILITY, _LO, 0.78, 0.04),
        ("plan_adherence", Axis.CAPABILITY, _LO, 0.90, 0.02),
        ("tool_error_rate", Axis.ROBUSTNESS, _HI, 0.05, 0.01),
        ("retry_rate", Axis.ROBUSTNESS, _HI, 0.12, 0.03),
        ("recovery_seconds", Axis.ROBUSTNESS, _HI, 14.0, 3.0),
        ("hallucination_rate", Axis.SAFETY, _HI, 0.03, 0.008),
        ("policy_violation_rate", Axis.SAFETY, _HI, 0.01, 0.003),
        ("unsafe_patch_rate", Axis.SAFETY, _HI, 0.02, 0.005),
        ("user_rating", Axis.HUMAN, _LO, 4.2, 0.25),
        ("escalation_rate", Axis.HUMAN, _HI, 0.06, 0.015),
        ("override_rate", Axis.HUMAN, _HI, 0.08, 0.02),
        ("tokens_per_task", Axis.ECONOMIC, _HI, 5200.0, 600.0),
        ("tool_calls_per_task", Axis.ECONOMIC, _HI, 18.0, 3.0),
        ("cost_per_task", Axis.ECONOMIC, _HI, 0.42, 0.05),
    ],
    "data-quality": [
        ("check_accuracy", Axis.CAPABILITY, _LO, 0.92, 0.02),
        ("schema_coverage", Axis.CAPABILITY, _LO, 0.88, 0.03),
        ("rule_recall", Axis.CAPABILITY, _LO, 0.81, 0.04),
        ("pipeline_failure_rate", Axis.ROBUSTNESS, _HI, 0.04, 0.01),
        ("timeout_rate", Axis.ROBUSTNESS, _HI, 0.03, 0.008),
        ("rerun_count", Axis.ROBUSTNESS, _HI, 1.5, 0.4),
        ("fabricated_issue_rate", Axis.SAFETY, _HI, 0.02, 0.006),
        ("pii_exposure_rate", Axis.SAFETY, _HI, 0.005, 0.0015),
        ("unsafe_query_rate", Axis.SAFETY, _HI, 0.01, 0.003),
        ("analyst_agreement", Axis.HUMAN, _LO, 0.85, 0.04),
        ("ticket_reopen_rate", Axis.HUMAN, _HI, 0.07, 0.02),
        ("feedback_score", Axis.HUMAN, _LO, 3.9, 0.3),
        ("compute_seconds", Axis.ECONOMIC, _HI, 95.0, 12.0),
        ("queries_per_run", Axis.ECONOMIC, _HI, 40.0, 6.0),
        ("cost_per_run", Axis.ECONOMIC, _HI, 1.10, 0.12),
    ],
    "credit-memo": [
        ("memo_completeness", Axis.CAPABILITY, _LO, 0.89, 0.03),
        ("figure_accuracy", Axis.CAPABILITY, _LO, 0.95, 0.015),
        ("rubric_score", Axis.CAPABILITY, _LO, 0.80, 0.04),
        ("extraction_error_rate", Axis.ROBUSTNESS, _HI, 0.04, 0.01),
        ("retry_rate", Axis.ROBUSTNESS, _HI, 0.09, 0.02),
        ("latency_seconds", Axis.ROBUSTNESS, _HI, 38.0, 6.0),
        ("unsupported_claim_rate", Axis.SAFETY, _HI, 0.025, 0.007),
        ("compliance_flag_rate", Axis.SAFETY, _HI, 0.015, 0.004),
        ("toxicity_score", Axis.SAFETY, _HI, 0.01, 0.003),
        ("reviewer_rating", Axis.HUMAN, _LO, 4.0, 0.3),
        ("revision_requests", Axis.HUMAN, _HI, 1.2, 0.3),
        ("escalation_rate", Axis.HUMAN, _HI, 0.05, 0.015),
        ("tokens_per_memo", Axis.ECONOMIC, _HI, 9000.0, 1100.0),
        ("tool_calls_per_memo", Axis.ECONOMIC, _HI, 26.0, 4.0),
        ("cost_per_memo", Axis.ECONOMIC, _HI, 0.75, 0.09),
    ],
}


def profile(name: str = "modernisation", ar: float = DEFAULT_AR, **noise) -> WorkflowProfile:
    """One of the built-in workflow profiles."""
    if name not in _PROFILE_TABLE:
        raise ValueError(f"unknown profile {name!r}; choose from {PROFILE_NAMES}")
    rows = _PROFILE_TABLE[name]
    return WorkflowProfile(
        name=name,
        metrics=tuple(MetricSpec(n, a, d) for n, a, d, _, _ in rows),
        means=tuple(r[3] for r in rows),
        stds=tuple(r[4] for r in rows),
        ar=(ar,) * len(rows),
        **noise,
    )


@dataclass(frozen=True)
class AnomalyInjection:
    kind: AnomalyKind
    onset: int
    duration: int
    magnitude: float
    axes: frozenset[Axis] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        kind = AnomalyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        axes = KIND_AXES[kind] if self.axes is None else frozenset(Axis(a) for a in self.axes)
        if axes != KIND_AXES[kind]:
            raise ValueError(
                f"{kind.value} affects {sorted(a.value for a in KIND_AXES[kind])}, "
                f"got {sorted(a.value for a in axes)}"
            )
        object.__setattr__(self, "axes", axes)
        if int(self.onset) != self.onset or self.onset < 0:
            raise ValueError(f"onset must be a non-negative integer, got {self.onset}")
        if int(self.duration) != self.duration or self.duration < 1:
            raise ValueError(f"duration must be a positive integer, got {self.duration}")
        if not (self.magnitude > 0 and math.isfinite(self.magnitude)):
            raise ValueError(f"magnitude must be positive, got {self.magnitude}")

    @property
    def end(self) -> int:
        return self.onset + self.duration

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "onset": self.onset,
                "duration": self.duration, "magnitude": self.magnitude}

    @classmethod
    def from_dict(cls, d: dict) -> AnomalyInjection:
        return cls(AnomalyKind(d["kind"]), int(d["onset"]), int(d["duration"]),
                   float(d["magnitude"]))


def _shape(kind: AnomalyKind, t, onset: int, duration: int):
    """Unit-magnitude time profile of an injection."""
    t = np.asarray(t)
    inside = (t >= onset) & (t < onset + duration)
    if kind is AnomalyKind.GOAL_DRIFT:
        ramp = (t - onset) / (duration - 1) if duration > 1 else np.ones_like(t, dtype=float)
        return np.where(inside, ramp, 0.0)
    return inside.astype(float)


def inject(
    kind: AnomalyKind | str,
    profile: WorkflowProfile,
    t: int,
    onset: int,
    duration: int,
    magnitude: float,
) -> np.ndarray:
    """Additive per-metric perturbation of one injection at step ``t``.

    The perturbation pushes affected metrics in their "worse" direction by
    ``magnitude`` baseline standard deviations times the kind's time
    profile (a 0-to-1 ramp for goal drift, a constant step otherwise).
    Zero outside ``[onset, onset + duration)``.
    """
    kind = AnomalyKind(kind)
    return float(_shape(kind, t, onset, duration)) * _loading(kind, profile, magnitude)


def _loading(kind: AnomalyKind, profile: WorkflowProfile, magnitude: float) -> np.ndarray:
    axes = KIND_AXES[kind]
    return np.array([
        s.direction.sign * magnitude * sd if s.axis in axes else 0.0
        for s, sd in zip(profile.metrics, profile.stds)
    ])


@dataclass
class LabeledStream:
    """A generated stream: values ``(length, metrics)`` plus per-step truth.

    ``truth[t]`` is the anomaly kind active at step ``t`` or ``None``.
    """

    profile: WorkflowProfile
    values: np.ndarray
    truth: list[AnomalyKind | None]
    injections: tuple[AnomalyInjection, ...]
    seed: int
    step_seconds: float = 0.5

    def __post_init__(self) -> None:
        if len(self.truth) != len(self.values):
            raise ValueError("truth and values must have the same length")
        if not (self.step_seconds > 0):
            raise ValueError("step_seconds must be positive")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(len(self.values))

    @property
    def labels(self) -> np.ndarray:
        return np.array([k is not None for k in self.truth])

    @property
    def samples(self) -> list[MetricSample]:
        names = self.profile.names
        rows = self.values.tolist()
        return [MetricSample(t, dict(zip(names, row))) for t, row in enumerate(rows)]


def ar1_noise(rng: np.random.Generator, length: int, ar: Sequence[float]) -> np.ndarray:
    """Unit-variance stationary AR(1) paths, one column per coefficient."""
    ar = np.asarray(ar, dtype=float)
    eta = rng.standard_normal((length, len(ar)))
    out = np.empty_like(eta)
    for j, rho in enumerate(ar):
        if rho == 0.0:
            out[:, j] = eta[:, j]
            continue
        out[0, j] = eta[0, j]
        if length > 1:
            out[1:, j], _ = lfilter(
                [math.sqrt(1.0 - rho * rho)], [1.0, -rho], eta[1:, j], zi=[rho * eta[0, j]]
            )
    return out


def unit_noise(profile: WorkflowProfile, length: int, seed: int) -> np.ndarray:
    """Zero-mean unit-variance noise per metric: own AR(1) path plus the
    shared workload factor and the slow wander, mixed by variance share."""
    rng = np.random.default_rng(seed)
    own = ar1_noise(rng, length, profile.ar)
    c, v = profile.common_share, profile.wander_share
    if c == 0.0 and v == 0.0:
        return own
    common = ar1_noise(rng, length, (profile.common_ar,))
    wander = ar1_noise(rng, length, (profile.wander_ar,) * len(profile.metrics))
    signs = np.array([s.direction.sign for s in profile.metrics])
    return (math.sqrt(1.0 - c - v) * own + math.sqrt(c) * common * signs
            + math.sqrt(v) * wander)


def validate_injections(injections: Sequence[AnomalyInjection], length: int) -> None:
    ordered = sorted(injections, key=lambda j: j.onset)
    for inj in ordered:
        if inj.end > length:
            raise ValueError(
                f"{inj.kind.value} injection ends at step {inj.end} beyond run length {length}"
            )
    for a, b in zip(ordered, ordered[1:]):
        if b.onset < a.end:
            raise ValueError(
                f"injections overlap: {a.kind.value}@[{a.onset},{a.end}) "
                f"and {b.kind.value}@[{b.onset},{b.end})"
            )


def generate(
    profile: WorkflowProfile,
    length: int,
    injections: Sequence[AnomalyInjection] = (),
    seed: int = 1337,
    step_seconds: float = 0.5,
) -> LabeledStream:
    """Simulate ``length`` steps of ``profile`` with the given injections."""
    if int(length) != length or length < 1:
        raise ValueError(f"length must be a positive integer, got {length}")
    injections = tuple(injections)
    validate_injections(injections, length)
    noise = unit_noise(profile, length, seed)
    values = np.asarray(profile.means) + noise * np.asarray(profile.stds)
    truth: list[AnomalyKind | None] = [None] * length
    t = np.arange(length)
    for inj in injections:
        shape = _shape(inj.kind, t, inj.onset, inj.duration)
        values += shape[:, None] * _loading(inj.kind, profile, inj.magnitude)[None, :]
        for i in range(inj.onset, inj.end):
            truth[i] = inj.kind
    return LabeledStream(profile, values, truth, injections, int(seed), float(step_seconds))


__all__ = [
    "ANOMALY_KINDS",
    "AnomalyInjection",
    "AnomalyKind",
    "GRADUAL_KINDS",
    "KIND_AXES",
    "LabeledStream",
    "PROFILE_NAMES",
    "WorkflowProfile",
    "ar1_noise",
    "generate",
    "inject",
    "profile",
    "validate_injections",
]
