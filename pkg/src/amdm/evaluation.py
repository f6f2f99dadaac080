"""Benchmark harness: latency, false-positive rate, ROC/PR curves, ablations
and axis attribution across detectors, seeds and anomaly kinds.

Accounting conventions (shared by every detector):

* Steps before ``burn_in`` are ignored entirely.
* An injection occupies ``[onset, onset + duration)``. Its detection
  horizon is ``[onset, onset + grace_factor * duration)``; the first alarm in
  the horizon gives the latency, no alarm gives a miss.
* False positives are alarms on eligible steps outside every detection
  horizon; FPR is false positives over eligible negative steps.
* Curves use per-step continuous scores: positives are steps inside an
  injection window, negatives are the eligible negative steps above.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .baselines import DETECTOR_KINDS, DetectorKind, build_detector
from .core import AXES, AmdmConfig, Detection, Trace
from .simulator import (
    ANOMALY_KINDS,
    AnomalyInjection,
    AnomalyKind,
    LabeledStream,
    WorkflowProfile,
    generate,
    profile,
    validate_injections,
)

GRACE_FACTOR = 3
DEFAULT_SEEDS = tuple(range(1337, 1347))
QUIET_SEED_OFFSET = 100_000


@dataclass(frozen=True)
class Scenario:
    """A named stream layout: length plus its injections in time order.

    Detection horizons must not reach the next injection's onset, so every
    alarm is attributable to at most one injection.
    """

    name: str
    length: int
    injections: tuple[AnomalyInjection, ...]

    def __post_init__(self) -> None:
        if int(self.length) != self.length or self.length < 1:
            raise ValueError(f"{self.name}: length must be a positive integer, got {self.length}")
        injections = tuple(sorted(self.injections, key=lambda j: j.onset))
        object.__setattr__(self, "injections", injections)
        validate_injections(injections, self.length)
        for a, b in zip(injections, injections[1:] + (None,)):
            end = a.onset + GRACE_FACTOR * a.duration
            limit = self.length if b is None else b.onset
            if end > limit:
                raise ValueError(
                    f"{self.name}: detection horizon of {a.kind.value} ends at {end}, "
                    f"past {limit}"
                )

    def to_dict(self) -> dict:
        return {"name": self.name, "length": self.length,
                "injections": [j.to_dict() for j in self.injections]}

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        return cls(str(d["name"]), int(d["length"]),
                   tuple(AnomalyInjection.from_dict(j) for j in d["injections"]))


DEFAULT_SCENARIO = Scenario("mixed", 2800, (
    AnomalyInjection(AnomalyKind.GOAL_DRIFT, 600, 100, 5.0),
    AnomalyInjection(AnomalyKind.SAFETY_VIOLATION, 1300, 40, 3.0),
    AnomalyInjection(AnomalyKind.TRUST_SHOCK, 1800, 40, 3.0),
    AnomalyInjection(AnomalyKind.COST_SPIKE, 2300, 40, 3.0),
))


@dataclass(frozen=True)
class EvalConfig:
    """Everything that determines a benchmark run."""

    profile: WorkflowProfile = field(default_factory=profile)
    amdm: AmdmConfig = field(default_factory=AmdmConfig)
    scenarios: tuple[Scenario, ...] = (DEFAULT_SCENARIO,)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    detectors: tuple[DetectorKind, ...] = DETECTOR_KINDS
    quiet_length: int = 2000
    step_seconds: float = 0.5
    static_sigma: float = 3.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "detectors", tuple(DetectorKind(d) for d in self.detectors))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.detectors:
            raise ValueError("at least one detector is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.quiet_length < 10 * self.amdm.window:
            raise ValueError("quiet period must cover at least 10 windows")
        for sc in self.scenarios:
            for inj in sc.injections:
                if inj.onset < self.burn_in:
                    raise ValueError(
                        f"{sc.name}: {inj.kind.value} onset {inj.onset} precedes burn-in "
                        f"{self.burn_in}"
                    )

    @property
    def burn_in(self) -> int:
        return 2 * self.amdm.window


@dataclass
class RunResult:
    """Outcome of one detector on one seeded scenario stream.

    ``latency`` is in seconds, ``None`` for a miss. ``scores`` and
    ``labels`` cover only curve-eligible steps (positives inside the
    injection window, negatives outside every detection horizon).
    """

    detector: DetectorKind
    anomaly: AnomalyKind | None
    seed: int
    latency: float | None
    false_positives: int
    negatives: int
    horizon: float
    scores: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    attribution: dict | None = field(default=None, repr=False)

    @property
    def fpr(self) -> float:
        return self.false_positives / self.negatives if self.negatives else math.nan

    @property
    def detected(self) -> bool:
        return self.latency is not None

    @property
    def censored_latency(self) -> float:
        """Latency with a miss counted as the full detection horizon."""
        return self.horizon if self.latency is None else self.latency


# ---------------------------------------------------------------------------
# per-run measurements


def _labels(truth: Sequence) -> list:
    return [None if (lab is None or lab is False or lab == 0) else lab for lab in truth]


def injection_windows(truth: Sequence) -> list[tuple[int, int, object]]:
    """Maximal runs of identical non-empty labels as ``(start, end, label)``.

    ``False``/``0`` count as empty, so boolean label arrays work too.
    """
    truth = _labels(truth)
    out = []
    start = None
    for t, lab in enumerate(list(truth) + [None]):
        if start is not None and lab != truth[start]:
            out.append((start, t, truth[start]))
            start = None
        if start is None and lab is not None and t < len(truth):
            start = t
    return out


def _flags(detections) -> np.ndarray:
    if isinstance(detections, Trace):
        return detections.alarm
    if len(detections) and isinstance(detections[0], Detection):
        return np.array([d.joint_flag for d in detections], dtype=bool)
    return np.asarray(detections, dtype=bool)


def measure_latency(
    detections,
    truth: Sequence,
    step_seconds: float = 0.5,
    grace_factor: int = GRACE_FACTOR,
) -> list[float | None]:
    """Per-injection latency in seconds (``None`` for a miss).

    ``detections`` is a list of :class:`Detection`, a :class:`Trace` or a
    boolean alarm array aligned with ``truth`` (per-step anomaly label or
    ``None``/``False``). Only alarms at or after onset count; the search
    stops ``grace_factor * duration`` steps after onset.
    """
    flags = _flags(detections)
    if len(flags) != len(truth):
        raise ValueError("detections and truth must be aligned")
    windows = injection_windows(truth)
    if not windows:
        raise ValueError("truth contains no anomaly window")
    out: list[float | None] = []
    for start, end, _ in windows:
        horizon = min(len(flags), start + grace_factor * (end - start))
        hits = np.flatnonzero(flags[start:horizon])
        out.append(float(hits[0]) * step_seconds if len(hits) else None)
    return out


def eligibility(
    truth: Sequence, burn_in: int, grace_factor: int = GRACE_FACTOR
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks ``(positive, negative)`` over steps for FPR and curves."""
    n = len(truth)
    positive = np.zeros(n, dtype=bool)
    excluded = np.zeros(n, dtype=bool)
    excluded[:burn_in] = True
    for start, end, _ in injection_windows(list(truth)):
        positive[start:end] = True
        excluded[start:min(n, start + grace_factor * (end - start))] = True
    positive[:burn_in] = False
    return positive, ~excluded


def count_false_positives(flags, truth, burn_in: int, grace_factor: int = GRACE_FACTOR):
    """``(false positives, eligible negative steps)``."""
    flags = _flags(flags)
    _, negative = eligibility(truth, burn_in, grace_factor)
    return int(np.count_nonzero(flags & negative)), int(np.count_nonzero(negative))


def mean_attribution(trace: Trace, window: tuple[int, int]) -> dict[str, float] | None:
    """Average clamped per-axis share over joint alarms inside ``window``."""
    start, end = window
    alarm = trace.alarm[start:end] & ~np.isnan(trace.d_squared[start:end])
    if not alarm.any():
        return None
    c = np.clip(trace.contributions[start:end][alarm], 0.0, None)
    tot = c.sum(axis=1, keepdims=True)
    shares = np.where(tot > 0, c / np.where(tot > 0, tot, 1.0), 1.0 / len(AXES))
    return {ax.value: float(v) for ax, v in zip(AXES, shares.mean(axis=0))}


def segments(truth: Sequence, grace_factor: int = GRACE_FACTOR) -> list[tuple[int, int]]:
    """Partition of the steps into one segment per injection.

    Segment ``i`` runs from the end of the previous detection horizon (or
    step 0) to the end of injection ``i``'s horizon; the last one extends
    to the end of the stream. A stream without injections is one segment.
    """
    n = len(truth)
    windows = injection_windows(truth)
    if not windows:
        return [(0, n)]
    cuts = [0] + [min(n, s + grace_factor * (e - s)) for s, e, _ in windows[:-1]] + [n]
    return list(zip(cuts[:-1], cuts[1:]))


def evaluate_trace(
    trace: Trace,
    truth: Sequence,
    *,
    detector: DetectorKind,
    seed: int,
    burn_in: int,
    step_seconds: float,
) -> list[RunResult]:
    """One result per injection window (one anomaly-free result if none).

    False positives and curve samples are taken from each injection's
    segment, so summing over a stream counts every step once.
    """
    truth = _labels(truth)
    flags = trace.alarm
    windows = injection_windows(truth)
    pos_mask, neg_mask = eligibility(truth, burn_in)
    scores_all = np.nan_to_num(trace.score, nan=-np.inf)
    latencies = measure_latency(flags, truth, step_seconds) if windows else [None]
    out = []
    for i, (lo, hi) in enumerate(segments(truth)):
        keep = np.zeros(len(truth), dtype=bool)
        keep[lo:hi] = True
        neg = neg_mask & keep
        curve = (pos_mask | neg_mask) & keep
        anomaly, horizon, attribution = None, math.nan, None
        if windows:
            start, end, anomaly = windows[i]
            horizon = GRACE_FACTOR * (end - start) * step_seconds
            if detector is DetectorKind.AMDM:
                attribution = mean_attribution(trace, (start, end))
        out.append(RunResult(
            detector, anomaly, seed, latencies[i],
            int(np.count_nonzero(flags & neg)), int(np.count_nonzero(neg)), horizon,
            scores_all[curve], pos_mask[curve], attribution,
        ))
    return out


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float


def _sweep(scores, truth):
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must be aligned")
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = truth[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of every run of equal scores
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    return s[last], tp[last], fp[last], n_pos, n_neg


def roc_curve(scores, truth) -> list[RocPoint]:
    """ROC staircase over every distinct score (flag when score >= threshold).

    Starts at (0, 0) with threshold +inf and ends at (1, 1).
    """
    thr, tp, fp, n_pos, n_neg = _sweep(scores, truth)
    pts = [RocPoint(math.inf, 0.0, 0.0)]
    pts += [RocPoint(float(t), float(a / n_pos), float(b / n_neg))
            for t, a, b in zip(thr, tp, fp)]
    return pts


def pr_curve(scores, truth) -> list[PrPoint]:
    """Precision/recall at every distinct score; starts at recall 0."""
    thr, tp, fp, n_pos, _ = _sweep(scores, truth)
    first_precision = tp[0] / (tp[0] + fp[0])
    pts = [PrPoint(math.inf, float(first_precision), 0.0)]
    pts += [PrPoint(float(t), float(a / (a + b)), float(a / n_pos))
            for t, a, b in zip(thr, tp, fp)]
    return pts


def auc(points: Sequence[RocPoint]) -> float:
    x = np.array([p.fpr for p in points])
    y = np.array([p.tpr for p in points])
    return float(np.trapezoid(y, x))


def average_precision(points: Sequence[PrPoint]) -> float:
    """Step-wise area under the PR curve."""
    r = np.array([p.recall for p in points])
    p = np.array([p.precision for p in points])
    return float(np.sum(np.diff(r) * p[1:]))


def fpr_at_tpr(points: Sequence[RocPoint], tpr: float) -> float:
    """Smallest FPR among operating points reaching ``tpr``."""
    return min(p.fpr for p in points if p.tpr >= tpr)


# ---------------------------------------------------------------------------
# aggregation


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample std over sqrt(n)); SE is nan for n < 2."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return math.nan, math.nan
    if len(v) < 2:
        return float(v.mean()), math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


@dataclass(frozen=True)
class SummaryRow:
    detector: DetectorKind
    anomaly: AnomalyKind | None
    runs: int
    detected: int
    latency_mean: float | None
    latency_se: float | None
    censored_mean: float
    censored_se: float
    miss_rate: float
    fpr: float
    fpr_se: float
    false_positives: int
    negatives: int


def summarize(results: Iterable[RunResult]) -> list[SummaryRow]:
    """One row per (detector, anomaly) cell, in enumeration order."""
    cells: dict[tuple, list[RunResult]] = {}
    for r in results:
        cells.setdefault((r.detector, r.anomaly), []).append(r)
    rows = []
    for det in DETECTOR_KINDS:
        for kind in ANOMALY_KINDS + (None,):
            rs = cells.get((det, kind))
            if not rs:
                continue
            lats = [r.latency for r in rs if r.latency is not None]
            lat_mean, lat_se = mean_se(lats) if lats else (None, None)
            fpr_mean, fpr_se = mean_se([r.fpr for r in rs])
            cens_mean, cens_se = (
                mean_se([r.censored_latency for r in rs]) if kind else (math.nan, math.nan)
            )
            rows.append(SummaryRow(
                det, kind, len(rs), len(lats), lat_mean, lat_se, cens_mean, cens_se,
                (1.0 - len(lats) / len(rs)) if kind else math.nan, fpr_mean, fpr_se,
                sum(r.false_positives for r in rs), sum(r.negatives for r in rs),
            ))
    return rows


def pooled_curves(results: Iterable[RunResult]) -> dict[DetectorKind, tuple[list, list]]:
    """Per-detector ROC and PR curves on scores pooled over all runs."""
    by_det: dict[DetectorKind, list[RunResult]] = {}
    for r in results:
        by_det.setdefault(r.detector, []).append(r)
    out = {}
    for det in DETECTOR_KINDS:
        rs = by_det.get(det)
        if not rs:
            continue
        s = np.concatenate([r.scores for r in rs])
        y = np.concatenate([r.labels for r in rs])
        out[det] = (roc_curve(s, y), pr_curve(s, y))
    return out


def attribution_rows(results: Iterable[RunResult]) -> list[dict]:
    """Mean AMDM axis shares per anomaly kind over runs with a joint alarm."""
    acc: dict[AnomalyKind, list[dict]] = {}
    for r in results:
        if r.attribution is not None:
            acc.setdefault(r.anomaly, []).append(r.attribution)
    rows = []
    for kind in ANOMALY_KINDS:
        shares = acc.get(kind)
        if not shares:
            continue
        row = {"anomaly": kind.value, "runs": len(shares)}
        for ax in AXES:
            row[ax.value] = float(np.mean([s[ax.value] for s in shares]))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# running


def run_detectors(
    values: np.ndarray,
    truth: Sequence,
    quiet: np.ndarray,
    config: EvalConfig,
    *,
    seed: int,
    amdm: AmdmConfig | None = None,
    detectors: Sequence[DetectorKind] | None = None,
) -> list[RunResult]:
    """Every selected detector on one stream; quiet data feeds the frozen
    baselines."""
    registry = config.profile.registry()
    amdm = amdm or config.amdm
    out = []
    for det in detectors or config.detectors:
        detector = build_detector(det, registry, amdm, quiet, static_sigma=config.static_sigma)
        trace = detector.run(values)
        out += evaluate_trace(
            trace, truth, detector=det, seed=seed,
            burn_in=2 * amdm.window, step_seconds=config.step_seconds,
        )
    return out


def quiet_stream(config: EvalConfig, seed: int) -> np.ndarray:
    """The calibration quiet period paired with ``seed``."""
    return generate(config.profile, config.quiet_length, (), seed + QUIET_SEED_OFFSET).values


def scenario_stream(config: EvalConfig, scenario: Scenario, seed: int) -> LabeledStream:
    return generate(config.profile, scenario.length, scenario.injections, seed,
                    config.step_seconds)


def run_benchmark(
    config: EvalConfig | None = None,
    *,
    amdm: AmdmConfig | None = None,
    detectors: Sequence[DetectorKind] | None = None,
) -> list[RunResult]:
    """Every detector on every (scenario, seed) stream."""
    config = config or EvalConfig()
    results = []
    for sc in config.scenarios:
        for seed in config.seeds:
            stream = scenario_stream(config, sc, seed)
            results += run_detectors(stream.values, stream.truth, quiet_stream(config, seed),
                                     config, seed=seed, amdm=amdm, detectors=detectors)
    return results


ABLATION_LAMBDAS = (0.15, 0.25, 0.35)
ABLATION_WINDOWS = (40, 80, 120)
ABLATION_ALPHAS = (0.05, 0.01, 0.001)


@dataclass(frozen=True)
class AblationCell:
    lam: float
    window: int
    alpha: float
    joint_threshold: float
    latency_mean: float | None
    latency_se: float | None
    censored_mean: float
    miss_rate: float
    fpr: float
    axis_flag_rate: float


def ablation_cell(config: EvalConfig, amdm: AmdmConfig) -> AblationCell:
    """AMDM alone on every benchmark stream under one configuration."""
    registry = config.profile.registry()
    burn_in = 2 * amdm.window
    res: list[RunResult] = []
    axis_flags = axis_steps = 0
    for sc in config.scenarios:
        for seed in config.seeds:
            stream = scenario_stream(config, sc, seed)
            trace = build_detector(DetectorKind.AMDM, registry, amdm).run(stream.values)
            res += evaluate_trace(trace, stream.truth, detector=DetectorKind.AMDM, seed=seed,
                                  burn_in=burn_in, step_seconds=config.step_seconds)
            _, neg = eligibility(stream.truth, burn_in)
            axis_flags += int(np.count_nonzero(trace.axis_flags.any(axis=1) & neg))
            axis_steps += int(np.count_nonzero(neg))
    lats = [r.latency for r in res if r.latency is not None]
    lat_mean, lat_se = mean_se(lats) if lats else (None, None)
    fp = sum(r.false_positives for r in res)
    neg = sum(r.negatives for r in res)
    return AblationCell(
        amdm.lam, amdm.window, amdm.alpha, amdm.joint_threshold, lat_mean, lat_se,
        mean_se([r.censored_latency for r in res])[0], 1.0 - len(lats) / len(res),
        fp / neg, axis_flags / axis_steps,
    )


def ablation_sweep(
    config: EvalConfig | None = None,
    lambdas: Sequence[float] = ABLATION_LAMBDAS,
    windows: Sequence[int] = ABLATION_WINDOWS,
    alphas: Sequence[float] = ABLATION_ALPHAS,
) -> list[AblationCell]:
    """AMDM over a (lambda, window, joint threshold) grid.

    The joint threshold is swept through its chi-square quantile level
    ``1 - alpha``. Burn-in follows each cell's own window.
    """
    config = config or EvalConfig()
    return [
        ablation_cell(config, config.amdm.replace(lam=lam, window=w, alpha=alpha))
        for lam in lambdas for w in windows for alpha in alphas
    ]


# ---------------------------------------------------------------------------
# CSV output

SUMMARY_HEADER = (
    "detector", "anomaly", "runs", "detected", "latency_mean_s", "latency_se_s",
    "censored_latency_mean_s", "censored_latency_se_s", "miss_rate", "fpr_per_step",
    "fpr_se", "false_positives", "negative_steps",
)
ROC_HEADER = ("detector", "threshold", "tpr", "fpr")
PR_HEADER = ("detector", "threshold", "precision", "recall")
ABLATION_HEADER = (
    "lambda", "window", "alpha", "joint_threshold", "latency_mean_s", "latency_se_s",
    "censored_latency_mean_s", "miss_rate", "fpr_per_step", "axis_flag_rate",
)
ATTRIBUTION_HEADER = ("anomaly", "runs") + tuple(ax.value for ax in AXES)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, np.integer):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    """Summary table; FPR is per step over eligible negative steps."""
    return _csv(SUMMARY_HEADER, (
        (r.detector, r.anomaly or "none", r.runs, r.detected, r.latency_mean, r.latency_se,
         r.censored_mean, r.censored_se, r.miss_rate, r.fpr, r.fpr_se, r.false_positives,
         r.negatives)
        for r in rows
    ))


def roc_csv(curves) -> str:
    return _csv(ROC_HEADER, (
        (det, p.threshold, p.tpr, p.fpr) for det, (roc, _) in curves.items() for p in roc
    ))


def pr_csv(curves) -> str:
    return _csv(PR_HEADER, (
        (det, p.threshold, p.precision, p.recall) for det, (_, pr) in curves.items() for p in pr
    ))


def ablation_csv(cells: Sequence[AblationCell]) -> str:
    return _csv(ABLATION_HEADER, (
        (c.lam, c.window, c.alpha, c.joint_threshold, c.latency_mean, c.latency_se,
         c.censored_mean, c.miss_rate, c.fpr, c.axis_flag_rate)
        for c in cells
    ))


def attribution_csv(rows: Sequence[dict]) -> str:
    return _csv(ATTRIBUTION_HEADER, ([r[h] for h in ATTRIBUTION_HEADER] for r in rows))


__all__ = [
    "DEFAULT_SCENARIO",
    "DEFAULT_SEEDS",
    "GRACE_FACTOR",
    "AblationCell",
    "ablation_cell",
    "EvalConfig",
    "PrPoint",
    "RocPoint",
    "RunResult",
    "Scenario",
    "SummaryRow",
    "ablation_csv",
    "ablation_sweep",
    "attribution_csv",
    "attribution_rows",
    "auc",
    "average_precision",
    "count_false_positives",
    "eligibility",
    "evaluate_trace",
    "fpr_at_tpr",
    "injection_windows",
    "mean_se",
    "measure_latency",
    "pooled_curves",
    "pr_csv",
    "pr_curve",
    "roc_csv",
    "roc_curve",
    "run_benchmark",
    "run_detectors",
    "scenario_stream",
    "segments",
    "summarize",
    "summary_csv",
]
