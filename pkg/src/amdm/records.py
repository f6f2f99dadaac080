"""JSONL event logs: one header line, then one :class:`EventRecord` per step.

Header line::

    {"schema": "amdm.events", "version": 1, "seed": 1337, "step_seconds": 0.5,
     "scenario": {...}, "profile": {...}}

Record line::

    {"step": 0, "timestamp": 0.0, "metrics": {"name": value, ...},
     "label": null | "<anomaly kind>",
     "decisions": null | {"<detector>": {"axis_flags": [...], "joint_flag": bool,
                                          "d_squared": null | float, "score": null | float,
                                          "attribution": null | {"<axis>": share}}}}

Floats are written with Python's shortest round-trip repr, so parsing a
written record reproduces it exactly. Strict parsing rejects unknown or
missing fields; lenient parsing ignores unknown fields.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import _COLS, AXES, Axis, Detection, Trace
from .simulator import AnomalyKind, LabeledStream

SCHEMA_NAME = "amdm.events"
SCHEMA_VERSION = 1

HEADER_FIELDS = ("schema", "version", "seed", "step_seconds", "scenario", "profile")
RECORD_FIELDS = ("step", "timestamp", "metrics", "label", "decisions")
DECISION_FIELDS = ("axis_flags", "joint_flag", "d_squared", "score", "attribution")


class RecordError(ValueError):
    """A malformed or inconsistent JSONL line."""

    def __init__(self, message: str, *, path=None, line: int | None = None) -> None:
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class DecisionSummary:
    """The per-detector part of a record.

    ``score`` is the detector's continuous decision statistic (NaN before
    it is defined, written as null); ``attribution`` holds the per-axis
    shares of D^2 on joint alarms.
    """

    axis_flags: tuple[str, ...]
    joint_flag: bool
    d_squared: float | None
    score: float
    attribution: Mapping[str, float] | None = None

    @classmethod
    def from_detection(cls, d: Detection) -> DecisionSummary:
        return cls(
            tuple(ax.value for ax in AXES if ax in d.axis_flags),
            bool(d.joint_flag),
            d.d_squared,
            float(d.score),
            None if d.attribution is None
            else {ax.value: float(d.attribution[ax]) for ax in AXES},
        )

    def to_dict(self) -> dict:
        return {"axis_flags": list(self.axis_flags), "joint_flag": self.joint_flag,
                "d_squared": self.d_squared, "score": _finite_or_none(self.score),
                "attribution": None if self.attribution is None else dict(self.attribution)}

    @classmethod
    def from_dict(cls, d, strict: bool = True) -> DecisionSummary:
        _check_fields(d, DECISION_FIELDS, strict, "decision")
        flags = d["axis_flags"]
        if not isinstance(flags, list) or not all(isinstance(f, str) for f in flags):
            raise ValueError("axis_flags must be a list of axis names")
        for f in flags:
            Axis(f)
        if not isinstance(d["joint_flag"], bool):
            raise ValueError("joint_flag must be a boolean")
        d2 = d["d_squared"]
        if d2 is not None:
            d2 = _number(d2, "d_squared")
            if d2 < 0:
                raise ValueError("d_squared must be >= 0")
        score = d["score"]
        score = math.nan if score is None else _number(score, "score")
        attribution = d["attribution"]
        if attribution is not None:
            if not isinstance(attribution, dict):
                raise ValueError("attribution must be an object or null")
            attribution = {Axis(k).value: _number(v, f"attribution {k!r}")
                           for k, v in attribution.items()}
        return cls(tuple(flags), d["joint_flag"], d2, score, attribution)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecisionSummary):
            return NotImplemented
        same_score = self.score == other.score or (
            math.isnan(self.score) and math.isnan(other.score)
        )
        return (self.axis_flags, self.joint_flag, self.d_squared, self.attribution) == (
            other.axis_flags, other.joint_flag, other.d_squared, other.attribution
        ) and same_score

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class EventRecord:
    """One step of telemetry with its ground-truth label and decisions."""

    step: int
    timestamp: float
    metrics: Mapping[str, float]
    label: str | None = None
    decisions: Mapping[str, DecisionSummary] | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "timestamp": self.timestamp,
            "metrics": dict(self.metrics),
            "label": self.label,
            "decisions": None if self.decisions is None
            else {k: v.to_dict() for k, v in self.decisions.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False)

    @classmethod
    def from_dict(cls, d, strict: bool = True) -> EventRecord:
        _check_fields(d, RECORD_FIELDS, strict, "record")
        step = d["step"]
        if not isinstance(step, int) or isinstance(step, bool) or step < 0:
            raise ValueError("step must be a non-negative integer")
        ts = _number(d["timestamp"], "timestamp")
        if ts < 0:
            raise ValueError("timestamp must be >= 0")
        metrics = d["metrics"]
        if not isinstance(metrics, dict) or not metrics:
            raise ValueError("metrics must be a non-empty object")
        metrics = {str(k): _number(v, f"metric {k!r}") for k, v in metrics.items()}
        label = d["label"]
        if label is not None:
            label = AnomalyKind(label).value
        decisions = d["decisions"]
        if decisions is not None:
            if not isinstance(decisions, dict):
                raise ValueError("decisions must be an object or null")
            decisions = {str(k): DecisionSummary.from_dict(v, strict)
                         for k, v in decisions.items()}
        return cls(step, ts, metrics, label, decisions)

    @classmethod
    def from_json(cls, line: str, strict: bool = True) -> EventRecord:
        return cls.from_dict(json.loads(line), strict)


@dataclass(frozen=True)
class StreamHeader:
    seed: int
    step_seconds: float
    scenario: Mapping
    profile: Mapping
    schema: str = SCHEMA_NAME
    version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps({
            "schema": self.schema, "version": self.version, "seed": self.seed,
            "step_seconds": self.step_seconds, "scenario": self.scenario,
            "profile": self.profile,
        }, allow_nan=False)

    @classmethod
    def from_dict(cls, d, strict: bool = True) -> StreamHeader:
        _check_fields(d, HEADER_FIELDS, strict, "header")
        if d["schema"] != SCHEMA_NAME:
            raise ValueError(f"unknown schema {d['schema']!r}, expected {SCHEMA_NAME!r}")
        if d["version"] != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d['version']!r}")
        step_seconds = _number(d["step_seconds"], "step_seconds")
        if step_seconds <= 0:
            raise ValueError("step_seconds must be > 0")
        return cls(int(d["seed"]), step_seconds, d["scenario"], d["profile"])


def _check_fields(d, fields: Sequence[str], strict: bool, what: str) -> None:
    if not isinstance(d, dict):
        raise ValueError(f"{what} must be a JSON object")
    missing = [f for f in fields if f not in d]
    if missing:
        raise ValueError(f"{what} is missing fields {missing}")
    if strict:
        extra = sorted(set(d) - set(fields))
        if extra:
            raise ValueError(f"{what} has unknown fields {extra}")


def _number(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{what} must be a number")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"{what} must be finite")
    return v


def _finite_or_none(v: float):
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# files


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a sibling temporary file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        # mkstemp creates 0600; give the result the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_jsonl(header: StreamHeader, records: Iterable[EventRecord]) -> str:
    lines = [header.to_json()]
    lines += [r.to_json() for r in records]
    return "\n".join(lines) + "\n"


def write_jsonl(path, header: StreamHeader, records: Iterable[EventRecord]) -> None:
    atomic_write_text(path, dump_jsonl(header, records))


def parse_jsonl(
    lines: Iterable[str], *, strict: bool = True, path=None
) -> tuple[StreamHeader, list[EventRecord]]:
    """Parse a header line and records; errors name the offending line."""
    header = None
    records: list[EventRecord] = []
    last_ts = -math.inf
    last_step = -1
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            if strict:
                raise RecordError("blank line", path=path, line=lineno)
            continue
        try:
            obj = json.loads(line)
            if header is None:
                header = StreamHeader.from_dict(obj, strict)
                continue
            rec = EventRecord.from_dict(obj, strict)
        except (ValueError, KeyError, TypeError) as exc:
            raise RecordError(str(exc), path=path, line=lineno) from None
        if rec.timestamp < last_ts:
            raise RecordError("timestamps must be non-decreasing", path=path, line=lineno)
        if rec.step <= last_step:
            raise RecordError("steps must strictly increase", path=path, line=lineno)
        last_ts, last_step = rec.timestamp, rec.step
        records.append(rec)
    if header is None:
        raise RecordError("missing header line", path=path, line=1)
    return header, records


def read_jsonl(path, *, strict: bool = True) -> tuple[StreamHeader, list[EventRecord]]:
    with open(path, encoding="utf-8") as fh:
        return parse_jsonl(fh, strict=strict, path=path)


# ---------------------------------------------------------------------------
# conversions


def stream_header(stream: LabeledStream, scenario: Mapping) -> StreamHeader:
    return StreamHeader(stream.seed, stream.step_seconds, dict(scenario),
                        stream.profile.to_dict())


def stream_records(
    stream: LabeledStream, decisions: Mapping[str, Trace] | None = None
) -> list[EventRecord]:
    """Records for every step of ``stream``, optionally with decisions."""
    names = stream.profile.names
    rows = stream.values.tolist()
    out = []
    for t, row in enumerate(rows):
        label = stream.truth[t]
        dec = None
        if decisions is not None:
            dec = {k: DecisionSummary.from_detection(tr.detection(t))
                   for k, tr in decisions.items()}
        out.append(EventRecord(t, t * stream.step_seconds, dict(zip(names, row)),
                               None if label is None else label.value, dec))
    return out


def annotate(
    records: Sequence[EventRecord], traces: Mapping[str, Trace]
) -> list[EventRecord]:
    """Copies of ``records`` with ``decisions`` set from row-aligned traces."""
    for name, tr in traces.items():
        if len(tr) != len(records):
            raise ValueError(f"trace for {name!r} has {len(tr)} rows, expected {len(records)}")
    return [
        dataclasses.replace(r, decisions={
            name: DecisionSummary.from_detection(tr.detection(i)) for name, tr in traces.items()
        })
        for i, r in enumerate(records)
    ]


def records_to_arrays(
    records: Sequence[EventRecord], names: Sequence[str]
) -> tuple[np.ndarray, np.ndarray, list[AnomalyKind | None]]:
    """``(values, steps, truth)`` with columns ordered like ``names``.

    Raises:
        ValueError: A record's metric names differ from ``names``.
    """
    expected = set(names)
    values = np.empty((len(records), len(names)))
    for i, r in enumerate(records):
        if set(r.metrics) != expected:
            missing = sorted(expected - set(r.metrics))
            extra = sorted(set(r.metrics) - expected)
            raise ValueError(f"step {r.step}: metric mismatch (missing {missing}, unknown {extra})")
        values[i] = [r.metrics[n] for n in names]
    steps = np.array([r.step for r in records], dtype=np.int64)
    truth = [None if r.label is None else AnomalyKind(r.label) for r in records]
    return values, steps, truth


def decisions_trace(
    records: Sequence[EventRecord], detector: str, joint_threshold: float = math.nan
) -> Trace:
    """Rebuild the decision columns of a :class:`Trace` from recorded decisions.

    Axis flags, alarm, D^2 and score are restored exactly; contributions
    hold the recorded attribution shares (zero when absent). Rolling
    statistics are not recorded and come back as NaN.

    Raises:
        ValueError: A record lacks decisions for ``detector``.
    """
    out = Trace([r.step for r in records], joint_threshold)
    out.data[:] = math.nan
    data = out.data
    for i, r in enumerate(records):
        if r.decisions is None or detector not in r.decisions:
            raise ValueError(f"step {r.step}: no decisions for detector {detector!r}")
        d = r.decisions[detector]
        data[i, _COLS["axis_flags"]] = [ax.value in d.axis_flags for ax in AXES]
        data[i, _COLS["alarm"]] = d.joint_flag
        data[i, _COLS["d_squared"]] = math.nan if d.d_squared is None else d.d_squared
        data[i, _COLS["score"]] = d.score
        data[i, _COLS["contributions"]] = (
            0.0 if d.attribution is None else [d.attribution[ax.value] for ax in AXES]
        )
    return out


__all__ = [
    "SCHEMA_NAME",
    "SCHEMA_VERSION",
    "DecisionSummary",
    "EventRecord",
    "RecordError",
    "StreamHeader",
    "annotate",
    "atomic_write_text",
    "decisions_trace",
    "dump_jsonl",
    "parse_jsonl",
    "read_jsonl",
    "records_to_arrays",
    "stream_header",
    "stream_records",
    "write_jsonl",
]
