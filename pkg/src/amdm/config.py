"""Run configuration as a JSON document.

Every key is optional; omitted keys take the defaults shown by
``amdm config`` (``RunConfig().to_json()``)::

    {
      "profile": {"name": "modernisation", "ar": 0.6, "common_share": 0.0,
                  "common_ar": 0.6, "wander_share": 0.0, "wander_ar": 0.995},
      "scenario": {"name": "mixed", "length": 2800,
                   "injections": [{"kind": "goal-drift", "onset": 600,
                                   "duration": 100, "magnitude": 5.0}, ...]},
      "seeds": [1337, ..., 1346],
      "amdm": {"lam": 0.25, "window": 80, "k": 3.0, "alpha": 0.01, ...},
      "detectors": ["static", "ewma-only", "mahalanobis-only", "amdm"],
      "quiet_length": 2000,
      "step_seconds": 0.5,
      "static_sigma": 3.0,
      "target_axis_fpr": 0.001,
      "out": "amdm-out"
    }

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import DETECTOR_KINDS, DetectorKind
from .core import AmdmConfig
from .evaluation import DEFAULT_SCENARIO, DEFAULT_SEEDS, EvalConfig, Scenario
from .simulator import DEFAULT_AR, PROFILE_NAMES, WorkflowProfile, profile

PROFILE_KEYS = ("name", "ar", "common_share", "common_ar", "wander_share", "wander_ar")
SCENARIO_KEYS = ("name", "length", "injections")
INJECTION_KEYS = ("kind", "onset", "duration", "magnitude")


class ConfigError(ValueError):
    """An invalid configuration document or value."""


@dataclass(frozen=True)
class ProfileChoice:
    """A built-in profile plus its noise settings."""

    name: str = "modernisation"
    ar: float = DEFAULT_AR
    common_share: float = 0.0
    common_ar: float = DEFAULT_AR
    wander_share: float = 0.0
    wander_ar: float = 0.995

    def __post_init__(self) -> None:
        if self.name not in PROFILE_NAMES:
            raise ConfigError(f"unknown profile {self.name!r}; choose from {PROFILE_NAMES}")

    def build(self) -> WorkflowProfile:
        return profile(self.name, self.ar, common_share=self.common_share,
                       common_ar=self.common_ar, wander_share=self.wander_share,
                       wander_ar=self.wander_ar)


@dataclass(frozen=True)
class RunConfig:
    profile: ProfileChoice = field(default_factory=ProfileChoice)
    scenario: Scenario = DEFAULT_SCENARIO
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    amdm: AmdmConfig = field(default_factory=AmdmConfig)
    detectors: tuple[DetectorKind, ...] = DETECTOR_KINDS
    quiet_length: int = 2000
    step_seconds: float = 0.5
    static_sigma: float = 3.0
    target_axis_fpr: float = 0.001
    out: str = "amdm-out"

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "detectors",
                               tuple(DetectorKind(d) for d in self.detectors))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if len(set(self.detectors)) != len(self.detectors):
            raise ConfigError("detectors must be distinct")
        if not (self.step_seconds > 0):
            raise ConfigError("step_seconds must be > 0")
        if not (self.static_sigma > 0):
            raise ConfigError("static_sigma must be > 0")
        try:
            self.eval_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            profile=self.profile.build(), amdm=self.amdm, scenarios=(self.scenario,),
            seeds=self.seeds, detectors=self.detectors, quiet_length=self.quiet_length,
            step_seconds=self.step_seconds, static_sigma=self.static_sigma,
        )

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self, include_out: bool = True) -> dict:
        d = {
            "profile": dataclasses.asdict(self.profile),
            "scenario": self.scenario.to_dict(),
            "seeds": list(self.seeds),
            "amdm": {f.name: getattr(self.amdm, f.name) for f in dataclasses.fields(AmdmConfig)},
            "detectors": [d.value for d in self.detectors],
            "quiet_length": self.quiet_length,
            "step_seconds": self.step_seconds,
            "static_sigma": self.static_sigma,
            "target_axis_fpr": self.target_axis_fpr,
        }
        if include_out:
            d["out"] = self.out
        return d

    def to_json(self, include_out: bool = True) -> str:
        return json.dumps(self.to_dict(include_out), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d) -> RunConfig:
        _known(d, [f.name for f in dataclasses.fields(cls)], "config")
        kw = dict(d)
        try:
            if "profile" in kw:
                _known(kw["profile"], PROFILE_KEYS, "profile")
                kw["profile"] = ProfileChoice(**kw["profile"])
            if "scenario" in kw:
                sc = kw["scenario"]
                _known(sc, SCENARIO_KEYS, "scenario")
                for j in sc.get("injections", ()):
                    _known(j, INJECTION_KEYS, "injection")
                if "length" not in sc:
                    raise ConfigError("scenario.length is required")
                kw["scenario"] = Scenario.from_dict({"name": "custom", "injections": [], **sc})
            if "amdm" in kw:
                _known(kw["amdm"], [f.name for f in dataclasses.fields(AmdmConfig)], "amdm")
                kw["amdm"] = AmdmConfig(**kw["amdm"])
            for key in ("seeds", "detectors"):
                if key in kw and not isinstance(kw[key], list):
                    raise ConfigError(f"{key} must be a list")
            return cls(**kw)
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _known(d, keys, what: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be a JSON object")
    extra = sorted(set(d) - set(keys))
    if extra:
        raise ConfigError(f"unknown {what} keys: {extra}")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"1337..1346"`` (inclusive), ``"1,2,5"`` or a single seed."""
    text = text.strip()
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            seeds = tuple(range(int(a), int(b) + 1))
        else:
            seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"invalid seed list {text!r}") from None
    if not seeds:
        raise ConfigError(f"empty seed list {text!r}")
    return seeds


def parse_detectors(text: str) -> tuple[DetectorKind, ...]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise ConfigError("detector list is empty")
    try:
        return tuple(DetectorKind(n) for n in names)
    except ValueError:
        raise ConfigError(
            f"unknown detector in {text!r}; choose from {[d.value for d in DETECTOR_KINDS]}"
        ) from None


__all__ = [
    "ConfigError",
    "ProfileChoice",
    "RunConfig",
    "parse_detectors",
    "parse_seeds",
]
