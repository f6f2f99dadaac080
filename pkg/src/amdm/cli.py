"""Command-line pipeline: ``simulate -> monitor -> evaluate``, plus
``calibrate``, ``ablate``, ``plot`` and ``config``.

Output layout under ``--out DIR``::

    config.json               effective configuration (every command)
    streams/seed<N>.jsonl     simulate
    monitored/seed<N>.jsonl   monitor
    calibration.json          calibrate
    summary.csv roc.csv pr.csv attribution.csv   evaluate
    ablation.csv              ablate
    roc.svg pr.svg latency.svg                   plot

The configuration is read from ``--config``, else from ``DIR/config.json``
when present, else the built-in defaults; ``--seed/--seeds`` and
``--detectors`` override it.

Exit codes: 0 success, 1 unexpected error, 2 usage or configuration,
3 invalid input data, 4 unreachable calibration target, 5 file I/O.
``AMDM_LOG_LEVEL`` (e.g. ``DEBUG``, ``WARNING``) sets the log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .baselines import DetectorKind, build_detector
from .calibration import CalibrationError, UnreachableTargetError, calibrate
from .config import ConfigError, RunConfig, parse_detectors, parse_seeds
from .evaluation import (
    ablation_csv,
    ablation_sweep,
    attribution_csv,
    attribution_rows,
    evaluate_trace,
    pooled_curves,
    pr_csv,
    quiet_stream,
    roc_csv,
    scenario_stream,
    summarize,
    summary_csv,
)
from .records import (
    RecordError,
    annotate,
    atomic_write_text,
    decisions_trace,
    dump_jsonl,
    read_jsonl,
    records_to_arrays,
    stream_header,
    stream_records,
)
from .simulator import LabeledStream

log = logging.getLogger("amdm")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DATA, EXIT_UNREACHABLE, EXIT_IO = 0, 1, 2, 3, 4, 5


class DataError(ValueError):
    """Input files that parse but cannot be used."""


# ---------------------------------------------------------------------------
# helpers


def resolve_config(args) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.load(args.config)
    elif args.out is not None and (Path(args.out) / "config.json").is_file():
        cfg = RunConfig.load(Path(args.out) / "config.json")
    else:
        cfg = RunConfig()
    changes = {}
    if args.out is not None:
        changes["out"] = args.out
    if getattr(args, "seed", None) is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "seeds", None) is not None:
        changes["seeds"] = parse_seeds(args.seeds)
    if getattr(args, "detectors", None) is not None:
        changes["detectors"] = parse_detectors(args.detectors)
    return cfg.replace(**changes) if changes else cfg


def prepare_out(cfg: RunConfig, *subdirs: str) -> Path:
    out = Path(cfg.out)
    for sub in ("",) + subdirs:
        (out / sub).mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", cfg.to_json(include_out=False))
    return out


def stream_name(seed: int) -> str:
    return f"seed{seed}.jsonl"


def default_inputs(cfg: RunConfig, *subdirs: str) -> list[Path]:
    """Per-seed files from the first of ``subdirs`` holding all of them."""
    out = Path(cfg.out)
    for sub in subdirs:
        paths = [out / sub / stream_name(s) for s in cfg.seeds]
        if all(p.is_file() for p in paths):
            return paths
    wanted = ", ".join(str(out / subdirs[-1] / stream_name(s)) for s in cfg.seeds)
    raise FileNotFoundError(f"missing input streams: {wanted}")


def load_stream(path: Path, cfg: RunConfig, strict: bool):
    """``(header, records, values, truth)`` checked against the configured profile."""
    header, records = read_jsonl(path, strict=strict)
    if not records:
        raise DataError(f"{path}: stream has no records")
    prof = cfg.profile.build()
    try:
        values, _, truth = records_to_arrays(records, prof.names)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if dict(header.profile) != prof.to_dict():
        log.warning("%s: stream profile differs from the configured profile", path)
    return header, records, values, truth


def detector_trace(kind: DetectorKind, values, records, cfg: RunConfig, seed: int):
    """Recorded decisions when every record has them, otherwise a fresh run."""
    if all(r.decisions is not None and kind.value in r.decisions for r in records):
        return decisions_trace(records, kind.value, cfg.amdm.joint_threshold)
    ecfg = cfg.eval_config()
    registry = ecfg.profile.registry()
    quiet = quiet_stream(ecfg, seed)
    det = build_detector(kind, registry, cfg.amdm, quiet, static_sigma=cfg.static_sigma)
    return det.run(values)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out = prepare_out(cfg, "streams")
    ecfg = cfg.eval_config()
    scenario = cfg.scenario.to_dict()
    for seed in cfg.seeds:
        stream = scenario_stream(ecfg, cfg.scenario, seed)
        path = out / "streams" / stream_name(seed)
        atomic_write_text(path, dump_jsonl(stream_header(stream, scenario), stream_records(stream)))
        log.info("wrote %s (%d steps)", path, len(stream))
    return EXIT_OK


def cmd_monitor(args) -> int:
    cfg = resolve_config(args)
    inputs = [Path(p) for p in args.streams] or default_inputs(cfg, "streams")
    out = prepare_out(cfg, "monitored")
    ecfg = cfg.eval_config()
    registry = ecfg.profile.registry()
    for path in inputs:
        header, records, values, _ = load_stream(path, cfg, args.strict)
        quiet = quiet_stream(ecfg, header.seed)
        traces = {}
        for kind in cfg.detectors:
            det = build_detector(kind, registry, cfg.amdm, quiet, static_sigma=cfg.static_sigma)
            traces[kind.value] = det.run(values)
        target = out / "monitored" / path.name
        atomic_write_text(target, dump_jsonl(header, annotate(records, traces)))
        log.info("wrote %s (%s)", target, ", ".join(traces))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = resolve_config(args)
    if args.target_fpr is not None:
        cfg = cfg.replace(target_axis_fpr=args.target_fpr)
    ecfg = cfg.eval_config()
    if args.stream is not None:
        header, _, values, truth = load_stream(Path(args.stream), cfg, args.strict)
        stream = LabeledStream(ecfg.profile, values, truth, (), header.seed, header.step_seconds)
    else:
        seed = cfg.seeds[0]
        stream = LabeledStream(ecfg.profile, quiet_stream(ecfg, seed), [None] * cfg.quiet_length,
                               (), seed, cfg.step_seconds)
    report = calibrate(stream, ecfg.profile.registry(), cfg.amdm,
                       target_axis_fpr=cfg.target_axis_fpr, alpha=args.alpha)
    out = prepare_out(cfg)
    atomic_write_text(out / "calibration.json", report.to_json())
    log.info("recommended k=%s, joint threshold=%.6g", report.recommended_k, report.joint_threshold)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    inputs = [Path(p) for p in args.streams] or default_inputs(cfg, "monitored", "streams")
    results = []
    for path in inputs:
        header, records, values, truth = load_stream(path, cfg, args.strict)
        for kind in cfg.detectors:
            trace = detector_trace(kind, values, records, cfg, header.seed)
            results += evaluate_trace(trace, truth, detector=kind, seed=header.seed,
                                      burn_in=2 * cfg.amdm.window,
                                      step_seconds=header.step_seconds)
    out = prepare_out(cfg)
    atomic_write_text(out / "summary.csv", summary_csv(summarize(results)))
    try:
        curves = pooled_curves(results)
    except ValueError:
        log.warning("no anomalous steps in the inputs; ROC/PR curves are empty")
        curves = {}
    atomic_write_text(out / "roc.csv", roc_csv(curves))
    atomic_write_text(out / "pr.csv", pr_csv(curves))
    atomic_write_text(out / "attribution.csv", attribution_csv(attribution_rows(results)))
    log.info("evaluated %d streams x %d detectors", len(inputs), len(cfg.detectors))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    cells = ablation_sweep(cfg.eval_config())
    out = prepare_out(cfg)
    atomic_write_text(out / "ablation.csv", ablation_csv(cells))
    log.info("wrote %d ablation cells", len(cells))
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _save_svg(fig, path: Path) -> None:
    buf = io.StringIO()
    # no date stamp, so identical tables give identical files
    fig.savefig(buf, format="svg", metadata={"Date": None})
    atomic_write_text(path, buf.getvalue())


def cmd_plot(args) -> int:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.error("plotting needs matplotlib: pip install 'artifact[plot]'")
        return EXIT_ERROR
    cfg = resolve_config(args)
    out = Path(cfg.out)
    plt.rcParams["svg.hashsalt"] = "amdm"

    for name, x, y in (("roc", "fpr", "tpr"), ("pr", "recall", "precision")):
        rows = _read_csv(out / f"{name}.csv")
        fig, ax = plt.subplots(figsize=(5, 4))
        for det in dict.fromkeys(r["detector"] for r in rows):
            pts = [r for r in rows if r["detector"] == det]
            ax.step([float(p[x]) for p in pts], [float(p[y]) for p in pts], where="post", label=det)
        ax.set_xlabel(x.upper() if name == "roc" else x)
        ax.set_ylabel(y.upper() if name == "roc" else y)
        ax.legend(loc="lower right" if name == "roc" else "lower left")
        fig.tight_layout()
        _save_svg(fig, out / f"{name}.svg")
        plt.close(fig)

    rows = [r for r in _read_csv(out / "summary.csv") if r["latency_mean_s"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"{r['detector']}\n{r['anomaly']}" for r in rows]
    means = [float(r["latency_mean_s"]) for r in rows]
    errs = [float(r["latency_se_s"] or 0.0) for r in rows]
    ax.bar(range(len(rows)), means, yerr=errs)
    ax.set_xticks(range(len(rows)), labels, rotation=90, fontsize=6)
    ax.set_ylabel("detection latency (s)")
    fig.tight_layout()
    _save_svg(fig, out / "latency.svg")
    plt.close(fig)
    log.info("wrote roc.svg, pr.svg, latency.svg to %s", out)
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = resolve_config(args)
    sys.stdout.write(cfg.to_json(include_out=args.out is not None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amdm", description="Multi-axis anomaly monitoring: simulate, monitor, evaluate."
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_, seeds=True, detectors=False, strict=False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default: from config)")
        if seeds:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--seed", type=int, help="single seed")
            g.add_argument("--seeds", help="seed range A..B (inclusive) or comma list")
        if detectors:
            p.add_argument("--detectors", help="comma list of static, ewma-only, "
                           "mahalanobis-only, amdm")
        if strict:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--strict", dest="strict", action="store_true", default=True,
                           help="reject unknown JSONL fields (default)")
            g.add_argument("--lenient", dest="strict", action="store_false",
                           help="ignore unknown JSONL fields")
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "write one labelled stream per seed")
    p = add("monitor", cmd_monitor, "add detector decisions to streams", detectors=True,
            strict=True)
    p.add_argument("streams", nargs="*", help="stream files (default: OUT/streams/seed<N>.jsonl)")
    p = add("calibrate", cmd_calibrate, "pick k on a quiet stream", strict=True)
    p.add_argument("stream", nargs="?", help="quiet stream file (default: generated)")
    p.add_argument("--target-fpr", type=float, help="per-axis false-positive target")
    p.add_argument("--alpha", type=float, help="joint false-alarm target")
    p = add("evaluate", cmd_evaluate, "latency, FPR, ROC/PR and attribution tables",
            detectors=True, strict=True)
    p.add_argument("streams", nargs="*",
                   help="stream files (default: OUT/monitored or OUT/streams)")
    add("ablate", cmd_ablate, "AMDM over the (lambda, window, alpha) grid")
    add("plot", cmd_plot, "SVG plots of the evaluation tables", seeds=False)
    add("config", cmd_config, "print the effective configuration", detectors=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("AMDM_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level if isinstance(logging.getLevelName(level), int) else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_USAGE
    except UnreachableTargetError as exc:
        log.error("calibration: %s", exc)
        return EXIT_UNREACHABLE
    except (RecordError, DataError, CalibrationError) as exc:
        log.error("data: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("I/O: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except Exception:
        log.exception("unexpected failure")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
