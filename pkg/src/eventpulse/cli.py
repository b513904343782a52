"""Command-line entry points for the corpus-to-benchmark pipeline.

Exit codes: 0 success, 2 unreadable or invalid input, 3 more than half of
a raw file failed schema checks, 4 missing upstream artifact (the message
names the path).
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from .config import ConfigError, PipelineConfig
from .evaluation import (
    PROTOCOLS,
    EvalError,
    run_loco,
    run_structure_aware,
    run_text_augmented,
    run_within_event,
    write_audit,
    write_report,
)
from .pipeline import (
    REPORTS_DIR,
    ArtifactMissing,
    load_all_series,
    load_views_index,
    run_annotate,
    run_build,
    run_edges,
    run_ingest,
    run_views,
    write_json,
)
from .synth import default_corpus_specs, generate_event, generate_label_noise, write_raw_jsonl

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_SCHEMA_RATE = 3
EXIT_MISSING_ARTIFACT = 4


class _UnreadableInput(RuntimeError):
    pass


class _SchemaRateExceeded(RuntimeError):
    def __init__(self, files):
        super().__init__(
            "schema failure rate above 50% in: " + ", ".join(sorted(files))
        )


def _split_csv(text: str) -> tuple:
    return tuple(part for part in text.split(",") if part)


def _load_config(args) -> PipelineConfig:
    config = (
        PipelineConfig.from_file(args.config)
        if getattr(args, "config", None)
        else PipelineConfig()
    )
    overrides = {}
    mapping = (
        ("salt", "salt_hex", str),
        ("granularities", "granularities", _split_csv),
        ("models", "models", _split_csv),
        ("seeds", "seeds", lambda t: tuple(int(x) for x in _split_csv(t))),
        ("top_percents", "top_percents", lambda t: tuple(int(x) for x in _split_csv(t))),
        ("jobs", "jobs", int),
        ("min_event_posts", "min_event_posts", int),
        ("min_event_span_days", "min_event_span_days", float),
        ("min_event_density", "min_event_density", float),
        ("min_series_bins", "min_series_bins", int),
        ("endpoint", "annotator_endpoint", str),
        ("model", "annotator_model", str),
    )
    for arg_name, field, convert in mapping:
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field] = convert(value)
    return config.with_overrides(**overrides)


# --- commands ----------------------------------------------------------------

def _cmd_synth(args, config) -> int:
    out = Path(args.out)
    raw_dir = out / "raw"
    specs = default_corpus_specs(
        args.events, seed=args.seed, n_days=args.days, base_rate=args.base_rate
    )
    total = 0
    for spec in specs:
        records, gold = generate_event(spec)
        if args.label_noise is not None:
            noisy = generate_label_noise(gold, args.label_noise, seed=spec.seed + 1)
            for record in records:
                record["sentiment"] = noisy[record["id"]]
            write_json(gold, raw_dir / f"{spec.event_id}.gold.json")
        write_raw_jsonl(records, raw_dir / f"{spec.event_id}.jsonl")
        total += len(records)
    print(f"synth: {len(specs)} events, {total} posts -> {raw_dir}")
    return EXIT_OK


def _cmd_ingest(args, config) -> int:
    try:
        report = run_ingest(
            Path(args.workdir),
            salt=config.salt,
            min_posts=config.min_event_posts,
            min_span_days=config.min_event_span_days,
            min_density=config.min_event_density,
        )
    except ArtifactMissing as exc:
        # The raw corpus is this command's own input, not a pipeline product.
        raise _UnreadableInput(str(exc)) from exc
    n_events = report["n_events_retained"]
    n_excluded = len(report["excluded_events"])
    print(f"ingest: {n_events} events retained, {n_excluded} excluded")

    over_rate = []
    for name, stats in report["files"].items():
        failures = stats["n_corrupt"] + stats["n_rejected"]
        if stats["n_lines"] > 0 and failures / stats["n_lines"] > 0.5:
            over_rate.append(name)
    if over_rate:
        raise _SchemaRateExceeded(over_rate)
    return EXIT_OK


def _cmd_annotate(args, config) -> int:
    report = run_annotate(Path(args.workdir), config.annotator())
    print(
        f"annotate: {report['n_labeled']} labeled, {report['n_failed']} dropped, "
        f"{report['n_from_cache']} from cache"
    )
    return EXIT_OK


def _cmd_edges(args, config) -> int:
    report = run_edges(Path(args.workdir))
    n_edges = sum(stats["n_edges"] for stats in report.values())
    print(f"edges: {n_edges} edges across {len(report)} events")
    return EXIT_OK


def _cmd_build(args, config) -> int:
    report = run_build(
        Path(args.workdir),
        granularities=config.granularities,
        min_bins=config.min_series_bins,
        jobs=config.jobs,
    )
    for granularity in config.granularities:
        stats = report[granularity]
        print(
            f"build[{granularity}]: {stats['n_series']} series, "
            f"{len(stats['excluded'])} excluded"
        )
    return EXIT_OK


def _cmd_views(args, config) -> int:
    report = run_views(Path(args.workdir), granularities=config.granularities)
    for granularity, stats in report.items():
        print(f"views[{granularity}]: {stats['n_bin_views']} bin views")
    return EXIT_OK


def _cmd_eval(args, config) -> int:
    workdir = Path(args.workdir)
    protocols = _split_csv(args.protocols)
    unknown = set(protocols) - set(PROTOCOLS)
    if unknown:
        raise _UnreadableInput(f"unknown protocols: {sorted(unknown)}")
    series = load_all_series(workdir, config.granularities)
    if not series:
        raise ArtifactMissing(workdir / "series")

    rows: list = []
    audits: dict = {}
    if "within_event" in protocols:
        r, a = run_within_event(
            series, config.models, granularities=config.granularities,
            seeds=config.seeds,
        )
        rows += r
        audits["within_event"] = a
    if "structure_aware" in protocols:
        r, a = run_structure_aware(
            series, config.models, top_percents=config.top_percents,
            seeds=config.seeds,
        )
        rows += r
        audits["structure_aware"] = a
    if "loco" in protocols:
        r, a = run_loco(series, config.models, seeds=config.seeds)
        rows += r
        audits["loco"] = a
    if "text_augmented" in protocols:
        views_index = load_views_index(workdir, "1d")
        r, a = run_text_augmented(series, config.models, views_index, seeds=config.seeds)
        rows += r
        audits["text_augmented"] = a

    report_path = workdir / REPORTS_DIR / "eval_report.csv"
    write_report(rows, report_path)
    if args.audit:
        write_audit(audits, workdir / REPORTS_DIR / "eval_audit.json")
    if args.stamp:
        write_json(
            {"generated_at": datetime.now(timezone.utc).isoformat()},
            workdir / REPORTS_DIR / "eval_meta.json",
        )
    print(f"eval: {len(rows)} rows -> {report_path}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--workdir", required=True, help="pipeline work directory")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--salt", help="hex-encoded anonymization salt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventpulse",
        description="Social-media event corpora to forecasting benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw corpus")
    p.add_argument("--out", required=True, help="work directory to seed")
    p.add_argument("--events", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=45)
    p.add_argument("--base-rate", type=float, default=40.0)
    p.add_argument(
        "--label-noise", type=float, default=None,
        help="flip each gold label with this probability",
    )
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="unify and filter raw corpora")
    _add_common(p)
    p.add_argument("--min-event-posts", dest="min_event_posts", type=int)
    p.add_argument("--min-event-span-days", dest="min_event_span_days", type=float)
    p.add_argument("--min-event-density", dest="min_event_density", type=float)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("annotate", help="label posts missing sentiment")
    _add_common(p)
    p.add_argument("--endpoint", help="completion service URL")
    p.add_argument("--model", help="model name sent to the service")
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("edges", help="export interaction edges")
    _add_common(p)
    p.set_defaults(func=_cmd_edges)

    p = sub.add_parser("build", help="build per-event series and window index")
    _add_common(p)
    p.add_argument("--granularities", help="comma-separated, e.g. 1d,12h")
    p.add_argument("--min-series-bins", dest="min_series_bins", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("views", help="render per-bin text views")
    _add_common(p)
    p.add_argument("--granularities", help="comma-separated, e.g. 1d,12h")
    p.set_defaults(func=_cmd_views)

    p = sub.add_parser("eval", help="run forecasting protocols, write the report")
    _add_common(p)
    p.add_argument("--granularities", help="comma-separated, e.g. 1d,12h")
    p.add_argument("--protocols", default=",".join(PROTOCOLS))
    p.add_argument("--models", help="comma-separated model kinds")
    p.add_argument("--seeds", help="comma-separated integer seeds")
    p.add_argument("--top-percents", dest="top_percents", help="comma-separated")
    p.add_argument("--audit", action="store_true", help="write per-window audit JSON")
    p.add_argument(
        "--stamp", action="store_true",
        help="record a wall-clock timestamp (off by default to keep runs reproducible)",
    )
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        return args.func(args, config)
    except (_UnreadableInput, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except _SchemaRateExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA_RATE
    except ArtifactMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except EvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
