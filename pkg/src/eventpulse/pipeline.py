"""Work-directory pipeline: stage runners and the on-disk artifact contract.

Every stage reads artifacts written by the previous one and writes its own
under a fixed layout, so stages can be re-run independently::

    raw/                 input corpora, one JSONL file per source
    unified/             {event}.jsonl canonical posts, filter_report.json,
                         events.json manifest
    labels/              annotation cache (JSONL per model)
    edges/               {event}.csv interaction edges
    series/{gran}/       {event}.csv bins + {event}.norm.json sidecar,
                         exclusions.json
    views/{gran}/        {event}.jsonl per-bin text views
    windows/{gran}.jsonl window index (event, lookback start, split)
    reports/             evaluation CSV and audit JSON

All writers are deterministic: events in sorted order, stable float
formatting, sorted JSON keys, no timestamps unless explicitly stamped.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

from .annotation import AnnotatorConfig, LabelCache, annotate_posts
from .corpus import EventRecord, UnifiedPost
from .graph import build_edges, reply_ratios
from .ingestion import (
    MIN_EVENT_DENSITY_PER_DAY,
    MIN_EVENT_POSTS,
    MIN_EVENT_SPAN_DAYS,
    EnglishDetector,
    RecordRejected,
    filter_event_posts,
    unify_record,
)
from .series import (
    GRANULARITIES,
    GRANULARITY_WINDOWS,
    MIN_SERIES_BINS,
    EventSeries,
    build_event_series,
    make_windows,
)
from .textviews import build_bin_views

RAW_DIR = "raw"
UNIFIED_DIR = "unified"
LABELS_DIR = "labels"
EDGES_DIR = "edges"
SERIES_DIR = "series"
VIEWS_DIR = "views"
WINDOWS_DIR = "windows"
REPORTS_DIR = "reports"

FILTER_REPORT = "filter_report.json"
EVENTS_MANIFEST = "events.json"

SERIES_COLUMNS = (
    "bin_start_utc", "count", "sentiment", "count_z", "sentiment_z",
    "split", "reply_ratio",
)
EDGE_COLUMNS = ("src", "dst", "kind", "timestamp_utc")

SECONDS_PER_DAY = 86_400


class ArtifactMissing(FileNotFoundError):
    """An upstream artifact the stage depends on does not exist."""

    def __init__(self, path: Path):
        super().__init__(f"missing upstream artifact: {path}")
        self.path = Path(path)


def _require(path: Path) -> Path:
    if not path.exists():
        raise ArtifactMissing(path)
    return path


# --- primitive formats ------------------------------------------------------

def iso_utc(timestamp: int) -> str:
    return datetime.fromtimestamp(timestamp, tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


def parse_iso_utc(text: str) -> int:
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _cell(value) -> str:
    """CSV cell: missing values become empty cells, floats keep full repr."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float_cell(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def read_jsonl(path: Path) -> tuple:
    """Parse a JSONL file, skipping corrupt lines; returns (rows, n_corrupt)."""
    rows: list = []
    n_corrupt = 0
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                n_corrupt += 1
                continue
            if not isinstance(obj, dict):
                n_corrupt += 1
                continue
            rows.append(obj)
    return rows, n_corrupt


def write_jsonl(rows: Sequence[dict], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def write_json(obj, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def read_json(path: Path):
    return json.loads(_require(Path(path)).read_text(encoding="utf-8"))


# --- ingest stage -----------------------------------------------------------

def run_ingest(
    workdir: Path,
    salt: bytes,
    detector: Optional[EnglishDetector] = None,
    min_posts: int = MIN_EVENT_POSTS,
    min_span_days: float = MIN_EVENT_SPAN_DAYS,
    min_density: float = MIN_EVENT_DENSITY_PER_DAY,
) -> dict:
    """Unify raw records, filter posts per event, enforce event thresholds.

    Writes ``unified/{event}.jsonl`` for every retained event plus the
    filter report and the event manifest. Records that fail schema checks
    are counted per reason; an event whose posts never state a category
    is excluded, since downstream splits group by category.
    """
    workdir = Path(workdir)
    raw_dir = _require(workdir / RAW_DIR)
    files = sorted(raw_dir.glob("*.jsonl"))
    if not files:
        raise ArtifactMissing(raw_dir / "*.jsonl")

    by_event: dict = {}
    categories: dict = {}
    conflicts: dict = {}
    file_stats: dict = {}
    for path in files:
        rows, n_corrupt = read_jsonl(path)
        rejected: dict = {}
        n_unified = 0
        for raw in rows:
            try:
                post, category = unify_record(raw, salt, default_event=path.stem)
            except RecordRejected as exc:
                rejected[exc.reason] = rejected.get(exc.reason, 0) + 1
                continue
            n_unified += 1
            by_event.setdefault(post.event_id, []).append(post)
            if category is not None:
                if post.event_id not in categories:
                    categories[post.event_id] = category
                elif categories[post.event_id] != category:
                    conflicts[post.event_id] = conflicts.get(post.event_id, 0) + 1
        n_rows = len(rows) + n_corrupt
        file_stats[path.name] = {
            "n_lines": n_rows,
            "n_corrupt": n_corrupt,
            "n_unified": n_unified,
            "n_rejected": sum(rejected.values()),
            "rejected_by_reason": dict(sorted(rejected.items())),
        }

    unified_dir = workdir / UNIFIED_DIR
    unified_dir.mkdir(parents=True, exist_ok=True)
    event_stats: dict = {}
    excluded: dict = {}
    manifest: dict = {}
    for event_id in sorted(by_event):
        posts = sorted(by_event[event_id], key=lambda p: (p.timestamp_utc, p.post_id))
        category = categories.get(event_id)
        if category is None:
            excluded[event_id] = "missing_category"
            continue
        kept, stats = filter_event_posts(
            event_id, posts, detector,
            min_posts=min_posts, min_span_days=min_span_days,
            min_density=min_density,
        )
        event_stats[event_id] = stats.to_json_dict()
        if not kept:
            excluded[event_id] = stats.reject_reason or "empty"
            continue
        write_jsonl([p.to_json_dict() for p in kept], unified_dir / f"{event_id}.jsonl")
        manifest[event_id] = {
            "category": category,
            "n_posts": len(kept),
            "first_timestamp_utc": kept[0].timestamp_utc,
            "last_timestamp_utc": kept[-1].timestamp_utc,
            "span_days": (kept[-1].timestamp_utc - kept[0].timestamp_utc)
            / SECONDS_PER_DAY,
        }

    report = {
        "files": file_stats,
        "events": event_stats,
        "excluded_events": excluded,
        "category_conflicts": conflicts,
        "n_events_retained": len(manifest),
    }
    write_json(report, unified_dir / FILTER_REPORT)
    write_json(manifest, unified_dir / EVENTS_MANIFEST)
    return report


def load_manifest(workdir: Path) -> dict:
    return read_json(Path(workdir) / UNIFIED_DIR / EVENTS_MANIFEST)


def read_unified_event(path: Path) -> list:
    rows, n_corrupt = read_jsonl(_require(Path(path)))
    if n_corrupt:
        raise RecordRejected(f"corrupt unified rows in {path}")
    return [UnifiedPost.from_json_dict(row) for row in rows]


def _unified_path(workdir: Path, event_id: str) -> Path:
    return Path(workdir) / UNIFIED_DIR / f"{event_id}.jsonl"


# --- annotate stage ----------------------------------------------------------

def run_annotate(workdir: Path, config: AnnotatorConfig) -> dict:
    """Fill missing sentiment labels via the configured annotation service.

    Already-labeled posts are untouched. Posts whose annotation fails after
    retries are dropped from the unified files (the drop policy) and
    reported. Labels are cached under ``labels/`` keyed by post, model,
    and prompt, so re-runs only pay for new posts.
    """
    workdir = Path(workdir)
    manifest = load_manifest(workdir)
    cache = LabelCache(workdir / LABELS_DIR / f"{config.model_name}.jsonl")
    report: dict = {"events": {}, "model_name": config.model_name}
    n_labeled = n_failed = n_cached = 0
    for event_id in sorted(manifest):
        path = _unified_path(workdir, event_id)
        posts = read_unified_event(path)
        todo = [p for p in posts if p.sentiment is None]
        if not todo:
            report["events"][event_id] = {"n_missing": 0, "n_failed": 0}
            continue
        result = annotate_posts(todo, config, cache)
        failed = set(result.failed)
        updated: list = []
        for post in posts:
            if post.sentiment is not None:
                updated.append(post)
            elif post.post_id in failed:
                continue
            else:
                updated.append(UnifiedPost(
                    post_id=post.post_id,
                    event_id=post.event_id,
                    platform=post.platform,
                    timestamp_utc=post.timestamp_utc,
                    text=post.text,
                    parent_id=post.parent_id,
                    interaction_kind=post.interaction_kind,
                    sentiment=result.labels[post.post_id],
                ))
        write_jsonl([p.to_json_dict() for p in updated], path)
        manifest[event_id]["n_posts"] = len(updated)
        report["events"][event_id] = {
            "n_missing": len(todo),
            "n_failed": len(result.failed),
            "n_from_cache": result.from_cache,
        }
        n_labeled += len(todo) - len(result.failed)
        n_failed += len(result.failed)
        n_cached += result.from_cache
    report.update(n_labeled=n_labeled, n_failed=n_failed, n_from_cache=n_cached)
    write_json(manifest, workdir / UNIFIED_DIR / EVENTS_MANIFEST)
    write_json(report, workdir / LABELS_DIR / "annotation_report.json")
    return report


# --- edges stage --------------------------------------------------------------

def run_edges(workdir: Path) -> dict:
    workdir = Path(workdir)
    manifest = load_manifest(workdir)
    edges_dir = workdir / EDGES_DIR
    edges_dir.mkdir(parents=True, exist_ok=True)
    report: dict = {}
    for event_id in sorted(manifest):
        posts = read_unified_event(_unified_path(workdir, event_id))
        edges = build_edges(posts)
        lines = [",".join(EDGE_COLUMNS)]
        for e in edges:
            lines.append(f"{e.src},{e.dst},{e.kind},{e.timestamp_utc}")
        (edges_dir / f"{event_id}.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
        report[event_id] = {
            "n_edges": len(edges),
            "n_dangling": sum(1 for e in edges if e.dangling),
        }
    return report


# --- build stage ---------------------------------------------------------------

def _series_dir(workdir: Path, granularity: str) -> Path:
    return Path(workdir) / SERIES_DIR / granularity


def write_series_csv(series: EventSeries, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(SERIES_COLUMNS)]
    for i in range(series.n_bins):
        lines.append(",".join([
            iso_utc(series.bin_starts[i]),
            _cell(series.counts[i]),
            _cell(series.sentiments[i]),
            _cell(series.counts_z[i]),
            _cell(series.sentiments_z[i]),
            series.splits[i],
            _cell(series.reply_ratios[i]),
        ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_series_csv(
    path: Path, event_id: str, category: str, granularity: str
) -> EventSeries:
    text = _require(Path(path)).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].split(",") != list(SERIES_COLUMNS):
        raise RecordRejected(f"bad series header in {path}")
    bin_starts: list = []
    counts: list = []
    sentiments: list = []
    counts_z: list = []
    sentiments_z: list = []
    splits: list = []
    ratios: list = []
    for line in lines[1:]:
        cells = line.split(",")
        bin_starts.append(parse_iso_utc(cells[0]))
        counts.append(None if cells[1] == "" else int(cells[1]))
        sentiments.append(_parse_float_cell(cells[2]))
        counts_z.append(_parse_float_cell(cells[3]))
        sentiments_z.append(_parse_float_cell(cells[4]))
        splits.append(cells[5])
        ratios.append(_parse_float_cell(cells[6]))
    sidecar = read_json(Path(path).with_name(f"{Path(path).stem}.norm.json"))
    return EventSeries(
        event_id=event_id,
        category=category,
        granularity=granularity,
        bin_width=GRANULARITIES[granularity],
        bin_starts=bin_starts,
        counts=counts,
        sentiments=sentiments,
        splits=splits,
        counts_z=counts_z,
        sentiments_z=sentiments_z,
        norm_stats={k: sidecar[k] for k in ("mu_c", "sigma_c", "mu_s", "sigma_s")},
        missing_segments=list(sidecar["missing_segments"]),
        reply_ratios=ratios,
    )


def _build_one_event(
    workdir: Path, event_id: str, category: str, granularities: Sequence[str],
    min_bins: int,
) -> dict:
    posts = read_unified_event(_unified_path(workdir, event_id))
    event = EventRecord(event_id=event_id, category=category, posts=posts)
    out: dict = {}
    for granularity in granularities:
        series, reason = build_event_series(event, granularity, min_bins=min_bins)
        if series is None:
            out[granularity] = {"excluded": reason}
            continue
        series.reply_ratios = reply_ratios(
            posts, series.bin_starts, series.bin_width
        )
        out[granularity] = {"series": series}
    return out


def run_build(
    workdir: Path,
    granularities: Sequence[str] = ("1d", "12h", "6h"),
    min_bins: int = MIN_SERIES_BINS,
    jobs: int = 1,
) -> dict:
    """Build per-event series at every granularity plus the window index.

    Exclusions (too short at a given granularity, empty train segment,
    et cetera) are recorded per granularity, never fatal. With ``jobs``
    over 1, events build in parallel; file writes stay in sorted order in
    the main thread so outputs are reproducible byte for byte.
    """
    workdir = Path(workdir)
    manifest = load_manifest(workdir)
    event_ids = sorted(manifest)

    def build(event_id: str) -> dict:
        return _build_one_event(
            workdir, event_id, manifest[event_id]["category"], granularities,
            min_bins,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            built = dict(zip(event_ids, pool.map(build, event_ids)))
    else:
        built = {event_id: build(event_id) for event_id in event_ids}

    report: dict = {g: {"n_series": 0, "excluded": {}} for g in granularities}
    for granularity in granularities:
        gran_dir = _series_dir(workdir, granularity)
        gran_dir.mkdir(parents=True, exist_ok=True)
        window_rows: list = []
        lookback, horizon = GRANULARITY_WINDOWS[granularity]
        for event_id in event_ids:
            slot = built[event_id][granularity]
            if "excluded" in slot:
                report[granularity]["excluded"][event_id] = slot["excluded"]
                continue
            series: EventSeries = slot["series"]
            write_series_csv(series, gran_dir / f"{event_id}.csv")
            write_json(
                {**series.norm_stats, "missing_segments": series.missing_segments},
                gran_dir / f"{event_id}.norm.json",
            )
            for spec in make_windows(event_id, series.splits, lookback, horizon):
                window_rows.append(
                    {"event_id": spec.event_id, "start": spec.start, "split": spec.split}
                )
            report[granularity]["n_series"] += 1
        write_json(report[granularity]["excluded"], gran_dir / "exclusions.json")
        write_jsonl(window_rows, workdir / WINDOWS_DIR / f"{granularity}.jsonl")
    return report


def load_all_series(
    workdir: Path, granularities: Sequence[str] = ("1d", "12h", "6h")
) -> list:
    """Read every built series back into memory, sorted for determinism."""
    workdir = Path(workdir)
    manifest = load_manifest(workdir)
    out: list = []
    for granularity in granularities:
        gran_dir = _series_dir(workdir, granularity)
        if not gran_dir.exists():
            continue
        for event_id in sorted(manifest):
            path = gran_dir / f"{event_id}.csv"
            if path.exists():
                out.append(read_series_csv(
                    path, event_id, manifest[event_id]["category"], granularity
                ))
    return out


# --- views stage -----------------------------------------------------------------

def run_views(
    workdir: Path, granularities: Sequence[str] = ("1d", "12h", "6h")
) -> dict:
    """Render per-bin text views for every built series."""
    workdir = Path(workdir)
    manifest = load_manifest(workdir)
    report: dict = {}
    for granularity in granularities:
        gran_dir = _series_dir(workdir, granularity)
        _require(gran_dir)
        views_dir = Path(workdir) / VIEWS_DIR / granularity
        views_dir.mkdir(parents=True, exist_ok=True)
        n_views = 0
        for event_id in sorted(manifest):
            csv_path = gran_dir / f"{event_id}.csv"
            if not csv_path.exists():
                continue
            series = read_series_csv(
                csv_path, event_id, manifest[event_id]["category"], granularity
            )
            posts = read_unified_event(_unified_path(workdir, event_id))
            views = build_bin_views(posts, series.bin_starts, series.bin_width)
            write_jsonl([v.to_json_dict() for v in views], views_dir / f"{event_id}.jsonl")
            n_views += len(views)
        report[granularity] = {"n_bin_views": n_views}
    return report


def load_views_index(workdir: Path, granularity: str) -> Callable:
    """Per-event accessor over rendered views, for the evaluation harness."""
    views_dir = _require(Path(workdir) / VIEWS_DIR / granularity)

    def index(event_id: str):
        path = views_dir / f"{event_id}.jsonl"
        if not path.exists():
            return None
        rows, _ = read_jsonl(path)
        return rows

    return index
