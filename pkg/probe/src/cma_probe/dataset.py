"""Readers for a built work directory and window tensor assembly.

Everything here goes through the files the upstream pipeline publishes:
per-bin series CSVs (z-scored targets plus split labels), the window
definition JSONL per granularity, per-bin text views with their token
grids, unified post JSONLs for the raw texts, and the token embedding
JSONLs this package writes itself. Windows touching an unimputable bin
(empty z cell) are skipped and counted, never filled.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .embeddings import decode_vec
from .model import TokenBatch

# Published forecasting geometry: bin width in seconds and
# (lookback, horizon) per granularity name.
GRANULARITY_SECONDS = {"1d": 86_400, "12h": 43_200, "6h": 21_600}
GRANULARITY_WINDOWS = {"1d": (14, 7), "12h": (28, 14), "6h": (56, 28)}

TARGET_COLUMNS = {"count": "count_z", "sentiment": "sentiment_z"}
TEXT_CONFIGS = ("none", "flat", "structured")
SPLITS = ("train", "val", "test")

TOKEN_SLOTS = 9

SERIES_DIR = "series"
WINDOWS_DIR = "windows"
VIEWS_DIR = "views"
UNIFIED_DIR = "unified"
EMBED_DIR = "embeddings"


class ArtifactMissing(FileNotFoundError):
    """A required upstream file is absent."""

    def __init__(self, path):
        super().__init__(f"missing upstream artifact: {path}")
        self.path = Path(path)


class DataContractError(ValueError):
    """An upstream file exists but violates its documented shape."""


def _require(path: Path) -> Path:
    if not path.exists():
        raise ArtifactMissing(path)
    return path


def parse_iso_utc(stamp: str) -> int:
    dt = datetime.strptime(stamp, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def time_features(bin_starts: np.ndarray) -> np.ndarray:
    """Normalized hour-of-day and day-of-week per bin start."""
    starts = np.asarray(bin_starts, dtype=np.int64)
    hod = (starts % 86_400) // 3_600
    dow = (starts // 86_400 + 3) % 7  # Monday-based index; epoch day 0 was a Thursday
    return np.stack([hod / 23.0, dow / 6.0], axis=-1).astype(np.float32)


@dataclass
class EventFrame:
    """One event's bins with aligned embeddings, lookback-ready."""

    event_id: str
    bin_starts: np.ndarray  # [n] int64 epoch seconds
    targets: dict           # column name -> [n] float64, NaN where empty
    splits: list            # [n] split label per bin
    emb: np.ndarray         # [n, TOKEN_SLOTS, dim] float32
    type_ids: np.ndarray    # [n, TOKEN_SLOTS] int64
    thread_ids: np.ndarray  # [n, TOKEN_SLOTS] int64
    token_valid: np.ndarray  # [n, TOKEN_SLOTS] bool

    @property
    def n_bins(self) -> int:
        return len(self.bin_starts)


def read_series_csv(path: Path) -> dict:
    path = _require(Path(path))
    with path.open(newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise DataContractError(f"series file has no rows: {path}")
    bin_starts = np.array([parse_iso_utc(r["bin_start_utc"]) for r in rows], dtype=np.int64)
    targets = {}
    for name, column in TARGET_COLUMNS.items():
        targets[name] = np.array(
            [float(r[column]) if r[column] != "" else np.nan for r in rows],
            dtype=np.float64,
        )
    splits = [r["split"] for r in rows]
    unknown = sorted(set(splits) - set(SPLITS))
    if unknown:
        raise DataContractError(f"unknown split labels {unknown} in {path}")
    return {"bin_starts": bin_starts, "targets": targets, "splits": splits}


def read_windows(workdir: Path, granularity: str) -> list:
    path = _require(Path(workdir) / WINDOWS_DIR / f"{granularity}.jsonl")
    windows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        windows.append((row["event_id"], int(row["start"]), row["split"]))
    return windows


def read_embedding_file(path: Path, dim: int) -> dict:
    path = _require(Path(path))
    starts, vecs, types, threads, valid = [], [], [], [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        tokens = row["tokens"]
        if len(tokens) != TOKEN_SLOTS:
            raise DataContractError(
                f"{path}: expected {TOKEN_SLOTS} token slots, got {len(tokens)}"
            )
        tokens = sorted(tokens, key=lambda t: t["slot"])
        starts.append(int(row["bin_start_utc"]))
        vecs.append([decode_vec(t["vec"], dim) for t in tokens])
        types.append([t["type_id"] for t in tokens])
        threads.append([t["thread_id"] for t in tokens])
        valid.append([bool(t["valid"]) for t in tokens])
    return {
        "bin_starts": np.array(starts, dtype=np.int64),
        "emb": np.array(vecs, dtype=np.float32),
        "type_ids": np.array(types, dtype=np.int64),
        "thread_ids": np.array(threads, dtype=np.int64),
        "token_valid": np.array(valid, dtype=bool),
    }


def read_event_texts(workdir: Path, event_id: str) -> dict:
    """post id -> text from the unified corpus."""
    path = _require(Path(workdir) / UNIFIED_DIR / f"{event_id}.jsonl")
    texts = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        texts[row["post_id"]] = row["text"]
    return texts


def read_event_views(workdir: Path, granularity: str, event_id: str) -> list:
    path = _require(Path(workdir) / VIEWS_DIR / granularity / f"{event_id}.jsonl")
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def list_series_events(workdir: Path, granularity: str) -> list:
    gran_dir = _require(Path(workdir) / SERIES_DIR / granularity)
    return sorted(p.stem for p in gran_dir.glob("*.csv"))


def load_event_frame(workdir: Path, granularity: str, event_id: str, dim: int) -> EventFrame:
    workdir = Path(workdir)
    series = read_series_csv(workdir / SERIES_DIR / granularity / f"{event_id}.csv")
    emb_path = workdir / EMBED_DIR / granularity / f"{event_id}.jsonl"
    emb = read_embedding_file(emb_path, dim)
    if not np.array_equal(emb["bin_starts"], series["bin_starts"]):
        raise DataContractError(
            f"embedding bins do not align with the series for {event_id} at {granularity}"
        )
    return EventFrame(
        event_id=event_id,
        bin_starts=series["bin_starts"],
        targets=series["targets"],
        splits=series["splits"],
        emb=emb["emb"],
        type_ids=emb["type_ids"],
        thread_ids=emb["thread_ids"],
        token_valid=emb["token_valid"],
    )


@dataclass
class WindowArrays:
    """Stacked window tensors for one split."""

    x: np.ndarray          # [n, L] float32 lookback values
    y: np.ndarray          # [n, H] float32 horizon values
    time_feats: np.ndarray  # [n, L, 2] float32
    emb: np.ndarray        # [n, L, T, dim] float32
    type_ids: np.ndarray   # [n, L, T] int64
    thread_ids: np.ndarray  # [n, L, T] int64
    token_valid: np.ndarray  # [n, L, T] bool
    event_ids: list
    starts: list

    def __len__(self) -> int:
        return len(self.event_ids)


def _empty_window_arrays(lookback: int, horizon: int, slots: int, dim: int) -> WindowArrays:
    return WindowArrays(
        x=np.zeros((0, lookback), dtype=np.float32),
        y=np.zeros((0, horizon), dtype=np.float32),
        time_feats=np.zeros((0, lookback, 2), dtype=np.float32),
        emb=np.zeros((0, lookback, slots, dim), dtype=np.float32),
        type_ids=np.zeros((0, lookback, slots), dtype=np.int64),
        thread_ids=np.zeros((0, lookback, slots), dtype=np.int64),
        token_valid=np.zeros((0, lookback, slots), dtype=bool),
        event_ids=[],
        starts=[],
    )


def assemble_windows(
    workdir: Path,
    granularity: str,
    target: str,
    dim: int,
    lookback: Optional[int] = None,
    horizon: Optional[int] = None,
) -> tuple:
    """Build per-split WindowArrays from a work directory.

    Returns ({split: WindowArrays}, n_dropped_nan). Window definitions
    come from the published windows file; targets with any NaN bin in
    lookback or horizon are dropped and counted.
    """
    if granularity not in GRANULARITY_WINDOWS:
        raise DataContractError(f"unknown granularity {granularity!r}")
    if target not in TARGET_COLUMNS:
        raise DataContractError(f"unknown target {target!r}")
    default_l, default_h = GRANULARITY_WINDOWS[granularity]
    lookback = lookback or default_l
    horizon = horizon or default_h

    frames = {}
    for event_id in list_series_events(workdir, granularity):
        frames[event_id] = load_event_frame(workdir, granularity, event_id, dim)

    collected = {split: [] for split in SPLITS}
    dropped = 0
    for event_id, start, split in read_windows(workdir, granularity):
        frame = frames.get(event_id)
        if frame is None:
            raise DataContractError(f"window references unknown event {event_id!r}")
        stop = start + lookback + horizon
        if stop > frame.n_bins:
            raise DataContractError(
                f"window [{start}, {stop}) overruns {event_id} ({frame.n_bins} bins)"
            )
        values = frame.targets[target][start:stop]
        if np.isnan(values).any():
            dropped += 1
            continue
        look = slice(start, start + lookback)
        collected[split].append({
            "x": values[:lookback].astype(np.float32),
            "y": values[lookback:].astype(np.float32),
            "tf": time_features(frame.bin_starts[look]),
            "emb": frame.emb[look],
            "type_ids": frame.type_ids[look],
            "thread_ids": frame.thread_ids[look],
            "token_valid": frame.token_valid[look],
            "event_id": event_id,
            "start": start,
        })

    out = {}
    for split, items in collected.items():
        if not items:
            out[split] = _empty_window_arrays(lookback, horizon, TOKEN_SLOTS, dim)
            continue
        out[split] = WindowArrays(
            x=np.stack([w["x"] for w in items]),
            y=np.stack([w["y"] for w in items]),
            time_feats=np.stack([w["tf"] for w in items]),
            emb=np.stack([w["emb"] for w in items]),
            type_ids=np.stack([w["type_ids"] for w in items]),
            thread_ids=np.stack([w["thread_ids"] for w in items]),
            token_valid=np.stack([w["token_valid"] for w in items]),
            event_ids=[w["event_id"] for w in items],
            starts=[w["start"] for w in items],
        )
    return out, dropped


def apply_text_config(windows: WindowArrays, config: str) -> WindowArrays:
    """Reshape the token side of a window set for one input configuration.

    none withholds text entirely; flat keeps the vectors but erases the
    type and thread ids, presenting content without structure; structured
    passes the export through untouched. Values and windows are shared.
    """
    if config == "structured":
        return windows
    if config == "flat":
        return replace(
            windows,
            type_ids=np.zeros_like(windows.type_ids),
            thread_ids=np.zeros_like(windows.thread_ids),
        )
    if config == "none":
        return replace(
            windows,
            emb=np.zeros_like(windows.emb),
            type_ids=np.zeros_like(windows.type_ids),
            thread_ids=np.zeros_like(windows.thread_ids),
            token_valid=np.zeros_like(windows.token_valid),
        )
    raise DataContractError(f"unknown text configuration {config!r}")


def ensure_text_present(window_sets: dict, config: str) -> None:
    """flat and structured runs need at least one valid token somewhere."""
    if config == "none":
        return
    if not any(ws.token_valid.any() for ws in window_sets.values()):
        raise DataContractError(
            f"text export carries no valid tokens; the {config!r} configuration needs text"
        )


def to_tensors(windows: WindowArrays, dtype: torch.dtype = torch.float32) -> dict:
    """Torch view of one split: values, time features, and the token batch."""
    tokens = TokenBatch.build(
        embeddings=torch.as_tensor(windows.emb, dtype=dtype),
        type_ids=torch.as_tensor(windows.type_ids),
        thread_ids=torch.as_tensor(windows.thread_ids),
        token_valid=torch.as_tensor(windows.token_valid),
    )
    return {
        "x": torch.as_tensor(windows.x, dtype=dtype),
        "y": torch.as_tensor(windows.y, dtype=dtype),
        "tf": torch.as_tensor(windows.time_feats, dtype=dtype),
        "tokens": tokens,
    }
