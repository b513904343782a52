"""Per-event time series: calendar bins, targets, splits, normalization.

Construction for one (event, granularity) pair is fully independent of
every other pair. Bins are half-open ``[start, start + width)`` intervals
anchored on UTC midnight, so the sub-daily widths land on 00:00/12:00 and
00/06/12/18 wall-clock boundaries automatically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .corpus import EventRecord

SECONDS_PER_DAY = 86_400

# Bin widths in seconds per granularity name.
GRANULARITIES = {
    "1d": SECONDS_PER_DAY,
    "12h": SECONDS_PER_DAY // 2,
    "6h": SECONDS_PER_DAY // 4,
}

# Forecasting geometry (lookback, horizon) per granularity.
GRANULARITY_WINDOWS = {
    "1d": (14, 7),
    "12h": (28, 14),
    "6h": (56, 28),
}

# A series must cover at least lookback + horizon at the daily scale.
MIN_SERIES_BINS = 21

TRAIN_FRACTION = 0.7
VAL_FRACTION = 0.1

# A bin is active when its count reaches this share of the timeline mean.
ACTIVITY_MEAN_FRACTION = 0.05

SPLIT_NAMES = ("train", "val", "test")


class BuildError(RuntimeError):
    """Raised when series construction preconditions are violated."""


def bin_start(timestamp_utc: int, width_seconds: int) -> int:
    """Epoch second of the calendar bin containing the timestamp."""
    return (timestamp_utc // width_seconds) * width_seconds


def derive_bin_targets(scores: Sequence[int]) -> tuple[Optional[int], Optional[float]]:
    """(count, mean sentiment) for one bin; empty bin gives (None, None)."""
    if not scores:
        return None, None
    return len(scores), sum(scores) / len(scores)


def detect_active_period(counts: Sequence[int]) -> Optional[tuple[int, int]]:
    """Trim leading and trailing low-activity bins.

    The threshold is a fixed fraction of the timeline-mean count; the
    result is the index span from the first qualifying bin scanning from
    the left to the first from the right. A timeline with no posts has no
    active period.
    """
    total = sum(counts)
    if total == 0 or not counts:
        return None
    tau = ACTIVITY_MEAN_FRACTION * (total / len(counts))
    left = 0
    while counts[left] < tau:
        left += 1
    right = len(counts) - 1
    while counts[right] < tau:
        right -= 1
    return left, right


def chronological_split(n_bins: int) -> list:
    """70/10/20 contiguous split tags, floors on train and val."""
    if n_bins < MIN_SERIES_BINS:
        raise BuildError(f"need at least {MIN_SERIES_BINS} bins, got {n_bins}")
    n_train = math.floor(TRAIN_FRACTION * n_bins)
    n_val = math.floor(VAL_FRACTION * n_bins)
    n_test = n_bins - n_train - n_val
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def _segment_bounds(splits: Sequence[str]) -> list:
    bounds = []
    start = 0
    for i in range(1, len(splits) + 1):
        if i == len(splits) or splits[i] != splits[start]:
            bounds.append((splits[start], start, i))
            start = i
    return bounds


def impute_split_local(
    values: Sequence[Optional[float]], splits: Sequence[str]
) -> tuple[list, list]:
    """Forward-fill gaps without crossing split boundaries.

    A leading gap inside a segment is back-filled from the segment's first
    observed value. Segments with no observations at all are left missing
    and their split names are returned as flags.
    """
    if len(values) != len(splits):
        raise BuildError("values and splits must align")
    out: list = list(values)
    flagged: list = []
    for name, lo, hi in _segment_bounds(splits):
        observed = [i for i in range(lo, hi) if values[i] is not None]
        if not observed:
            flagged.append(name)
            continue
        first = observed[0]
        for i in range(lo, first):
            out[i] = values[first]
        last_seen = values[first]
        for i in range(first, hi):
            if values[i] is not None:
                last_seen = values[i]
            else:
                out[i] = last_seen
    return out, flagged


def zscore_from_train(
    values: Sequence[Optional[float]], splits: Sequence[str]
) -> tuple[list, float, float]:
    """Normalize by train-split mean and population std.

    Zero train variance yields the constant zero series (std stored as
    0.0). Missing values stay missing.
    """
    train_vals = [v for v, s in zip(values, splits) if s == "train" and v is not None]
    if not train_vals:
        raise BuildError("train segment has no observed values")
    mu = sum(train_vals) / len(train_vals)
    var = sum((v - mu) ** 2 for v in train_vals) / len(train_vals)
    sigma = math.sqrt(var)
    if sigma == 0.0:
        normalized = [0.0 if v is not None else None for v in values]
    else:
        normalized = [((v - mu) / sigma) if v is not None else None for v in values]
    return normalized, mu, sigma


@dataclass
class EventSeries:
    """One event at one granularity, ready for windowing and export."""

    event_id: str
    category: str
    granularity: str
    bin_width: int
    bin_starts: list
    counts: list          # raw counts, None for empty bins
    sentiments: list      # raw mean sentiment, None for empty bins
    splits: list
    counts_z: list        # imputed + normalized
    sentiments_z: list
    norm_stats: dict      # mu_c, sigma_c, mu_s, sigma_s
    missing_segments: list = field(default_factory=list)
    reply_ratios: list = field(default_factory=list)  # None where count is 0

    @property
    def n_bins(self) -> int:
        return len(self.bin_starts)

    def values_for(self, target: str) -> list:
        if target == "count":
            return self.counts_z
        if target == "sentiment":
            return self.sentiments_z
        raise BuildError(f"unknown target {target!r}")


def build_event_series(
    event: EventRecord,
    granularity: str,
    min_bins: int = MIN_SERIES_BINS,
) -> tuple[Optional[EventSeries], Optional[str]]:
    """Build the series for one granularity, or explain why not.

    Returns ``(series, None)`` on success and ``(None, reason)`` when the
    event is excluded at this granularity.
    """
    width = GRANULARITIES[granularity]
    posts = event.posts
    if not posts:
        return None, "no_posts"
    for p in posts:
        if p.sentiment is None:
            raise BuildError(f"post {p.post_id} has no sentiment label")

    first_bin = bin_start(posts[0].timestamp_utc, width)
    last_bin = bin_start(posts[-1].timestamp_utc, width)
    n_timeline = (last_bin - first_bin) // width + 1
    scores_per_bin: list = [[] for _ in range(n_timeline)]
    for p in posts:
        idx = (bin_start(p.timestamp_utc, width) - first_bin) // width
        scores_per_bin[idx].append(p.sentiment)

    activity = [len(s) for s in scores_per_bin]
    span = detect_active_period(activity)
    if span is None:
        return None, "no_active_bins"
    lo, hi = span
    scores_per_bin = scores_per_bin[lo : hi + 1]
    n_bins = len(scores_per_bin)
    if n_bins < min_bins:
        return None, "too_few_bins"

    counts: list = []
    sentiments: list = []
    for scores in scores_per_bin:
        c, s = derive_bin_targets(scores)
        counts.append(c)
        sentiments.append(s)

    splits = chronological_split(n_bins)
    counts_f = [float(c) if c is not None else None for c in counts]
    imputed_c, flags_c = impute_split_local(counts_f, splits)
    imputed_s, flags_s = impute_split_local(sentiments, splits)
    if "train" in flags_c or "train" in flags_s:
        return None, "empty_train_segment"
    counts_z, mu_c, sigma_c = zscore_from_train(imputed_c, splits)
    sentiments_z, mu_s, sigma_s = zscore_from_train(imputed_s, splits)

    series = EventSeries(
        event_id=event.event_id,
        category=event.category,
        granularity=granularity,
        bin_width=width,
        bin_starts=[first_bin + (lo + i) * width for i in range(n_bins)],
        counts=counts,
        sentiments=sentiments,
        splits=splits,
        counts_z=counts_z,
        sentiments_z=sentiments_z,
        norm_stats={"mu_c": mu_c, "sigma_c": sigma_c, "mu_s": mu_s, "sigma_s": sigma_s},
        missing_segments=sorted(set(flags_c) | set(flags_s)),
        reply_ratios=[None] * n_bins,
    )
    return series, None


@dataclass(frozen=True)
class WindowSpec:
    """One forecasting window: lookback starts at ``start``."""

    event_id: str
    start: int
    split: str


def make_windows(
    event_id: str, splits: Sequence[str], lookback: int, horizon: int
) -> list:
    """Enumerate stride-1 windows and assign each to a split.

    A window belongs to the split that strictly contains its full horizon.
    Straddling windows are dropped, except the canonical final window
    (horizon = the last ``horizon`` bins), which is always admitted as a
    test window so every eligible series contributes at least one.
    """
    n = len(splits)
    canonical = n - (lookback + horizon)
    out: list = []
    for start in range(0, n - lookback - horizon + 1):
        h_lo = start + lookback
        h_splits = set(splits[h_lo : h_lo + horizon])
        if len(h_splits) == 1:
            out.append(WindowSpec(event_id, start, h_splits.pop()))
        elif start == canonical:
            out.append(WindowSpec(event_id, start, "test"))
    return out


def window_values(
    values: Sequence[Optional[float]], spec: WindowSpec, lookback: int, horizon: int
) -> tuple[list, list]:
    lo = spec.start
    mid = lo + lookback
    return list(values[lo:mid]), list(values[mid : mid + horizon])
