"""Synthetic event corpora with known ground truth.

Two volume regimes are supported: a burst (sharp early peak, exponential
decay) and a sustained discussion (weekly plateau with periodic
reactivation). Posts get English template texts built from a stopword-
heavy vocabulary plus a serial token, so the quality filters keep them
and duplicate detection never fires; every generated post carries a gold
sentiment label drawn from a drifting three-class distribution. Output is
the same raw-record JSONL that ingestion consumes, platform "synthetic".
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import CATEGORIES

SECONDS_PER_DAY = 86_400

_SUBJECTS = (
    "storm", "crowd", "coverage", "rally", "update", "broadcast", "outage",
    "match", "launch", "debate", "report", "footage", "response", "traffic",
)
_STATES = (
    "growing", "spreading", "calming", "shifting", "surging", "fading",
    "holding", "changing", "slowing", "building",
)
_TAILS = (
    "across the region", "near the coast", "in the city", "for most people",
    "after the announcement", "through the night", "on every channel",
    "around the stadium", "at the main venue", "since this morning",
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    event_id: str
    category: str
    regime: str               # burst | sustained
    n_days: int
    base_rate: float          # mean posts per day away from peaks
    peak_multiplier: float    # peak intensity relative to base_rate
    reply_prob: float         # chance a post replies to an earlier one
    sentiment_drift: float    # per-day drift of the positive-vs-negative logit
    seed: int

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise SynthError(f"unknown category {self.category!r}")
        if self.regime not in ("burst", "sustained"):
            raise SynthError(f"unknown regime {self.regime!r}")
        if self.n_days < 1:
            raise SynthError("n_days must be positive")
        if self.base_rate <= 0:
            raise SynthError("base_rate must be positive")
        if self.peak_multiplier < 1:
            raise SynthError("peak_multiplier must be at least 1")
        if not 0.0 <= self.reply_prob <= 1.0:
            raise SynthError("reply_prob must be within [0, 1]")


def _daily_intensity(spec: SynthSpec, day: int) -> float:
    base, mult, n = spec.base_rate, spec.peak_multiplier, spec.n_days
    if spec.regime == "burst":
        peak_day = max(1.0, 0.15 * n)
        decay = max(2.0, n / 6.0)
        if day <= peak_day:
            ramp = (day / peak_day) ** 2
        else:
            ramp = math.exp(-(day - peak_day) / decay)
        return base + base * (mult - 1.0) * ramp
    # sustained: weekly modulation plus gaussian reactivation bumps
    level = base * (1.0 + 0.3 * math.sin(2.0 * math.pi * day / 7.0))
    for center_frac in (0.2, 0.5, 0.8):
        center = center_frac * n
        level += base * (mult - 1.0) * 0.5 * math.exp(-((day - center) ** 2) / (2.0 * 2.0 ** 2))
    return max(level, 0.05 * base)


def _sentiment_probs(spec: SynthSpec, day: int) -> np.ndarray:
    # Positive and negative logits drift in opposite directions.
    shift = spec.sentiment_drift * (day - spec.n_days / 2.0)
    logits = np.array([shift, 0.25, -shift])  # positive, neutral, negative
    exp = np.exp(logits - logits.max())
    return exp / exp.sum()


_LABELS = ("positive", "neutral", "negative")


def _make_text(rng: np.random.Generator, serial: int) -> str:
    subject = _SUBJECTS[rng.integers(0, len(_SUBJECTS))]
    state = _STATES[rng.integers(0, len(_STATES))]
    tail = _TAILS[rng.integers(0, len(_TAILS))]
    extra = ""
    if rng.random() < 0.4:
        extra = f" and the {_SUBJECTS[rng.integers(0, len(_SUBJECTS))]} is {_STATES[rng.integers(0, len(_STATES))]}"
    return f"the {subject} is {state} {tail}{extra} r{serial}"


def generate_event(spec: SynthSpec, epoch_start: int = 1_640_995_200) -> tuple[list, dict]:
    """Build one event's raw records and its gold label map.

    Records come out in chronological order; ``epoch_start`` anchors day
    zero (default 2022-01-01T00:00:00Z). Returns ``(records, gold)``
    where gold maps raw post id to its label string.
    """
    rng = np.random.default_rng(spec.seed)
    records: list = []
    timestamps: list = []  # nondecreasing, parallel to records
    gold: dict = {}
    serial = 0
    for day in range(spec.n_days):
        lam = _daily_intensity(spec, day)
        n_posts = int(rng.poisson(lam))
        offsets = np.sort(rng.integers(0, SECONDS_PER_DAY, size=n_posts))
        probs = _sentiment_probs(spec, day)
        for off in offsets:
            ts = epoch_start + day * SECONDS_PER_DAY + int(off)
            pid = f"{spec.event_id}-p{serial:06d}"
            label = _LABELS[rng.choice(3, p=probs)]
            record = {
                "platform": "synthetic",
                "id": pid,
                "event_id": spec.event_id,
                "category": spec.category,
                "timestamp": ts,
                "text": _make_text(rng, serial),
                "sentiment": label,
            }
            # Reply to a uniformly chosen strictly earlier post; records
            # are generated in timestamp order, so a bisect finds them.
            n_earlier = bisect.bisect_left(timestamps, ts)
            if n_earlier and rng.random() < spec.reply_prob:
                parent = records[int(rng.integers(0, n_earlier))]
                record["parent_id"] = parent["id"]
                record["kind"] = "repost" if rng.random() < 0.2 else "reply"
            records.append(record)
            timestamps.append(ts)
            gold[pid] = label
            serial += 1
    return records, gold


def generate_label_noise(gold: dict, alpha: float, seed: int) -> dict:
    """Flip each label to a uniformly random different class with prob alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise SynthError("alpha must be within [0, 1]")
    rng = np.random.default_rng(seed)
    noisy: dict = {}
    for pid in sorted(gold):
        label = gold[pid]
        if rng.random() < alpha:
            others = [l for l in _LABELS if l != label]
            label = others[int(rng.integers(0, len(others)))]
        noisy[pid] = label
    return noisy


def write_raw_jsonl(records: Sequence[dict], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def default_corpus_specs(
    n_events: int,
    seed: int = 0,
    n_days: int = 45,
    base_rate: float = 40.0,
) -> list:
    """A mixed bag of event specs cycling through categories and regimes."""
    specs = []
    for i in range(n_events):
        specs.append(
            SynthSpec(
                event_id=f"event{i:03d}",
                category=CATEGORIES[i % len(CATEGORIES)],
                regime="burst" if i % 2 == 0 else "sustained",
                n_days=n_days + (i % 4) * 5,
                base_rate=base_rate * (1.0 + 0.2 * (i % 3)),
                peak_multiplier=3.0 + (i % 3),
                reply_prob=0.35 + 0.05 * (i % 4),
                sentiment_drift=(-0.06, 0.0, 0.04, 0.08)[i % 4],
                seed=seed * 10_000 + i,
            )
        )
    return specs
