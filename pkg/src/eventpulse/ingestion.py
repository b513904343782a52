"""Raw platform records to a unified, filtered, anonymized corpus.

The stage has three layers:

1. per-record adapters that map each platform's raw schema onto
   :class:`~eventpulse.corpus.UnifiedPost`, hashing identifiers with a
   keyed hash so reruns with one salt are stable and raw ids never leak;
2. per-post quality rules applied in a fixed priority order, each
   removal attributed to exactly one rule;
3. per-event thresholds that drop sparse or short-lived events.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Optional, Protocol

from .corpus import (
    CATEGORIES,
    InteractionKind,
    Platform,
    UnifiedPost,
    URL_RE,
    map_label,
    normalize_text,
    posts_in_order,
)

# Post-level rule thresholds.
MIN_STRIPPED_CHARS = 5
MIN_ALPHA_CHARS = 5
MAX_URL_CHAR_SHARE = 0.5
LANG_CHECK_MIN_CHARS = 20

# Event-level retention thresholds.
MIN_EVENT_POSTS = 50
MIN_EVENT_SPAN_DAYS = 3.0
MIN_EVENT_DENSITY_PER_DAY = 3.0

SECONDS_PER_DAY = 86_400


class FilterRule(str, Enum):
    """Removal attribution, one value per rule plus id-level dedup."""

    SHORT_TEXT = "short_text"
    EMOJI_ONLY = "emoji_only"
    URL_SPAM = "url_spam"
    NON_ENGLISH = "non_english"
    DUPLICATE_TEXT = "duplicate_text"
    ID_DUPLICATE = "id_duplicate"


@dataclass(frozen=True)
class FilterOutcome:
    kept: bool
    removed_by: Optional[FilterRule] = None

    def __post_init__(self) -> None:
        if self.kept and self.removed_by is not None:
            raise ValueError("kept post cannot carry a removal attribution")
        if not self.kept and self.removed_by is None:
            raise ValueError("removed post must name its rule")


KEPT = FilterOutcome(kept=True)


class RecordRejected(ValueError):
    """A raw record that cannot be unified (missing id, time, or text)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def anonymize_id(raw_id: str, salt: bytes) -> str:
    """Keyed 128-bit hash of an identifier; stable for a fixed salt."""
    return hashlib.blake2b(raw_id.encode("utf-8"), key=salt, digest_size=16).hexdigest()


def _parse_timestamp(value) -> int:
    """Accept epoch seconds (int/float) or an ISO-8601 string; return int epoch."""
    if isinstance(value, bool):
        raise RecordRejected("bad_timestamp")
    if isinstance(value, (int, float)):
        ts = int(value)
    elif isinstance(value, str):
        try:
            dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
        except ValueError:
            raise RecordRejected("bad_timestamp") from None
        if dt.tzinfo is None:
            # Zone-less stamps are read as UTC so results are machine-independent.
            dt = dt.replace(tzinfo=timezone.utc)
        ts = int(dt.timestamp())
    else:
        raise RecordRejected("bad_timestamp")
    if ts <= 0:
        raise RecordRejected("bad_timestamp")
    return ts


def _require(raw: dict, key: str):
    value = raw.get(key)
    if value is None or value == "":
        raise RecordRejected(f"missing_{key}")
    return value


def _unify_twitter(raw: dict, salt: bytes) -> dict:
    post_id = str(_require(raw, "id"))
    text = str(_require(raw, "text"))
    ts = _parse_timestamp(_require(raw, "created_at"))
    parent_raw = raw.get("in_reply_to_status_id")
    kind = InteractionKind.ROOT
    if parent_raw:
        kind = InteractionKind.REPLY
    elif raw.get("quoted_status_id"):
        parent_raw = raw.get("quoted_status_id")
        kind = InteractionKind.REPOST
    parent = anonymize_id(str(parent_raw), salt) if parent_raw else None
    return dict(
        post_id=anonymize_id(post_id, salt),
        platform=Platform.TWITTER,
        timestamp_utc=ts,
        text=text,
        parent_id=parent,
        interaction_kind=kind,
    )


_REDDIT_PREFIX_RE = re.compile(r"^t[13]_")


def _unify_reddit(raw: dict, salt: bytes) -> dict:
    post_id = str(_require(raw, "id"))
    # Comments carry `body`, submissions `title` (+ optional selftext).
    text = raw.get("body")
    if not text:
        title = raw.get("title") or ""
        selftext = raw.get("selftext") or ""
        text = (title + " " + selftext).strip() if (title or selftext) else None
    if not text:
        raise RecordRejected("missing_text")
    ts = _parse_timestamp(_require(raw, "created_utc"))
    parent_raw = raw.get("parent_id")
    parent = None
    kind = InteractionKind.ROOT
    if parent_raw:
        # Strip the t1_/t3_ kind prefix so the hash matches the parent's own id.
        parent = anonymize_id(_REDDIT_PREFIX_RE.sub("", str(parent_raw)), salt)
        kind = InteractionKind.REPLY
    return dict(
        post_id=anonymize_id(post_id, salt),
        platform=Platform.REDDIT,
        timestamp_utc=ts,
        text=str(text),
        parent_id=parent,
        interaction_kind=kind,
    )


def _unify_threads(raw: dict, salt: bytes) -> dict:
    post_id = str(_require(raw, "id"))
    text = str(_require(raw, "text"))
    ts = _parse_timestamp(_require(raw, "timestamp"))
    parent_raw = raw.get("replied_to_id")
    kind = InteractionKind.ROOT
    if parent_raw:
        kind = InteractionKind.REPLY
    elif raw.get("reposted_id"):
        parent_raw = raw.get("reposted_id")
        kind = InteractionKind.REPOST
    parent = anonymize_id(str(parent_raw), salt) if parent_raw else None
    return dict(
        post_id=anonymize_id(post_id, salt),
        platform=Platform.THREADS,
        timestamp_utc=ts,
        text=text,
        parent_id=parent,
        interaction_kind=kind,
    )


def _unify_synthetic(raw: dict, salt: bytes) -> dict:
    post_id = str(_require(raw, "id"))
    text = str(_require(raw, "text"))
    ts = _parse_timestamp(_require(raw, "timestamp"))
    parent_raw = raw.get("parent_id")
    kind = InteractionKind.ROOT
    if parent_raw:
        kind = InteractionKind(raw.get("kind", "reply"))
        if kind is InteractionKind.ROOT:
            raise RecordRejected("bad_kind")
    sentiment = raw.get("sentiment")
    if sentiment is not None:
        try:
            sentiment = map_label(sentiment) if isinstance(sentiment, str) else int(sentiment)
        except (ValueError, TypeError):
            raise RecordRejected("bad_sentiment") from None
    return dict(
        post_id=anonymize_id(post_id, salt),
        platform=Platform.SYNTHETIC,
        timestamp_utc=ts,
        text=text,
        parent_id=anonymize_id(str(parent_raw), salt) if parent_raw else None,
        interaction_kind=kind,
        sentiment=sentiment,
    )


_ADAPTERS: dict = {
    Platform.TWITTER: _unify_twitter,
    Platform.REDDIT: _unify_reddit,
    Platform.THREADS: _unify_threads,
    Platform.SYNTHETIC: _unify_synthetic,
}


def unify_record(
    raw: dict, salt: bytes, default_event: Optional[str] = None
) -> tuple[UnifiedPost, Optional[str]]:
    """Map one raw record to (UnifiedPost, category or None).

    Raises :class:`RecordRejected` when required fields are absent or
    malformed. ``default_event`` backs the event id when the record
    carries none (typically the source file's stem).
    """
    platform_raw = raw.get("platform")
    try:
        platform = Platform(platform_raw)
    except ValueError:
        raise RecordRejected("unknown_platform") from None
    fields = _ADAPTERS[platform](raw, salt)
    event_raw = raw.get("event_id")
    event_id = str(event_raw) if event_raw else default_event
    if not event_id:
        raise RecordRejected("missing_event_id")
    category = raw.get("category")
    if category is not None and category not in CATEGORIES:
        raise RecordRejected("unknown_category")
    try:
        post = UnifiedPost(event_id=event_id, **fields)
    except Exception as exc:
        raise RecordRejected(f"schema: {exc}") from exc
    return post, category


# --- language detection -------------------------------------------------

class DetectorError(RuntimeError):
    """A language detector that could not reach a verdict."""


class EnglishDetector(Protocol):
    def is_english(self, text: str) -> bool:
        """True when the text reads as English. May raise DetectorError."""
        ...


# Frequent English word forms; membership is the detector's main signal.
_COMMON_ENGLISH = frozenset(
    """the of and a to in is you that it he was for on are as with his they i
    at be this have from or one had by but not what all were we when your can
    said there use an each which she do how their if will up out so about""".split()
)

_WORD_RE = re.compile(r"[a-z']+")


class HeuristicEnglishDetector:
    """Dependency-free default: script ratio, then common-word hit rate.

    Texts whose letters are mostly non-ASCII are called non-English
    outright; otherwise at least one word in eight must be a frequent
    English form. Short texts never reach this detector (the length gate
    lives in the filter), so sparse evidence is acceptable.
    """

    min_ascii_letter_ratio = 0.75
    min_common_word_rate = 0.125

    def is_english(self, text: str) -> bool:
        letters = [ch for ch in text if ch.isalpha()]
        if not letters:
            return True
        ascii_letters = sum(1 for ch in letters if ch.isascii())
        if ascii_letters / len(letters) < self.min_ascii_letter_ratio:
            return False
        words = _WORD_RE.findall(text.lower())
        if not words:
            return True
        hits = sum(1 for w in words if w in _COMMON_ENGLISH)
        return hits / len(words) >= self.min_common_word_rate


# --- post-level rules ---------------------------------------------------

def _stripped_length(text: str) -> int:
    return len(text.strip())


def _alpha_count(text: str) -> int:
    return sum(1 for ch in text if ch.isalpha())


def _url_char_share(text: str) -> float:
    url_chars = sum(len(m.group(0)) for m in URL_RE.finditer(text))
    return url_chars / len(text) if text else 0.0


def _text_without_urls(text: str) -> str:
    return WHITESPACE_COLLAPSE_RE.sub(" ", URL_RE.sub(" ", text)).strip()


WHITESPACE_COLLAPSE_RE = re.compile(r"\s+")


def filter_post(
    post: UnifiedPost,
    seen_normalized: set,
    detector: EnglishDetector,
    detector_failures: Optional[list] = None,
) -> FilterOutcome:
    """Apply the five quality rules in priority order.

    ``seen_normalized`` holds normalized texts of previously kept posts of
    the same event; the caller adds the post's normalized text after a
    kept verdict. A detector failure keeps the post and, when
    ``detector_failures`` is given, appends the post id to it.
    """
    text = post.text
    if _stripped_length(text) < MIN_STRIPPED_CHARS:
        return FilterOutcome(kept=False, removed_by=FilterRule.SHORT_TEXT)
    if _alpha_count(text) < MIN_ALPHA_CHARS:
        return FilterOutcome(kept=False, removed_by=FilterRule.EMOJI_ONLY)
    if _url_char_share(text) > MAX_URL_CHAR_SHARE:
        return FilterOutcome(kept=False, removed_by=FilterRule.URL_SPAM)
    without_urls = _text_without_urls(text)
    if len(without_urls) >= LANG_CHECK_MIN_CHARS:
        try:
            english = detector.is_english(without_urls)
        except DetectorError:
            if detector_failures is not None:
                detector_failures.append(post.post_id)
            english = True
        if not english:
            return FilterOutcome(kept=False, removed_by=FilterRule.NON_ENGLISH)
    if normalize_text(text) in seen_normalized:
        return FilterOutcome(kept=False, removed_by=FilterRule.DUPLICATE_TEXT)
    return KEPT


def deduplicate_ids(posts: Iterable[UnifiedPost]) -> tuple[list, int]:
    """Drop repeated post ids, keeping the chronologically first."""
    kept: list = []
    seen: set = set()
    removed = 0
    for post in posts_in_order(posts):
        if post.post_id in seen:
            removed += 1
            continue
        seen.add(post.post_id)
        kept.append(post)
    return kept, removed


@dataclass
class EventFilterStats:
    event_id: str
    n_raw: int = 0
    n_id_duplicates: int = 0
    removed_by_rule: dict = field(default_factory=dict)
    detector_failures: int = 0
    n_kept: int = 0
    span_days: float = 0.0
    density_per_day: float = 0.0
    retained: bool = False
    reject_reason: Optional[str] = None

    def to_json_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "n_raw": self.n_raw,
            "n_id_duplicates": self.n_id_duplicates,
            "removed_by_rule": {r.value: self.removed_by_rule.get(r, 0) for r in FilterRule},
            "detector_failures": self.detector_failures,
            "n_kept": self.n_kept,
            "span_days": self.span_days,
            "density_per_day": self.density_per_day,
            "retained": self.retained,
            "reject_reason": self.reject_reason,
        }


def event_passes_thresholds(
    n_posts: int,
    span_days: float,
    min_posts: int = MIN_EVENT_POSTS,
    min_span_days: float = MIN_EVENT_SPAN_DAYS,
    min_density: float = MIN_EVENT_DENSITY_PER_DAY,
) -> tuple[bool, Optional[str]]:
    """Jointly enforce the volume, span, and density floors."""
    if n_posts < min_posts:
        return False, "too_few_posts"
    if span_days < min_span_days:
        return False, "span_too_short"
    density = n_posts / span_days if span_days > 0 else float("inf")
    if density < min_density:
        return False, "density_too_low"
    return True, None


def filter_event_posts(
    event_id: str,
    posts: Iterable[UnifiedPost],
    detector: Optional[EnglishDetector] = None,
    min_posts: int = MIN_EVENT_POSTS,
    min_span_days: float = MIN_EVENT_SPAN_DAYS,
    min_density: float = MIN_EVENT_DENSITY_PER_DAY,
) -> tuple[list, EventFilterStats]:
    """Run id dedup, the post rules, then the event thresholds.

    Returns the retained posts (empty when the event is rejected) and the
    per-event accounting used in the filter report.
    """
    detector = detector if detector is not None else HeuristicEnglishDetector()
    posts = list(posts)
    stats = EventFilterStats(event_id=event_id, n_raw=len(posts))

    deduped, n_dups = deduplicate_ids(posts)
    stats.n_id_duplicates = n_dups
    if n_dups:
        stats.removed_by_rule[FilterRule.ID_DUPLICATE] = n_dups

    kept: list = []
    seen_normalized: set = set()
    failures: list = []
    for post in deduped:
        outcome = filter_post(post, seen_normalized, detector, failures)
        if outcome.kept:
            kept.append(post)
            seen_normalized.add(normalize_text(post.text))
        else:
            rule = outcome.removed_by
            stats.removed_by_rule[rule] = stats.removed_by_rule.get(rule, 0) + 1
    stats.detector_failures = len(failures)
    stats.n_kept = len(kept)

    if kept:
        span_seconds = kept[-1].timestamp_utc - kept[0].timestamp_utc
        stats.span_days = span_seconds / SECONDS_PER_DAY
        stats.density_per_day = (
            len(kept) / stats.span_days if stats.span_days > 0 else float("inf")
        )
    ok, reason = event_passes_thresholds(
        len(kept), stats.span_days, min_posts, min_span_days, min_density
    )
    stats.retained = ok
    stats.reject_reason = reason
    return (kept if ok else []), stats
