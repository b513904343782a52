"""Shared data model: posts, events, sentiment labels, text normalization.

Everything downstream (filtering, series construction, views, graphs)
speaks in terms of the types defined here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

# Event domains used by the category-held-out protocol.
CATEGORIES = (
    "natural_disaster",
    "political",
    "social_movement",
    "technology",
    "sports_entertainment",
)


class Platform(str, Enum):
    TWITTER = "twitter"
    REDDIT = "reddit"
    THREADS = "threads"
    SYNTHETIC = "synthetic"


class InteractionKind(str, Enum):
    ROOT = "root"
    REPLY = "reply"
    REPOST = "repost"


# Three-way sentiment classes and their numeric scores.
LABEL_SCORES = {"positive": 1, "neutral": 0, "negative": -1}
SCORE_LABELS = {score: label for label, score in LABEL_SCORES.items()}


class LabelError(ValueError):
    """Raised for a sentiment label outside the three-class scheme."""


def map_label(label: str) -> int:
    """Map a class label to its score: positive 1, neutral 0, negative -1."""
    try:
        return LABEL_SCORES[label]
    except KeyError:
        raise LabelError(f"unknown sentiment label: {label!r}") from None


def score_to_label(score: int) -> str:
    try:
        return SCORE_LABELS[score]
    except KeyError:
        raise LabelError(f"unknown sentiment score: {score!r}") from None


# URL spans: scheme-prefixed or a bare www. prefix, up to whitespace.
URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
# @mentions; the lookbehind keeps e-mail-like tokens intact.
MENTION_RE = re.compile(r"(?<!\w)@\w+")
WHITESPACE_RE = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Canonical form used for duplicate detection.

    Lowercases, strips URLs and @mentions, collapses runs of whitespace.
    Idempotent: normalize_text(normalize_text(t)) == normalize_text(t).
    """
    out = text.lower()
    out = URL_RE.sub(" ", out)
    out = MENTION_RE.sub(" ", out)
    out = WHITESPACE_RE.sub(" ", out)
    return out.strip()


class SchemaError(ValueError):
    """Raised when a record violates the unified post schema."""


@dataclass
class UnifiedPost:
    """One post in platform-independent form.

    Identifiers are anonymized upstream; no author field exists by design.
    ``sentiment`` is the numeric score (-1/0/1) once the post is labeled.
    """

    post_id: str
    event_id: str
    platform: Platform
    timestamp_utc: int
    text: str
    parent_id: Optional[str] = None
    interaction_kind: InteractionKind = InteractionKind.ROOT
    sentiment: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.post_id:
            raise SchemaError("post_id must be non-empty")
        if not self.event_id:
            raise SchemaError("event_id must be non-empty")
        if not isinstance(self.timestamp_utc, int) or self.timestamp_utc <= 0:
            raise SchemaError(f"timestamp_utc must be a positive int, got {self.timestamp_utc!r}")
        if not self.text:
            raise SchemaError("text must be non-empty")
        # A parent is present exactly when the post is a reply or repost.
        if (self.parent_id is None) != (self.interaction_kind == InteractionKind.ROOT):
            raise SchemaError(
                f"parent_id {self.parent_id!r} inconsistent with kind {self.interaction_kind}"
            )
        if self.sentiment is not None and self.sentiment not in SCORE_LABELS:
            raise SchemaError(f"sentiment must be one of -1/0/1, got {self.sentiment!r}")

    def to_json_dict(self) -> dict:
        return {
            "post_id": self.post_id,
            "event_id": self.event_id,
            "platform": self.platform.value,
            "timestamp_utc": self.timestamp_utc,
            "text": self.text,
            "parent_id": self.parent_id,
            "interaction_kind": self.interaction_kind.value,
            "sentiment": self.sentiment,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "UnifiedPost":
        try:
            return cls(
                post_id=obj["post_id"],
                event_id=obj["event_id"],
                platform=Platform(obj["platform"]),
                timestamp_utc=obj["timestamp_utc"],
                text=obj["text"],
                parent_id=obj.get("parent_id"),
                interaction_kind=InteractionKind(obj.get("interaction_kind", "root")),
                sentiment=obj.get("sentiment"),
            )
        except (KeyError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"bad unified post record: {exc}") from exc


@dataclass
class EventRecord:
    """All retained posts of one event, sorted chronologically."""

    event_id: str
    category: str
    posts: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise SchemaError(f"unknown category {self.category!r}")
        self.posts = sorted(self.posts, key=lambda p: (p.timestamp_utc, p.post_id))

    @property
    def span_seconds(self) -> int:
        if not self.posts:
            return 0
        return self.posts[-1].timestamp_utc - self.posts[0].timestamp_utc


def posts_in_order(posts: Iterable[UnifiedPost]) -> list:
    """Stable chronological order: (timestamp, post_id)."""
    return sorted(posts, key=lambda p: (p.timestamp_utc, p.post_id))
