"""Interaction edges and per-bin reply activity.

Edges point from a reply or repost to its parent. A parent outside the
retained corpus still produces an edge, flagged dangling, because the
child's own interactive nature is real even when the target was filtered
or never collected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import InteractionKind, UnifiedPost
from .series import bin_start


@dataclass(frozen=True)
class InteractionEdge:
    src: str            # the replying / reposting post
    dst: str            # its parent
    kind: str           # reply | repost
    timestamp_utc: int  # the child's timestamp
    dangling: bool      # parent not among retained posts


def build_edges(posts: Sequence[UnifiedPost]) -> list:
    """One edge per non-root post, in (timestamp, src) order."""
    known = {p.post_id for p in posts}
    edges = []
    for p in posts:
        if p.parent_id is None:
            continue
        edges.append(
            InteractionEdge(
                src=p.post_id,
                dst=p.parent_id,
                kind=p.interaction_kind.value,
                timestamp_utc=p.timestamp_utc,
                dangling=p.parent_id not in known,
            )
        )
    edges.sort(key=lambda e: (e.timestamp_utc, e.src))
    return edges


def reply_ratios(
    posts: Sequence[UnifiedPost],
    bin_starts: Sequence[int],
    bin_width: int,
) -> list:
    """Share of interactive posts per bin, aligned with ``bin_starts``.

    A post is interactive when it is itself a reply or repost (dangling
    parents included) or receives at least one reply from any retained
    post in the event, regardless of the replier's bin. Bins with no
    posts get None.
    """
    replied_to = {p.parent_id for p in posts if p.parent_id is not None}
    index = {b: i for i, b in enumerate(bin_starts)}
    totals = [0] * len(bin_starts)
    interactive = [0] * len(bin_starts)
    for p in posts:
        i = index.get(bin_start(p.timestamp_utc, bin_width))
        if i is None:
            continue  # outside the active period
        totals[i] += 1
        if p.parent_id is not None or p.post_id in replied_to:
            interactive[i] += 1
    return [
        (interactive[i] / totals[i]) if totals[i] > 0 else None
        for i in range(len(bin_starts))
    ]


def high_interaction_threshold(ratios: Sequence[float], top_percent: float) -> float:
    """Reply-ratio cutoff so that roughly ``top_percent``% of bins qualify.

    Linear-interpolation percentile over the pooled ratios.
    """
    if not 0 < top_percent <= 100:
        raise ValueError(f"top_percent must be in (0, 100], got {top_percent}")
    if len(ratios) == 0:
        raise ValueError("no ratios to pool")
    return float(np.percentile(np.asarray(ratios, dtype=float), 100.0 - top_percent))


def high_interaction_subset(
    bin_ratios: dict, top_percent: float
) -> set:
    """Keys of bins whose ratio reaches the pooled percentile cutoff.

    ``bin_ratios`` maps an opaque bin key to its reply ratio. Empty input
    gives the empty set. Subsets nest: a looser ``top_percent`` is a
    superset of a tighter one.
    """
    if not bin_ratios:
        return set()
    cutoff = high_interaction_threshold(list(bin_ratios.values()), top_percent)
    return {key for key, ratio in bin_ratios.items() if ratio >= cutoff}
