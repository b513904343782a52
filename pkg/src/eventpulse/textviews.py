"""Paired textual views of each bin: structured threads and a flat feed.

Per bin, up to three root posts are chosen by how much in-bin discussion
they attract, each with up to two earliest in-bin replies. Bins that have
no root posts fall back to their three earliest posts as singleton
threads. Both renderings draw from exactly the same selected posts; only
the arrangement differs. A fixed token grid (three threads of three
slots) describes the selection for downstream consumers that need
structure without parsing strings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .corpus import InteractionKind, UnifiedPost
from .series import bin_start

MAX_THREADS = 3          # root posts per bin
MAX_REPLIES = 2          # replies kept per root
TOKEN_SLOTS = MAX_THREADS * (1 + MAX_REPLIES)  # fixed grid of 9
TRUNCATE_CHARS = 1_500   # Unicode scalars kept before the ellipsis
ELLIPSIS = "..."


class ViewError(RuntimeError):
    """Raised when a view references a post the corpus cannot supply."""


@dataclass(frozen=True)
class ThreadSelection:
    main_id: str
    reply_ids: tuple


@dataclass
class BinSelection:
    bin_start_utc: int
    threads: list
    fallback: bool  # no root posts; earliest posts used as singletons

    @property
    def selected_ids(self) -> list:
        out = []
        for t in self.threads:
            out.append(t.main_id)
            out.extend(t.reply_ids)
        return out


def select_bin_threads(bin_start_utc: int, bin_posts: Sequence[UnifiedPost]) -> BinSelection:
    """Pick the bin's representative threads.

    Roots are ranked by in-bin reply count (replies and reposts both
    count), ties broken by earlier timestamp then post id. Replies under
    a chosen root are its earliest in-bin children.
    """
    by_order = sorted(bin_posts, key=lambda p: (p.timestamp_utc, p.post_id))
    roots = [p for p in by_order if p.interaction_kind is InteractionKind.ROOT]
    if not roots:
        singles = [ThreadSelection(p.post_id, ()) for p in by_order[:MAX_THREADS]]
        return BinSelection(bin_start_utc, singles, fallback=True)

    children: dict = {}
    for p in by_order:
        if p.parent_id is not None:
            children.setdefault(p.parent_id, []).append(p)

    ranked = sorted(
        roots,
        key=lambda p: (-len(children.get(p.post_id, ())), p.timestamp_utc, p.post_id),
    )
    threads = []
    for root in ranked[:MAX_THREADS]:
        replies = children.get(root.post_id, [])[:MAX_REPLIES]
        threads.append(ThreadSelection(root.post_id, tuple(r.post_id for r in replies)))
    return BinSelection(bin_start_utc, threads, fallback=False)


def assign_pseudonyms(selections: Sequence[BinSelection]) -> dict:
    """User1, User2, ... per post id, by first appearance across bins.

    Appearance order is bin order, then thread order, main before its
    replies, which makes the naming independent of which view is rendered
    first.
    """
    names: dict = {}
    for sel in selections:
        for pid in sel.selected_ids:
            if pid not in names:
                names[pid] = f"User{len(names) + 1}"
    return names


def _truncate(text: str) -> str:
    if len(text) > TRUNCATE_CHARS:
        return text[:TRUNCATE_CHARS] + ELLIPSIS
    return text


def _texts_for(selection: BinSelection, posts_by_id: dict) -> dict:
    out = {}
    for pid in selection.selected_ids:
        post = posts_by_id.get(pid)
        if post is None:
            raise ViewError(f"selected post {pid} missing from corpus")
        out[pid] = post.text
    return out


def render_structured(
    selection: BinSelection,
    posts_by_id: dict,
    names: dict,
    truncate: bool = True,
) -> str:
    """Thread-shaped rendering: mains with their replies indented by marker."""
    texts = _texts_for(selection, posts_by_id)
    lines = []
    for thread in selection.threads:
        lines.append(f"{names[thread.main_id]} said: {texts[thread.main_id]}")
        for rid in thread.reply_ids:
            lines.append(f">> {names[rid]} replied: {texts[rid]}")
    rendered = "\n".join(lines)
    return _truncate(rendered) if truncate else rendered


def render_flat(
    selection: BinSelection,
    posts_by_id: dict,
    names: dict,
    truncate: bool = True,
) -> str:
    """Feed-shaped rendering: the same posts, chronological, no threading."""
    texts = _texts_for(selection, posts_by_id)
    chosen = sorted(
        (posts_by_id[pid] for pid in selection.selected_ids),
        key=lambda p: (p.timestamp_utc, p.post_id),
    )
    rendered = "\n".join(f"{names[p.post_id]}: {texts[p.post_id]}" for p in chosen)
    return _truncate(rendered) if truncate else rendered


def token_grid(selection: BinSelection, posts_by_id: dict) -> list:
    """Fixed 9-slot description: thread i occupies slots 3i..3i+2.

    Padding slots carry the grid position's canonical ids and valid=False.
    type_id is 0 for a root post, 1 otherwise; padding takes the slot
    shape (head slot 0, reply slot 1).
    """
    slots = []
    filled: dict = {}
    for t_idx, thread in enumerate(selection.threads):
        filled[t_idx * (1 + MAX_REPLIES)] = thread.main_id
        for r_idx, rid in enumerate(thread.reply_ids):
            filled[t_idx * (1 + MAX_REPLIES) + 1 + r_idx] = rid
    for slot in range(TOKEN_SLOTS):
        thread_id = slot // (1 + MAX_REPLIES)
        is_head_slot = slot % (1 + MAX_REPLIES) == 0
        pid = filled.get(slot)
        if pid is None:
            slots.append(
                {"slot": slot, "post_id": None, "valid": False,
                 "type_id": 0 if is_head_slot else 1, "thread_id": thread_id}
            )
        else:
            post = posts_by_id.get(pid)
            if post is None:
                raise ViewError(f"selected post {pid} missing from corpus")
            type_id = 0 if post.interaction_kind is InteractionKind.ROOT else 1
            slots.append(
                {"slot": slot, "post_id": pid, "valid": True,
                 "type_id": type_id, "thread_id": thread_id}
            )
    return slots


@dataclass
class BinView:
    bin_start_utc: int
    structured: str
    flat: str
    tokens: list
    fallback: bool

    def to_json_dict(self) -> dict:
        return {
            "bin_start_utc": self.bin_start_utc,
            "structured": self.structured,
            "flat": self.flat,
            "fallback": self.fallback,
            "tokens": self.tokens,
        }


def build_bin_views(
    posts: Sequence[UnifiedPost],
    bin_starts: Sequence[int],
    bin_width: int,
) -> list:
    """One BinView per series bin, empty bins included as all-padding rows."""
    posts_by_id = {p.post_id: p for p in posts}
    index = {b: i for i, b in enumerate(bin_starts)}
    per_bin: list = [[] for _ in bin_starts]
    for p in posts:
        i = index.get(bin_start(p.timestamp_utc, bin_width))
        if i is not None:
            per_bin[i].append(p)

    selections = [
        select_bin_threads(bin_starts[i], per_bin[i]) for i in range(len(bin_starts))
    ]
    names = assign_pseudonyms(selections)
    views = []
    for sel in selections:
        views.append(
            BinView(
                bin_start_utc=sel.bin_start_utc,
                structured=render_structured(sel, posts_by_id, names),
                flat=render_flat(sel, posts_by_id, names),
                tokens=token_grid(sel, posts_by_id),
                fallback=sel.fallback,
            )
        )
    return views
