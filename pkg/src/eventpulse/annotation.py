"""Sentiment labeling through an external completion service, plus the
agreement statistics used to audit label quality.

The service contract is a single-turn HTTP POST of JSON
``{"model": ..., "prompt": ...}`` (plus any configured decoding
parameters, passed through verbatim). The response is JSON; the first
text field found is treated as the completion. "First" means a
depth-first walk that, inside every JSON object, visits the well-known
keys ``text``, ``completion``, ``content``, ``response``, ``output`` in
that order before the object's remaining keys (in their serialized
order), descending into arrays by index, and returns the first string
value encountered.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import requests

from .corpus import CATEGORIES, LABEL_SCORES, UnifiedPost, map_label

DEFAULT_PROMPT = (
    "Analyze the sentiment of the following social media comment.\n"
    "Classify it as exactly one of: positive, neutral, negative.\n"
    "Only output the single word classification, nothing else.\n"
    "\n"
    "Comment: {text}\n"
    "\n"
    "Sentiment:"
)

_WELL_KNOWN_TEXT_KEYS = ("text", "completion", "content", "response", "output")


class AnnotationFailure(RuntimeError):
    """A post that could not be labeled after the configured retries."""


@dataclass
class AnnotatorConfig:
    endpoint: str
    model_name: str
    prompt_template: str = DEFAULT_PROMPT
    max_retries: int = 3
    timeout_seconds: float = 30.0
    retry_backoff_seconds: float = 0.5
    max_in_flight: int = 4
    # Decoding parameters (temperature etc.) forwarded verbatim.
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.prompt_template.count("{text}") != 1:
            raise ValueError("prompt template must contain exactly one {text} slot")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")

    def render_prompt(self, text: str) -> str:
        return self.prompt_template.replace("{text}", text)

    @property
    def prompt_hash(self) -> str:
        return hashlib.sha256(self.prompt_template.encode("utf-8")).hexdigest()[:16]


def extract_completion_text(body) -> Optional[str]:
    """First text field of a decoded JSON response, or None.

    Depth-first; within each object the well-known completion keys are
    visited first, remaining keys follow in serialized order.
    """
    stack = [body]
    while stack:
        node = stack.pop(0)
        if isinstance(node, str):
            return node
        if isinstance(node, Mapping):
            front = [node[k] for k in _WELL_KNOWN_TEXT_KEYS if k in node]
            rest = [v for k, v in node.items() if k not in _WELL_KNOWN_TEXT_KEYS]
            stack = front + rest + stack
        elif isinstance(node, (list, tuple)):
            stack = list(node) + stack
    return None


def parse_sentiment(completion: str) -> int:
    """Trimmed, case-insensitive three-class parse to a numeric score."""
    word = completion.strip().lower()
    if word not in LABEL_SCORES:
        raise ValueError(f"unparseable sentiment completion: {completion!r}")
    return map_label(word)


def annotate_text(
    text: str,
    config: AnnotatorConfig,
    session: Optional[requests.Session] = None,
) -> int:
    """Label one text; raises AnnotationFailure after exhausted retries."""
    sess = session or requests
    payload = {"model": config.model_name, "prompt": config.render_prompt(text)}
    payload.update(config.extra)
    last_error: Optional[str] = None
    for attempt in range(config.max_retries):
        if attempt > 0 and config.retry_backoff_seconds > 0:
            time.sleep(config.retry_backoff_seconds * attempt)
        try:
            resp = sess.post(config.endpoint, json=payload, timeout=config.timeout_seconds)
        except requests.RequestException as exc:
            last_error = f"transport: {exc}"
            continue
        if resp.status_code != 200:
            last_error = f"http {resp.status_code}"
            continue
        try:
            body = resp.json()
        except ValueError:
            last_error = "non-json response"
            continue
        completion = extract_completion_text(body)
        if completion is None:
            last_error = "no text field in response"
            continue
        try:
            return parse_sentiment(completion)
        except ValueError as exc:
            last_error = str(exc)
            continue
    raise AnnotationFailure(last_error or "no attempts made")


@dataclass
class AnnotationResult:
    labels: dict            # post_id -> score
    failed: list            # post_ids dropped after retries
    from_cache: int = 0
    requested: int = 0


class LabelCache:
    """Append-only JSONL of labels keyed by (post_id, model, prompt hash)."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self, model_name: str, prompt_hash: str) -> dict:
        out: dict = {}
        if not self.path.exists():
            return out
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if row.get("model_name") == model_name and row.get("prompt_hash") == prompt_hash:
                    out[row["post_id"]] = map_label(row["label"])
        return out

    def append(self, post_id: str, score: int, model_name: str, prompt_hash: str) -> None:
        from .corpus import score_to_label

        row = {
            "post_id": post_id,
            "label": score_to_label(score),
            "model_name": model_name,
            "prompt_hash": prompt_hash,
        }
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def annotate_posts(
    posts: Sequence[UnifiedPost],
    config: AnnotatorConfig,
    cache: Optional[LabelCache] = None,
) -> AnnotationResult:
    """Label a batch concurrently; results joined in input order.

    Failed posts are collected, not raised: the default policy drops them
    from the corpus and reports the count.
    """
    labels: dict = {}
    if cache is not None:
        labels.update(cache.load(config.model_name, config.prompt_hash))
    todo = [p for p in posts if p.post_id not in labels]
    from_cache = len(posts) - len(todo)

    failed: list = []
    if todo:
        session = requests.Session()
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            futures = [pool.submit(annotate_text, p.text, config, session) for p in todo]
            for post, future in zip(todo, futures):
                try:
                    score = future.result()
                except AnnotationFailure:
                    failed.append(post.post_id)
                    continue
                labels[post.post_id] = score
                if cache is not None:
                    cache.append(post.post_id, score, config.model_name, config.prompt_hash)
    return AnnotationResult(
        labels=labels, failed=failed, from_cache=from_cache, requested=len(todo)
    )


# --- agreement statistics -------------------------------------------------

def cohens_kappa(a: Sequence, b: Sequence) -> float:
    """Two-rater chance-corrected agreement over categorical labels.

    Expected agreement is the product of the raters' marginals. Perfect
    expected agreement (both raters constant on the same class) returns
    1.0 by convention.
    """
    if len(a) != len(b):
        raise ValueError("label sequences must align")
    if not a:
        raise ValueError("need at least one pair")
    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    classes = set(a) | set(b)
    expected = sum(
        (sum(1 for x in a if x == c) / n) * (sum(1 for y in b if y == c) / n)
        for c in classes
    )
    if expected == 1.0:
        return 1.0
    return (observed - expected) / (1.0 - expected)


def per_class_f1(pred: Sequence, truth: Sequence) -> dict:
    """One-vs-rest F1 per class present in either sequence; 0/0 -> 0.0."""
    if len(pred) != len(truth):
        raise ValueError("label sequences must align")
    out: dict = {}
    for c in sorted(set(pred) | set(truth), key=str):
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        denom = 2 * tp + fp + fn
        out[c] = (2 * tp / denom) if denom > 0 else 0.0
    return out


def aggregation_noise_bound(bin_count: int, flip_rate: float, kappa_t: float = 1.0) -> float:
    """Worst-case std of a bin-mean sentiment error under random flips.

    A flipped label moves the score by at most 2, so the per-post error
    variance is bounded by 4 * flip_rate; averaging over ``bin_count``
    independent posts scales it down, and ``kappa_t`` carries any extra
    inflation factor.
    """
    if bin_count < 1:
        raise ValueError("bin_count must be positive")
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError("flip_rate must be within [0, 1]")
    return math.sqrt(4.0 * flip_rate * kappa_t / bin_count)


@dataclass
class VerificationReport:
    kappa_between_humans: float
    overall_agreement: float        # model vs consensus
    f1_per_class: dict              # class label -> F1 vs consensus
    accuracy_per_stratum: dict      # (category, model label) -> accuracy or None
    bias_mu: float                  # mean(score(model) - score(consensus))

    def to_json_dict(self) -> dict:
        return {
            "kappa_between_humans": self.kappa_between_humans,
            "overall_agreement": self.overall_agreement,
            "f1_per_class": dict(self.f1_per_class),
            "accuracy_per_stratum": {
                f"{cat}/{label}": acc for (cat, label), acc in self.accuracy_per_stratum.items()
            },
            "bias_mu": self.bias_mu,
        }


def build_verification_report(
    model_labels: Sequence[str],
    human_a: Sequence[str],
    human_b: Sequence[str],
    consensus: Sequence[str],
    categories: Sequence[str],
) -> VerificationReport:
    """Audit model labels against double human annotation.

    Strata are (category, model label) cells over the full category and
    class grid; a cell with no records carries None instead of a number.
    """
    n = len(model_labels)
    if not (len(human_a) == len(human_b) == len(consensus) == len(categories) == n):
        raise ValueError("all label sequences must align")
    if n == 0:
        raise ValueError("need at least one record")

    agreement = sum(1 for m, c in zip(model_labels, consensus) if m == c) / n
    strata: dict = {}
    for cat in CATEGORIES:
        for label in sorted(LABEL_SCORES):
            rows = [
                i for i in range(n)
                if categories[i] == cat and model_labels[i] == label
            ]
            if not rows:
                strata[(cat, label)] = None
            else:
                strata[(cat, label)] = sum(
                    1 for i in rows if model_labels[i] == consensus[i]
                ) / len(rows)
    bias = sum(
        map_label(m) - map_label(c) for m, c in zip(model_labels, consensus)
    ) / n
    return VerificationReport(
        kappa_between_humans=cohens_kappa(human_a, human_b),
        overall_agreement=agreement,
        f1_per_class=per_class_f1(model_labels, consensus),
        accuracy_per_stratum=strata,
        bias_mu=bias,
    )
