from __future__ import annotations

import json
import math
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from eventpulse.annotation import (
    DEFAULT_PROMPT,
    AnnotationFailure,
    AnnotatorConfig,
    LabelCache,
    aggregation_noise_bound,
    annotate_posts,
    annotate_text,
    build_verification_report,
    cohens_kappa,
    extract_completion_text,
    parse_sentiment,
    per_class_f1,
)
from eventpulse.corpus import Platform, UnifiedPost


# --- a tiny scripted annotation service -------------------------------------

class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length)) if length else {}
        with self.server.lock:
            self.server.requests.append(body)
            step = self.server.script.pop(0) if self.server.script else (200, {"text": "neutral"})
        status, payload = step
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class ScriptedService:
    def __init__(self, script=None):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
        self.server.script = list(script or [])
        self.server.requests = []
        self.server.lock = threading.Lock()
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def endpoint(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/complete"

    @property
    def requests(self):
        return self.server.requests

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def service():
    services = []

    def make(script=None):
        svc = ScriptedService(script)
        services.append(svc)
        return svc

    yield make
    for svc in services:
        svc.close()


def _config(endpoint, **kw):
    base = dict(
        endpoint=endpoint, model_name="test-model",
        max_retries=3, timeout_seconds=5.0, retry_backoff_seconds=0.0,
    )
    base.update(kw)
    return AnnotatorConfig(**base)


# --- prompt and parsing -------------------------------------------------------

def test_default_prompt_shape():
    assert DEFAULT_PROMPT.count("{text}") == 1
    assert "positive, neutral, negative" in DEFAULT_PROMPT
    rendered = AnnotatorConfig(
        endpoint="http://x", model_name="m"
    ).render_prompt("some {weird} text")
    # Plain substitution: braces in post text must not break rendering.
    assert "some {weird} text" in rendered


def test_config_rejects_bad_template():
    with pytest.raises(ValueError):
        AnnotatorConfig(endpoint="http://x", model_name="m", prompt_template="no slot")
    with pytest.raises(ValueError):
        AnnotatorConfig(
            endpoint="http://x", model_name="m", prompt_template="{text} and {text}"
        )


def test_parse_sentiment_trim_and_case():
    assert parse_sentiment("Negative\n") == -1
    assert parse_sentiment("  POSITIVE  ") == 1
    assert parse_sentiment("neutral") == 0


def test_parse_sentiment_rejects_prose():
    with pytest.raises(ValueError):
        parse_sentiment("somewhat positive")
    with pytest.raises(ValueError):
        parse_sentiment("")


def test_extract_completion_shapes():
    assert extract_completion_text({"text": "positive"}) == "positive"
    assert extract_completion_text({"choices": [{"text": "negative"}]}) == "negative"
    # Well-known keys win over earlier-serialized noise at any depth.
    assert extract_completion_text({"result": {"id": "abc", "text": "positive"}}) == "positive"
    assert extract_completion_text({"id": "abc", "output": "neutral"}) == "neutral"
    # Non-string scalars are skipped.
    assert extract_completion_text({"ok": 1, "data": [2, None, "negative"]}) == "negative"
    assert extract_completion_text({"count": 3}) is None
    assert extract_completion_text("bare string") == "bare string"


# --- live client behavior ------------------------------------------------------

def test_annotate_text_success_and_wire_format(service):
    svc = service([(200, {"text": " Negative "})])
    config = _config(svc.endpoint, extra={"temperature": 0.0})
    assert annotate_text("angry words", config) == -1
    sent = svc.requests[0]
    assert sent["model"] == "test-model"
    assert sent["temperature"] == 0.0
    assert "angry words" in sent["prompt"]
    assert sent["prompt"].startswith("Analyze the sentiment")


def test_annotate_text_retries_then_succeeds(service):
    svc = service([
        (500, {"error": "overloaded"}),
        (200, {"text": "gibberish"}),
        (200, {"text": "positive"}),
    ])
    assert annotate_text("t", _config(svc.endpoint)) == 1
    assert len(svc.requests) == 3


def test_annotate_text_fails_after_retries(service):
    svc = service([(200, {"text": "mixed"})] * 3)
    with pytest.raises(AnnotationFailure):
        annotate_text("t", _config(svc.endpoint))
    assert len(svc.requests) == 3


def test_annotate_text_handles_non_json(service):
    svc = service([(200, b"<html>oops</html>"), (200, {"text": "neutral"})])
    assert annotate_text("t", _config(svc.endpoint)) == 0


def _post(pid, text="some text"):
    return UnifiedPost(
        post_id=pid, event_id="ev", platform=Platform.SYNTHETIC,
        timestamp_utc=1_000_000, text=text,
    )


def test_annotate_posts_drop_policy_and_order(service):
    svc = service([
        (200, {"text": "positive"}),
        (200, {"text": "???"}), (200, {"text": "???"}), (200, {"text": "???"}),
        (200, {"text": "negative"}),
    ])
    config = _config(svc.endpoint, max_in_flight=1)
    result = annotate_posts([_post("a"), _post("b"), _post("c")], config)
    assert result.labels == {"a": 1, "c": -1}
    assert result.failed == ["b"]
    assert result.requested == 3


def test_annotate_posts_uses_cache(service, tmp_path):
    svc = service([(200, {"text": "positive"})])
    cache = LabelCache(tmp_path / "labels.jsonl")
    config = _config(svc.endpoint)
    first = annotate_posts([_post("a")], config, cache=cache)
    assert first.labels == {"a": 1}
    assert len(svc.requests) == 1
    # Second run: served from the cache file, no HTTP.
    second = annotate_posts([_post("a")], config, cache=cache)
    assert second.labels == {"a": 1}
    assert second.from_cache == 1
    assert len(svc.requests) == 1


def test_label_cache_keyed_by_model_and_prompt(tmp_path):
    cache = LabelCache(tmp_path / "labels.jsonl")
    cache.append("a", 1, "model-x", "hash-1")
    assert cache.load("model-x", "hash-1") == {"a": 1}
    assert cache.load("model-y", "hash-1") == {}
    assert cache.load("model-x", "hash-2") == {}


# --- agreement statistics --------------------------------------------------------

def test_kappa_perfect_agreement():
    assert cohens_kappa(["p", "n", "u", "p"], ["p", "n", "u", "p"]) == 1.0


def test_kappa_hand_example_zero():
    # Observed 0.5, expected 0.5 under these marginals.
    assert cohens_kappa(["p", "p", "n", "n"], ["p", "n", "n", "p"]) == pytest.approx(0.0)


def test_kappa_disjoint_balanced_is_minus_one():
    assert cohens_kappa(["x", "x", "y", "y"], ["y", "y", "x", "x"]) == pytest.approx(-1.0)


def test_kappa_constant_same_class_convention():
    assert cohens_kappa(["p", "p", "p"], ["p", "p", "p"]) == 1.0


def test_kappa_relabel_invariance():
    rng = random.Random(13)
    classes = ["positive", "neutral", "negative"]
    mapping = {"positive": "A", "neutral": "B", "negative": "C"}
    for _ in range(50):
        n = rng.randrange(2, 60)
        a = [rng.choice(classes) for _ in range(n)]
        b = [rng.choice(classes) for _ in range(n)]
        k1 = cohens_kappa(a, b)
        k2 = cohens_kappa([mapping[x] for x in a], [mapping[x] for x in b])
        assert k1 == pytest.approx(k2)
        assert -1.0 - 1e-12 <= k1 <= 1.0 + 1e-12


def test_noise_bound_values():
    assert aggregation_noise_bound(100, 0.2) == pytest.approx(0.08944271909999159)
    assert aggregation_noise_bound(1000, 0.2) == pytest.approx(0.028284271247461905)
    assert aggregation_noise_bound(1000, 0.2) < 0.03
    assert aggregation_noise_bound(100, 0.0) == 0.0
    assert aggregation_noise_bound(100, 0.2, kappa_t=2.0) == pytest.approx(
        math.sqrt(1.6 / 100)
    )


def test_noise_bound_monotonicity():
    rng = random.Random(21)
    for _ in range(100):
        c = rng.randrange(1, 5000)
        alpha = rng.uniform(0.0, 1.0)
        b = aggregation_noise_bound(c, alpha)
        assert aggregation_noise_bound(c + 100, alpha) <= b
        assert aggregation_noise_bound(c, min(1.0, alpha + 0.1)) >= b


def test_noise_bound_montecarlo_sanity():
    # Empirical bin-mean error std stays below the analytic bound.
    rng = random.Random(8)
    scores = [-1, 0, 1]
    alpha, c = 0.2, 100
    errors = []
    for _ in range(2000):
        total = 0
        for _ in range(c):
            gold = rng.choice(scores)
            noisy = gold
            if rng.random() < alpha:
                noisy = rng.choice([s for s in scores if s != gold])
            total += noisy - gold
        errors.append(total / c)
    mean = sum(errors) / len(errors)
    std = math.sqrt(sum((e - mean) ** 2 for e in errors) / len(errors))
    assert std <= aggregation_noise_bound(c, alpha)


def test_per_class_f1_hand_example():
    pred = ["p", "p", "n", "u"]
    truth = ["p", "n", "n", "u"]
    f1 = per_class_f1(pred, truth)
    assert f1["p"] == pytest.approx(2 / 3)
    assert f1["n"] == pytest.approx(2 / 3)
    assert f1["u"] == 1.0


def test_per_class_f1_degenerate_zero():
    f1 = per_class_f1(["p"], ["n"])
    assert f1["p"] == 0.0
    assert f1["n"] == 0.0


def test_verification_report():
    model = ["positive", "negative", "neutral", "positive", "negative"]
    ha = ["positive", "negative", "neutral", "negative", "negative"]
    hb = ["positive", "negative", "positive", "negative", "negative"]
    consensus = ["positive", "negative", "neutral", "negative", "negative"]
    cats = ["political", "political", "technology", "technology", "technology"]
    report = build_verification_report(model, ha, hb, consensus, cats)
    assert report.overall_agreement == pytest.approx(4 / 5)
    assert report.accuracy_per_stratum[("political", "positive")] == 1.0
    assert report.accuracy_per_stratum[("technology", "positive")] == 0.0
    # Empty cell: undefined, not zero.
    assert report.accuracy_per_stratum[("natural_disaster", "positive")] is None
    # bias: model scored one record +1 where consensus was -1.
    assert report.bias_mu == pytest.approx((0 + 0 + 0 + 2 + 0) / 5)
    assert abs(report.bias_mu) <= 2.0
    payload = report.to_json_dict()
    assert payload["accuracy_per_stratum"]["political/positive"] == 1.0


def test_verification_report_alignment_errors():
    with pytest.raises(ValueError):
        build_verification_report(["p"], ["p"], ["p"], ["p"], [])
