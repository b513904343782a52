"""Token embedding files: one JSONL line per series bin.

Each line mirrors the bin's nine-slot token grid from the text views and
attaches one vector per slot, base64 over little-endian 32-bit floats.
Invalid slots keep an explicit zero vector. The embedding provider is
pluggable; the bundled test provider hashes the post text into a seeded
draw so the whole probe trains without any pretrained encoder, and the
same text always maps to the same vector.
"""

from __future__ import annotations

import base64
import hashlib
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

EMBED_DIM = 768

EmbeddingProvider = Callable[[str], np.ndarray]


def hash_embedding(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic pseudo-embedding: text digest seeds a unit-variance draw."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(dim, dtype=np.float32)


def encode_vec(vec: np.ndarray) -> str:
    arr = np.ascontiguousarray(np.asarray(vec, dtype="<f4"))
    if arr.ndim != 1:
        raise ValueError("token vector must be one-dimensional")
    return base64.b64encode(arr.tobytes()).decode("ascii")


def decode_vec(payload: str, dim: int) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"), validate=True)
    if len(raw) != 4 * dim:
        raise ValueError(f"expected {4 * dim} bytes of vector data, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def export_event_embeddings(
    view_rows: Sequence[dict],
    texts_by_id: dict,
    provider: Optional[EmbeddingProvider] = None,
    dim: int = EMBED_DIM,
) -> tuple:
    """Turn one event's bin views into embedding lines.

    Returns (lines, errors). A slot stays valid only when its post text
    exists and the provider returns a vector; any failure is recorded
    per post and the slot is written invalid with a zero vector.
    """
    if provider is None:
        provider = partial(hash_embedding, dim=dim)
    zero = encode_vec(np.zeros(dim, dtype=np.float32))
    lines = []
    errors = []
    for row in view_rows:
        tokens = []
        for tok in row["tokens"]:
            out = {
                "slot": tok["slot"],
                "valid": False,
                "type_id": tok["type_id"],
                "thread_id": tok["thread_id"],
                "vec": zero,
            }
            if tok["valid"]:
                pid = tok["post_id"]
                text = texts_by_id.get(pid)
                if text is None:
                    errors.append({"post_id": pid, "error": "post text not found"})
                else:
                    try:
                        vec = np.asarray(provider(text), dtype=np.float32)
                        if vec.shape != (dim,):
                            raise ValueError(f"provider returned shape {vec.shape}")
                        out["vec"] = encode_vec(vec)
                        out["valid"] = True
                    except Exception as exc:  # noqa: BLE001  provider is arbitrary user code
                        errors.append({"post_id": pid, "error": str(exc)})
            tokens.append(out)
        lines.append({"bin_start_utc": row["bin_start_utc"], "tokens": tokens})
    return lines, errors
