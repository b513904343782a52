"""Structure-aware forecaster over numeric history plus per-bin text tokens.

Two pathways meet at the lookback axis. A transformer encoder reads the
z-scored history with calendar features. Independently, each lookback
bin's text tokens (one vector per selected post, tagged with a type id
for main versus reply and a thread id for which main post it hangs off)
are projected, refined by self-attention inside the bin only, and pooled
into one vector per bin by a learned attention query. A per-position
scalar gate, initialized at zero, adds the bin vector into the encoder
output, so the model starts text-blind and opts into text where it
helps. The fused sequence is projected to the horizon and a trailing
rolling mean of the lookback is added back as a prior. A text-only
auxiliary head gives the token pathway its own supervised signal during
training.

Masking discipline: invalid token slots never influence any output, and
bins with no valid tokens contribute an exact zero vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .hyperparams import CmaHyperparams

# Finite stand-in for minus infinity: softmax weight underflows to exact
# zero while gradients stay NaN-free even for all-masked rows.
_MASK_FILL = -1e9


@dataclass
class TokenBatch:
    """Per-window token grid: [batch, lookback, slots] with vectors attached.

    bin_valid marks bins holding at least one valid token; builders derive
    it from token_valid so an all-invalid bin is never marked valid.
    """

    embeddings: torch.Tensor  # [B, L, T, d_text] float
    type_ids: torch.Tensor    # [B, L, T] long, 0 main / 1 reply
    thread_ids: torch.Tensor  # [B, L, T] long in [0, k_post)
    token_valid: torch.Tensor  # [B, L, T] bool
    bin_valid: torch.Tensor    # [B, L] bool

    @classmethod
    def build(cls, embeddings, type_ids, thread_ids, token_valid) -> "TokenBatch":
        valid = token_valid.bool()
        emb = embeddings * valid.unsqueeze(-1).to(embeddings.dtype)
        return cls(
            embeddings=emb,
            type_ids=type_ids.long(),
            thread_ids=thread_ids.long(),
            token_valid=valid,
            bin_valid=valid.any(dim=-1),
        )

    def check(self, hp: CmaHyperparams, batch: int, lookback: int) -> None:
        want = (batch, lookback, hp.t_max)
        if tuple(self.embeddings.shape) != want + (self.embeddings.shape[-1],):
            raise ValueError(f"token embeddings must be [B, L, {hp.t_max}, d_text]")
        for name in ("type_ids", "thread_ids", "token_valid"):
            if tuple(getattr(self, name).shape) != want:
                raise ValueError(f"{name} must have shape {want}")
        if tuple(self.bin_valid.shape) != (batch, lookback):
            raise ValueError(f"bin_valid must have shape {(batch, lookback)}")
        if bool((self.token_valid.any(dim=-1) & ~self.bin_valid).any()):
            raise ValueError("a bin with valid tokens is marked invalid")

    def index(self, idx: torch.Tensor) -> "TokenBatch":
        return TokenBatch(
            embeddings=self.embeddings[idx],
            type_ids=self.type_ids[idx],
            thread_ids=self.thread_ids[idx],
            token_valid=self.token_valid[idx],
            bin_valid=self.bin_valid[idx],
        )

    def to(self, dtype: torch.dtype) -> "TokenBatch":
        return TokenBatch(
            embeddings=self.embeddings.to(dtype),
            type_ids=self.type_ids,
            thread_ids=self.thread_ids,
            token_valid=self.token_valid,
            bin_valid=self.bin_valid,
        )


def _safe_key_padding(invalid: torch.Tensor) -> torch.Tensor:
    """Unmask slot 0 of all-invalid rows so attention stays finite.

    The dummy attend target is harmless: callers zero the pooled vector
    of every invalid bin afterwards.
    """
    empty = invalid.all(dim=-1)
    if not bool(empty.any()):
        return invalid
    mask = invalid.clone()
    mask[empty, 0] = False
    return mask


class PositionalEncoding(nn.Module):
    """Fixed sine/cosine table added to the sequence embedding."""

    def __init__(self, d_model: int, max_len: int = 512):
        super().__init__()
        position = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
        half = torch.arange(0, d_model, 2, dtype=torch.float32)
        freq = torch.exp(-math.log(10000.0) * half / d_model)
        table = torch.zeros(max_len, d_model)
        table[:, 0::2] = torch.sin(position * freq)
        table[:, 1::2] = torch.cos(position * freq[: d_model // 2])
        self.register_buffer("table", table, persistent=False)

    def forward(self, length: int, dtype: torch.dtype) -> torch.Tensor:
        if length > self.table.shape[0]:
            raise ValueError(f"sequence of {length} exceeds positional table")
        return self.table[:length].to(dtype)


class SeriesBackbone(nn.Module):
    """Transformer encoder over [value, hour-of-day, day-of-week] per bin."""

    def __init__(self, hp: CmaHyperparams):
        super().__init__()
        self.embed = nn.Linear(3, hp.d_model)
        self.positional = PositionalEncoding(hp.d_model)
        self.drop = nn.Dropout(hp.dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=hp.d_model,
            nhead=hp.backbone_heads,
            dim_feedforward=hp.d_ff,
            dropout=hp.dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=hp.e_layers)

    def forward(self, values: torch.Tensor, time_feats: torch.Tensor) -> torch.Tensor:
        dtype = self.embed.weight.dtype
        inp = torch.cat([values.unsqueeze(-1).to(dtype), time_feats.to(dtype)], dim=-1)
        hidden = self.embed(inp) + self.positional(inp.shape[1], dtype)
        return self.encoder(self.drop(hidden))


class IntraBinEncoder(nn.Module):
    """Per-bin token aggregation: project, tag, attend within the bin, pool.

    Each token becomes project(vec) + type embedding + thread embedding.
    Self-attention runs along the slot axis only, bins never mix. The
    pooled vector is a single-query attention read; a type-conditional
    residual (separate mean pools of main and reply tokens, mixed by one
    linear layer) is blended in by a scalar that starts at zero, so the
    module begins as the plain attention pool.
    """

    def __init__(self, hp: CmaHyperparams):
        super().__init__()
        self.hp = hp
        self.project = nn.Linear(hp.d_text, hp.d_model, bias=False)
        self.type_table = nn.Embedding(2, hp.d_model)
        self.thread_table = nn.Embedding(hp.k_post, hp.d_model)
        self.attn_layers = nn.ModuleList(
            nn.MultiheadAttention(hp.d_model, hp.intra_bin_heads,
                                  dropout=hp.dropout, batch_first=True)
            for _ in range(hp.intra_bin_layers)
        )
        self.attn_norms = nn.ModuleList(
            nn.LayerNorm(hp.d_model) for _ in range(hp.intra_bin_layers)
        )
        self.pool_query = nn.Parameter(torch.empty(hp.d_model))
        bound = 1.0 / math.sqrt(hp.d_model)
        nn.init.uniform_(self.pool_query, -bound, bound)
        self.pool_attn = nn.MultiheadAttention(
            hp.d_model, hp.intra_bin_heads, dropout=hp.dropout, batch_first=True
        )
        self.mix = nn.Linear(2 * hp.d_model, hp.d_model)
        self.alpha = nn.Parameter(torch.zeros(()))

    def forward(self, tokens: TokenBatch) -> tuple:
        """Returns (bin_vectors [B, L, d_model], bin_valid [B, L])."""
        hp = self.hp
        batch, lookback, slots, d_text = tokens.embeddings.shape
        if slots != hp.t_max or d_text != hp.d_text:
            raise ValueError(
                f"token grid is [{slots}, {d_text}], expected [{hp.t_max}, {hp.d_text}]"
            )
        tokens.check(hp, batch, lookback)

        dtype = self.project.weight.dtype
        rows = batch * lookback
        emb = tokens.embeddings.to(dtype).reshape(rows, slots, d_text)
        hidden = (
            self.project(emb)
            + self.type_table(tokens.type_ids.reshape(rows, slots))
            + self.thread_table(tokens.thread_ids.reshape(rows, slots))
        )

        valid = tokens.token_valid.reshape(rows, slots)
        key_mask = _safe_key_padding(~valid)
        for attn, norm in zip(self.attn_layers, self.attn_norms):
            refined, _ = attn(hidden, hidden, hidden,
                              key_padding_mask=key_mask, need_weights=False)
            hidden = norm(hidden + refined)

        query = self.pool_query.to(dtype).view(1, 1, -1).expand(rows, 1, -1)
        pooled, _ = self.pool_attn(query, hidden, hidden,
                                   key_padding_mask=key_mask, need_weights=False)
        base = pooled.squeeze(1)

        main_mask = (valid & (tokens.type_ids.reshape(rows, slots) == 0)).to(dtype)
        reply_mask = (valid & (tokens.type_ids.reshape(rows, slots) == 1)).to(dtype)
        main_pool = (hidden * main_mask.unsqueeze(-1)).sum(1) / main_mask.sum(1).clamp(min=1.0).unsqueeze(-1)
        reply_pool = (hidden * reply_mask.unsqueeze(-1)).sum(1) / reply_mask.sum(1).clamp(min=1.0).unsqueeze(-1)
        mixed = self.mix(torch.cat([main_pool, reply_pool], dim=-1))
        vec = base + self.alpha * (mixed - base)

        bin_valid = tokens.bin_valid.reshape(rows, 1)
        vec = torch.where(bin_valid, vec, torch.zeros_like(vec))
        return vec.view(batch, lookback, hp.d_model), tokens.bin_valid


class TextOnlyHead(nn.Module):
    """Auxiliary forecast from bin vectors alone.

    A learned scalar score per bin feeds a masked softmax over the
    lookback axis; the weighted mean goes through a two-layer GELU MLP.
    Samples with no valid bin pool to an exact zero vector.
    """

    def __init__(self, hp: CmaHyperparams):
        super().__init__()
        self.hp = hp
        self.score = nn.Linear(hp.d_model, 1)
        self.hidden = nn.Linear(hp.d_model, hp.d_model)
        self.out = nn.Linear(hp.d_model, hp.horizon * hp.c_out)

    def forward(self, bin_vecs: torch.Tensor, bin_valid: torch.Tensor) -> torch.Tensor:
        scores = self.score(bin_vecs).squeeze(-1)
        scores = scores.masked_fill(~bin_valid, _MASK_FILL)
        weights = scores.softmax(dim=-1)
        pooled = torch.einsum("bl,bld->bd", weights, bin_vecs)
        any_valid = bin_valid.any(dim=-1, keepdim=True)
        pooled = torch.where(any_valid, pooled, torch.zeros_like(pooled))
        out = self.out(F.gelu(self.hidden(pooled)))
        return out.view(-1, self.hp.horizon, self.hp.c_out)


class CmaModel(nn.Module):
    """Gated fusion of per-bin text vectors into a series encoder.

    Both the fusion gates and the type-pool blend start at exact zero,
    so a freshly built model predicts identically under any token batch.
    """

    def __init__(self, hp: CmaHyperparams):
        super().__init__()
        self.hp = hp
        self.backbone = SeriesBackbone(hp)
        self.text_encoder = IntraBinEncoder(hp)
        self.gates = nn.Parameter(torch.zeros(hp.lookback))
        self.horizon_proj = nn.Linear(hp.lookback, hp.horizon, bias=False)
        self.head_hidden = nn.Linear(hp.d_model, hp.d_model)
        self.head_drop = nn.Dropout(hp.dropout)
        self.head_out = nn.Linear(hp.d_model, hp.c_out)
        self.aux_head = TextOnlyHead(hp)

    def _check_inputs(self, values, time_feats):
        if values.ndim != 2 or values.shape[1] != self.hp.lookback:
            raise ValueError(
                f"history must be [batch, {self.hp.lookback}] to match the gate length"
            )
        if time_feats.shape != values.shape + (2,):
            raise ValueError("time features must be [batch, lookback, 2]")

    def _prior(self, values: torch.Tensor) -> torch.Tensor:
        dtype = self.head_out.weight.dtype
        tail = values[:, -self.hp.prior_window:].to(dtype)
        return tail.mean(dim=1).view(-1, 1, 1)

    def _fused_forecast(self, values, time_feats, tokens) -> tuple:
        self._check_inputs(values, time_feats)
        encoded = self.backbone(values, time_feats)
        bin_vecs, bin_valid = self.text_encoder(tokens)
        gate = self.gates.view(1, -1, 1) * bin_valid.unsqueeze(-1).to(encoded.dtype)
        fused = encoded + gate * bin_vecs
        horizon = self.horizon_proj(fused.transpose(1, 2)).transpose(1, 2)
        out = self.head_out(self.head_drop(F.gelu(self.head_hidden(horizon))))
        return out + self._prior(values), bin_vecs, bin_valid

    def forward(self, values, time_feats, tokens: TokenBatch) -> torch.Tensor:
        """Main prediction, shape [batch, horizon, c_out]."""
        out, _, _ = self._fused_forecast(values, time_feats, tokens)
        return out

    def forward_with_aux(self, values, time_feats, tokens: TokenBatch) -> tuple:
        """Main and auxiliary predictions sharing one token encoding pass."""
        out, bin_vecs, bin_valid = self._fused_forecast(values, time_feats, tokens)
        return out, self.aux_head(bin_vecs, bin_valid)
