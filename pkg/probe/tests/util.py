"""Shared fabric for probe tests: random window sets and FD gradients."""

from __future__ import annotations

import numpy as np
import torch

from cma_probe.dataset import WindowArrays
from cma_probe.hyperparams import CmaHyperparams
from cma_probe.training import loss_terms

# The individually named parameter groups of the fusion model, keyed by
# what each one does.
NAMED_GROUPS = {
    "token_projection": "text_encoder.project.weight",
    "type_table": "text_encoder.type_table.weight",
    "thread_table": "text_encoder.thread_table.weight",
    "pool_query": "text_encoder.pool_query",
    "type_blend": "text_encoder.alpha",
    "mix": "text_encoder.mix.weight",
    "fusion_gates": "gates",
    "horizon_projection": "horizon_proj.weight",
    "head_hidden": "head_hidden.weight",
    "head_out": "head_out.weight",
}


def random_windows(
    rng: np.random.Generator,
    n: int,
    hp: CmaHyperparams,
    p_token_valid: float = 0.6,
    p_empty_bin: float = 0.2,
    y_fn=None,
) -> WindowArrays:
    """Random window arrays with a mixed validity pattern.

    Some bins are forced fully empty so the all-invalid path is always
    exercised. y defaults to noise; pass y_fn(arrays dict) to derive it.
    """
    lb, hz, t = hp.lookback, hp.horizon, hp.t_max
    token_valid = rng.random((n, lb, t)) < p_token_valid
    empty = rng.random((n, lb)) < p_empty_bin
    token_valid[empty] = False
    emb = rng.standard_normal((n, lb, t, hp.d_text)).astype(np.float32)
    type_ids = rng.integers(0, 2, size=(n, lb, t))
    thread_ids = rng.integers(0, hp.k_post, size=(n, lb, t))
    x = rng.standard_normal((n, lb)).astype(np.float32)
    time_feats = rng.random((n, lb, 2)).astype(np.float32)
    arrays = {
        "x": x,
        "time_feats": time_feats,
        "emb": emb,
        "type_ids": type_ids,
        "thread_ids": thread_ids,
        "token_valid": token_valid,
    }
    y = y_fn(arrays) if y_fn else rng.standard_normal((n, hz)).astype(np.float32)
    return WindowArrays(
        x=x, y=y.astype(np.float32), time_feats=time_feats,
        emb=emb, type_ids=type_ids, thread_ids=thread_ids,
        token_valid=token_valid,
        event_ids=[f"w{i}" for i in range(n)], starts=list(range(n)),
    )


def tiny_hyperparams(**overrides) -> CmaHyperparams:
    base = dict(
        d_model=8, backbone_heads=8, e_layers=1, d_ff=16, dropout=0.0,
        intra_bin_heads=4, d_text=16, lookback=4, horizon=2,
        prior_window=3, batch_size=3,
    )
    base.update(overrides)
    return CmaHyperparams(**base)


def total_loss(model, data, lambda_aux: float) -> torch.Tensor:
    total, _, _ = loss_terms(
        model, data["x"], data["tf"], data["tokens"], data["y"], lambda_aux
    )
    return total


def fd_group_error(model, data, param: torch.Tensor, lambda_aux: float,
                   step: float = 1e-5) -> float:
    """Norm relative error between autograd and central differences.

    Walks every element of the parameter, so callers keep groups small.
    """
    model.zero_grad(set_to_none=True)
    total_loss(model, data, lambda_aux).backward()
    analytic = param.grad.detach().clone()

    fd = torch.zeros_like(param, dtype=torch.float64)
    flat = param.data.view(-1)
    fd_flat = fd.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            keep = flat[i].item()
            flat[i] = keep + step
            hi = total_loss(model, data, lambda_aux).item()
            flat[i] = keep - step
            lo = total_loss(model, data, lambda_aux).item()
            flat[i] = keep
            fd_flat[i] = (hi - lo) / (2.0 * step)

    num = torch.linalg.vector_norm(analytic.double() - fd).item()
    den = max(
        torch.linalg.vector_norm(analytic.double()).item(),
        torch.linalg.vector_norm(fd).item(),
        1e-12,
    )
    return num / den
