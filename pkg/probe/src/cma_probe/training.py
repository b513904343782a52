"""Training and evaluation for the fusion model.

Two Adam optimizers run side by side: a conservative one for the series
backbone and a faster one for everything newly initialized around it
(the token pathway, the fusion gates, the horizon projection, and the
auxiliary head). The loss is forecast MSE plus a small auxiliary MSE
from the text-only head. Early stopping watches validation MSE and the
best-epoch weights are restored at the end.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .hyperparams import CmaHyperparams
from .model import CmaModel

# Module prefixes owned by the faster optimizer; every other parameter
# belongs to the backbone group.
_CROSSMODAL_PREFIXES = (
    "text_encoder.", "gates", "horizon_proj.", "head_hidden.", "head_out.",
    "aux_head.",
)


def split_parameter_groups(model: CmaModel) -> tuple:
    """(backbone_params, crossmodal_params), disjoint and exhaustive."""
    backbone, crossmodal = [], []
    for name, param in model.named_parameters():
        if name.startswith(_CROSSMODAL_PREFIXES):
            crossmodal.append(param)
        elif name.startswith("backbone."):
            backbone.append(param)
        else:
            raise ValueError(f"parameter {name!r} belongs to no optimizer group")
    return backbone, crossmodal


def loss_terms(model: CmaModel, x, tf, tokens, y, lambda_aux: float) -> tuple:
    """(total, forecast_mse, aux_mse) for one batch."""
    y_hat, y_aux = model.forward_with_aux(x, tf, tokens)
    target = y.unsqueeze(-1)
    forecast = F.mse_loss(y_hat, target)
    aux = F.mse_loss(y_aux, target)
    return forecast + lambda_aux * aux, forecast, aux


@dataclass
class TrainResult:
    model: CmaModel
    seed: int
    best_epoch: int
    stopped_early: bool
    history: list = field(default_factory=list)  # (epoch, train_loss, val_mse|None)

    @property
    def best_val_mse(self) -> float:
        vals = [v for _, _, v in self.history if v is not None]
        return min(vals) if vals else float("nan")


def _forecast(model: CmaModel, data: dict, chunk: int = 256) -> torch.Tensor:
    model.eval()
    outputs = []
    with torch.no_grad():
        for lo in range(0, data["x"].shape[0], chunk):
            idx = torch.arange(lo, min(lo + chunk, data["x"].shape[0]))
            outputs.append(model(data["x"][idx], data["tf"][idx],
                                 data["tokens"].index(idx)))
    return torch.cat(outputs) if outputs else torch.zeros(0)


def evaluate(model: CmaModel, data: dict) -> tuple:
    """Per-window MAE and MSE, pooled uniformly across windows."""
    if data["x"].shape[0] == 0:
        return float("nan"), float("nan")
    preds = _forecast(model, data).squeeze(-1)
    err = (preds - data["y"]).double().numpy()
    mae = float(np.mean(np.mean(np.abs(err), axis=1)))
    mse = float(np.mean(np.mean(err ** 2, axis=1)))
    return mae, mse


def train_model(
    model: CmaModel,
    train_data: dict,
    val_data: dict,
    hp: CmaHyperparams,
    seed: int,
) -> TrainResult:
    """Fit in place and return the model carrying its best-epoch weights."""
    n_train = train_data["x"].shape[0]
    if n_train == 0:
        raise ValueError("need at least one training window")
    has_val = val_data["x"].shape[0] > 0
    if not has_val:
        warnings.warn("no validation windows; training runs to max epochs")

    backbone_params, crossmodal_params = split_parameter_groups(model)
    opt_backbone = torch.optim.Adam(backbone_params, lr=hp.lr_backbone)
    opt_crossmodal = torch.optim.Adam(crossmodal_params, lr=hp.lr_crossmodal)
    shuffler = torch.Generator().manual_seed(seed + 1)

    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_metric = float("inf")
    best_epoch = -1
    epochs_without_gain = 0
    history = []
    stopped_early = False

    for epoch in range(hp.max_epochs):
        model.train()
        order = torch.randperm(n_train, generator=shuffler)
        epoch_loss = 0.0
        for lo in range(0, n_train, hp.batch_size):
            idx = order[lo : lo + hp.batch_size]
            opt_backbone.zero_grad()
            opt_crossmodal.zero_grad()
            total, _, _ = loss_terms(
                model,
                train_data["x"][idx],
                train_data["tf"][idx],
                train_data["tokens"].index(idx),
                train_data["y"][idx],
                hp.lambda_aux,
            )
            total.backward()
            opt_backbone.step()
            opt_crossmodal.step()
            epoch_loss += float(total.item()) * len(idx)
        train_loss = epoch_loss / n_train

        val_mse = evaluate(model, val_data)[1] if has_val else None
        history.append((epoch, train_loss, val_mse))
        if not has_val:
            continue
        if val_mse < best_metric:
            best_metric = val_mse
            best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            epochs_without_gain = 0
        else:
            epochs_without_gain += 1
            if epochs_without_gain >= hp.patience:
                stopped_early = True
                break

    if has_val:
        model.load_state_dict(best_state)
    else:
        best_epoch = hp.max_epochs - 1
    return TrainResult(
        model=model, seed=seed, best_epoch=best_epoch,
        stopped_early=stopped_early, history=history,
    )


def build_model(hp: CmaHyperparams, seed: int) -> CmaModel:
    """Seeded construction; gates and the type-pool blend start at zero."""
    torch.manual_seed(seed)
    return CmaModel(hp)
