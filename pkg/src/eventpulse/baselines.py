"""Forecasting baselines: repeat-last, trailing mean, and DLinear.

DLinear decomposes the lookback into a trend (centered moving average,
edges padded by replication) and a residual, and maps each through its
own linear head. Training is plain Adam with early stopping on validation
MSE and best-checkpoint restoration. The naive models have no parameters
at all and are exactly seed-independent.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

MOVING_AVERAGE_WINDOW = 7


def dlinear_kernel_size(lookback: int) -> int:
    """Odd decomposition kernel, clamped to [3, 25]."""
    return min(25, max(3, 2 * (lookback // 2) + 1))


def last_value_forecast(lookbacks: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the final observed value across the horizon."""
    lookbacks = np.asarray(lookbacks, dtype=np.float64)
    return np.repeat(lookbacks[:, -1:], horizon, axis=1)


def moving_average_forecast(
    lookbacks: np.ndarray, horizon: int, window: int = MOVING_AVERAGE_WINDOW
) -> np.ndarray:
    """Repeat the trailing mean of the last min(window, L) values."""
    lookbacks = np.asarray(lookbacks, dtype=np.float64)
    w = min(window, lookbacks.shape[1])
    tail_mean = lookbacks[:, -w:].mean(axis=1, keepdims=True)
    return np.repeat(tail_mean, horizon, axis=1)


class DLinear(nn.Module):
    """Trend/residual decomposition with per-component linear heads."""

    def __init__(self, lookback: int, horizon: int, kernel_size: Optional[int] = None):
        super().__init__()
        self.lookback = lookback
        self.horizon = horizon
        self.kernel_size = kernel_size or dlinear_kernel_size(lookback)
        if self.kernel_size % 2 != 1:
            raise ValueError("decomposition kernel must be odd")
        self.trend_head = nn.Linear(lookback, horizon)
        self.residual_head = nn.Linear(lookback, horizon)

    def decompose(self, x: torch.Tensor) -> tuple:
        pad = (self.kernel_size - 1) // 2
        padded = F.pad(x.unsqueeze(1), (pad, pad), mode="replicate")
        trend = F.avg_pool1d(padded, self.kernel_size, stride=1).squeeze(1)
        return trend, x - trend

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        trend, residual = self.decompose(x)
        return self.trend_head(trend) + self.residual_head(residual)


def init_dlinear(model: DLinear, seed: int) -> None:
    """Uniform(-1/sqrt(L), 1/sqrt(L)) on every weight and bias, seeded."""
    bound = 1.0 / math.sqrt(model.lookback)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in model.parameters():
            param.uniform_(-bound, bound, generator=generator)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32


@dataclass
class TrainedDLinear:
    model: DLinear
    seed: int
    best_epoch: int
    stopped_early: bool
    history: list = field(default_factory=list)  # (epoch, train_mse, val_mse|None)

    def predict(self, lookbacks: np.ndarray) -> np.ndarray:
        x = torch.as_tensor(np.asarray(lookbacks), dtype=torch.float32)
        self.model.eval()
        with torch.no_grad():
            out = self.model(x)
        return out.numpy().astype(np.float64)


def _epoch_mse(model: DLinear, x: torch.Tensor, y: torch.Tensor) -> float:
    model.eval()
    with torch.no_grad():
        return float(F.mse_loss(model(x), y).item())


def train_dlinear(
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: Optional[np.ndarray],
    val_y: Optional[np.ndarray],
    seed: int,
    config: Optional[TrainConfig] = None,
) -> TrainedDLinear:
    """Fit one DLinear on pooled windows.

    Early stopping watches validation MSE; with no validation windows it
    falls back to train MSE and warns. The returned model carries the
    best-epoch weights, not the last ones.
    """
    config = config or TrainConfig()
    torch.set_num_threads(1)  # keeps reruns bit-identical
    tx = torch.as_tensor(np.asarray(train_x), dtype=torch.float32)
    ty = torch.as_tensor(np.asarray(train_y), dtype=torch.float32)
    if tx.ndim != 2 or tx.shape[0] == 0:
        raise ValueError("need a non-empty [n, lookback] training matrix")
    has_val = val_x is not None and len(val_x) > 0
    if has_val:
        vx = torch.as_tensor(np.asarray(val_x), dtype=torch.float32)
        vy = torch.as_tensor(np.asarray(val_y), dtype=torch.float32)
    else:
        warnings.warn("no validation windows; early stopping falls back to train MSE")

    model = DLinear(tx.shape[1], ty.shape[1])
    init_dlinear(model, seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    shuffler = torch.Generator().manual_seed(seed + 1)

    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_metric = float("inf")
    best_epoch = -1
    epochs_without_gain = 0
    history = []
    stopped_early = False

    for epoch in range(config.max_epochs):
        model.train()
        order = torch.randperm(tx.shape[0], generator=shuffler)
        for lo in range(0, tx.shape[0], config.batch_size):
            idx = order[lo : lo + config.batch_size]
            optimizer.zero_grad()
            loss = F.mse_loss(model(tx[idx]), ty[idx])
            loss.backward()
            optimizer.step()
        train_mse = _epoch_mse(model, tx, ty)
        val_mse = _epoch_mse(model, vx, vy) if has_val else None
        history.append((epoch, train_mse, val_mse))
        monitored = val_mse if has_val else train_mse
        if monitored < best_metric:
            best_metric = monitored
            best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            epochs_without_gain = 0
        else:
            epochs_without_gain += 1
            if epochs_without_gain >= config.patience:
                stopped_early = True
                break

    model.load_state_dict(best_state)
    return TrainedDLinear(
        model=model, seed=seed, best_epoch=best_epoch,
        stopped_early=stopped_early, history=history,
    )


def save_checkpoint(trained: TrainedDLinear, path: Path) -> None:
    state = {
        "kind": "dlinear",
        "lookback": trained.model.lookback,
        "horizon": trained.model.horizon,
        "kernel_size": trained.model.kernel_size,
        "seed": trained.seed,
        "best_epoch": trained.best_epoch,
        "weights": {
            k: v.numpy().astype(np.float64).tolist()
            for k, v in trained.model.state_dict().items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path: Path) -> TrainedDLinear:
    state = json.loads(Path(path).read_text(encoding="utf-8"))
    if state.get("kind") != "dlinear":
        raise ValueError(f"not a dlinear checkpoint: {path}")
    model = DLinear(state["lookback"], state["horizon"], state["kernel_size"])
    tensors = {
        k: torch.as_tensor(np.asarray(v), dtype=torch.float32)
        for k, v in state["weights"].items()
    }
    model.load_state_dict(tensors)
    return TrainedDLinear(
        model=model, seed=state["seed"], best_epoch=state["best_epoch"],
        stopped_early=False, history=[],
    )


# --- uniform model interface for the evaluation harness --------------------

class ForecastModel:
    """fit/predict wrapper; deterministic models ignore the seed."""

    kind: str = "base"
    deterministic: bool = True

    def __init__(self, lookback: int, horizon: int):
        self.lookback = lookback
        self.horizon = horizon

    def fit(self, train_x, train_y, val_x, val_y, seed: int) -> None:
        return None

    def predict(self, lookbacks: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class LastValueModel(ForecastModel):
    kind = "last_value"

    def predict(self, lookbacks):
        return last_value_forecast(lookbacks, self.horizon)


class MovingAverageModel(ForecastModel):
    kind = "moving_average"

    def predict(self, lookbacks):
        return moving_average_forecast(lookbacks, self.horizon)


class DLinearModel(ForecastModel):
    kind = "dlinear"
    deterministic = False

    def __init__(self, lookback: int, horizon: int, config: Optional[TrainConfig] = None):
        super().__init__(lookback, horizon)
        self.config = config
        self.trained: Optional[TrainedDLinear] = None

    def fit(self, train_x, train_y, val_x, val_y, seed: int) -> None:
        self.trained = train_dlinear(train_x, train_y, val_x, val_y, seed, self.config)

    def predict(self, lookbacks):
        if self.trained is None:
            raise RuntimeError("DLinear must be fit before predicting")
        return self.trained.predict(lookbacks)


MODEL_KINDS = ("last_value", "moving_average", "dlinear")


def make_model(kind: str, lookback: int, horizon: int, **kw) -> ForecastModel:
    if kind == "last_value":
        return LastValueModel(lookback, horizon)
    if kind == "moving_average":
        return MovingAverageModel(lookback, horizon)
    if kind == "dlinear":
        return DLinearModel(lookback, horizon, **kw)
    raise ValueError(f"unknown model kind {kind!r}")
