from __future__ import annotations

import numpy as np
import pytest
import torch

from fd_check import relative_gradient_error

from eventpulse.baselines import (
    DLinear,
    DLinearModel,
    LastValueModel,
    MovingAverageModel,
    TrainConfig,
    dlinear_kernel_size,
    init_dlinear,
    last_value_forecast,
    load_checkpoint,
    make_model,
    moving_average_forecast,
    save_checkpoint,
    train_dlinear,
)


# --- naive models ------------------------------------------------------------

def test_last_value_example():
    out = last_value_forecast(np.array([[1.0, 2.0, 3.0]]), horizon=2)
    assert out.tolist() == [[3.0, 3.0]]


def test_moving_average_examples():
    out = moving_average_forecast(np.array([[1, 2, 3, 4, 5, 6, 7]], dtype=float), horizon=3)
    assert out.tolist() == [[4.0, 4.0, 4.0]]
    # Lookback shorter than the window: trailing mean of what exists.
    out = moving_average_forecast(np.array([[1.0, 2.0, 3.0]]), horizon=2)
    assert out.tolist() == [[2.0, 2.0]]
    # Lookback longer than the window: only the last 7 values count.
    lb = np.array([[100.0] * 5 + [1, 2, 3, 4, 5, 6, 7]])
    out = moving_average_forecast(lb, horizon=1)
    assert out.tolist() == [[4.0]]


def test_naive_models_translation_equivariant():
    rng = np.random.default_rng(12)
    for _ in range(30):
        lb = rng.normal(size=(4, 14))
        shift = float(rng.normal() * 10)
        for model in (LastValueModel(14, 7), MovingAverageModel(14, 7)):
            base = model.predict(lb)
            shifted = model.predict(lb + shift)
            assert np.allclose(shifted, base + shift, atol=1e-12)


def test_naive_models_ignore_seed():
    lb = np.random.default_rng(0).normal(size=(8, 14))
    model = LastValueModel(14, 7)
    outs = []
    for seed in range(5):
        model.fit(None, None, None, None, seed)
        outs.append(model.predict(lb))
    for out in outs[1:]:
        assert np.array_equal(out, outs[0])


# --- DLinear structure ----------------------------------------------------------

def test_kernel_size_formula():
    assert dlinear_kernel_size(14) == 15
    assert dlinear_kernel_size(30) == 25
    assert dlinear_kernel_size(1) == 3
    assert dlinear_kernel_size(2) == 3
    assert dlinear_kernel_size(28) == 25
    assert dlinear_kernel_size(56) == 25
    for L in range(1, 120):
        k = dlinear_kernel_size(L)
        assert k % 2 == 1 and 3 <= k <= 25


def test_decompose_constant_series():
    model = DLinear(10, 3)
    x = torch.full((2, 10), 5.0)
    trend, residual = model.decompose(x)
    assert torch.allclose(trend, x)
    assert torch.allclose(residual, torch.zeros_like(x))


def test_decompose_linear_interior():
    # A centered moving average reproduces a linear ramp away from edges.
    model = DLinear(20, 3)
    k = model.kernel_size
    x = torch.arange(20, dtype=torch.float32).unsqueeze(0)
    trend, _ = model.decompose(x)
    half = (k - 1) // 2
    assert torch.allclose(trend[0, half:-half], x[0, half:-half], atol=1e-5)


def test_zero_weights_output_is_bias():
    model = DLinear(14, 7)
    with torch.no_grad():
        model.trend_head.weight.zero_()
        model.residual_head.weight.zero_()
        model.trend_head.bias.fill_(1.5)
        model.residual_head.bias.fill_(-0.5)
    for x in (torch.zeros(3, 14), torch.randn(3, 14)):
        out = model(x)
        assert torch.allclose(out, torch.full((3, 7), 1.0))


def test_zero_init_zero_input_zero_output():
    model = DLinear(14, 7)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    assert torch.all(model(torch.zeros(2, 14)) == 0)


def test_init_seeded_and_bounded():
    a = DLinear(14, 7)
    b = DLinear(14, 7)
    init_dlinear(a, seed=3)
    init_dlinear(b, seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = DLinear(14, 7)
    init_dlinear(c, seed=4)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))
    bound = 1.0 / 14 ** 0.5
    for p in a.parameters():
        assert p.abs().max().item() <= bound


# --- gradient check ----------------------------------------------------------

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1001)
    for draw in range(10):
        model = DLinear(14, 7).double()
        init_dlinear(model, seed=1000 + draw)
        x = torch.as_tensor(rng.normal(size=(4, 14)))
        y = torch.as_tensor(rng.normal(size=(4, 7)))
        err = relative_gradient_error(model, x, y)
        assert err <= 1e-4, (draw, err)


# --- training ----------------------------------------------------------------

def _persistence_windows(rng, n, noise=0.01):
    x = rng.normal(size=(n, 14))
    y = np.repeat(x[:, -1:], 7, axis=1) + rng.normal(scale=noise, size=(n, 7))
    return x, y


def test_train_learns_persistence():
    rng = np.random.default_rng(42)
    tx, ty = _persistence_windows(rng, 512)
    vx, vy = _persistence_windows(rng, 128)
    trained = train_dlinear(tx, ty, vx, vy, seed=0)
    pred = trained.predict(vx)
    dlinear_mse = float(np.mean((pred - vy) ** 2))
    lv_mse = float(np.mean((last_value_forecast(vx, 7) - vy) ** 2))
    assert dlinear_mse < lv_mse + 0.05
    # Best checkpoint actually corresponds to the best recorded val MSE.
    recorded = [v for _, _, v in trained.history if v is not None]
    assert recorded[trained.best_epoch] == min(recorded)
    running_best = np.minimum.accumulate(recorded)
    assert all(b2 <= b1 for b1, b2 in zip(running_best, running_best[1:]))


def test_train_is_seed_deterministic():
    rng = np.random.default_rng(9)
    tx, ty = _persistence_windows(rng, 64)
    a = train_dlinear(tx, ty, None, None, seed=5)
    b = train_dlinear(tx, ty, None, None, seed=5)
    lb = rng.normal(size=(3, 14))
    assert np.array_equal(a.predict(lb), b.predict(lb))
    c = train_dlinear(tx, ty, None, None, seed=6)
    assert not np.array_equal(a.predict(lb), c.predict(lb))


def test_train_without_val_warns_and_uses_train_mse():
    rng = np.random.default_rng(3)
    tx, ty = _persistence_windows(rng, 64)
    with pytest.warns(UserWarning, match="no validation"):
        trained = train_dlinear(tx, ty, None, None, seed=1,
                                config=TrainConfig(max_epochs=5))
    assert all(v is None for _, _, v in trained.history)


def test_train_early_stops():
    rng = np.random.default_rng(3)
    tx, ty = _persistence_windows(rng, 256)
    vx, vy = _persistence_windows(rng, 64)
    trained = train_dlinear(tx, ty, vx, vy, seed=2,
                            config=TrainConfig(max_epochs=100, patience=3))
    recorded = [v for _, _, v in trained.history]
    if trained.stopped_early:
        assert len(recorded) < 100
        # The final `patience` epochs never improved on the running best.
        best = min(recorded)
        assert all(v > best for v in recorded[-3:])
        assert recorded.index(best) == trained.best_epoch


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    tx, ty = _persistence_windows(rng, 64)
    trained = train_dlinear(tx, ty, None, None, seed=4, config=TrainConfig(max_epochs=3))
    path = tmp_path / "model.json"
    save_checkpoint(trained, path)
    loaded = load_checkpoint(path)
    lb = rng.normal(size=(5, 14))
    assert np.array_equal(trained.predict(lb), loaded.predict(lb))
    assert loaded.model.kernel_size == trained.model.kernel_size


def test_make_model_registry():
    for kind in ("last_value", "moving_average", "dlinear"):
        model = make_model(kind, 14, 7)
        assert model.kind == kind
    with pytest.raises(ValueError):
        make_model("prophet", 14, 7)
    assert make_model("last_value", 14, 7).deterministic
    assert not make_model("dlinear", 14, 7).deterministic


def test_dlinear_model_requires_fit():
    model = DLinearModel(14, 7)
    with pytest.raises(RuntimeError):
        model.predict(np.zeros((1, 14)))