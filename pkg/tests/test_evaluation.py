"""Metric oracles and protocol behavior for the evaluation harness."""

import numpy as np
import pytest

from eventpulse.corpus import CATEGORIES
from eventpulse.evaluation import (
    REPORT_COLUMNS,
    EvalError,
    EvalRow,
    WindowSet,
    collect_windows,
    mae,
    mae_over_bins,
    mse,
    per_bin_abs_errors,
    per_window_metrics,
    read_report,
    run_loco,
    run_structure_aware,
    run_text_augmented,
    run_within_event,
    write_report,
)
from eventpulse.series import GRANULARITIES, EventSeries, chronological_split


def _mk_series(event_id, category, n=80, seed=0, granularity="1d", ratios=None):
    rng = np.random.default_rng(seed)
    width = GRANULARITIES[granularity]
    if ratios is None:
        ratios = [float(r) for r in rng.uniform(size=n)]
    return EventSeries(
        event_id=event_id,
        category=category,
        granularity=granularity,
        bin_width=width,
        bin_starts=[i * width for i in range(n)],
        counts=[1] * n,
        sentiments=[0.0] * n,
        splits=chronological_split(n),
        counts_z=[float(v) for v in rng.normal(size=n)],
        sentiments_z=[float(v) for v in rng.normal(size=n)],
        norm_stats={"mu_c": 0.0, "sigma_c": 1.0, "mu_s": 0.0, "sigma_s": 1.0},
        missing_segments=[],
        reply_ratios=ratios,
    )


# --- metric oracles ---------------------------------------------------------

def test_mae_mse_hand_example():
    pred = np.array([[1.0, 2.0, 3.0]])
    truth = np.array([[2.0, 2.0, 2.0]])
    assert mae(pred, truth) == pytest.approx(2.0 / 3.0)
    assert mse(pred, truth) == pytest.approx(2.0 / 3.0)


def test_pooled_metrics_average_windows_uniformly():
    pred = np.array([[0.0, 0.0], [2.0, 2.0]])
    truth = np.array([[1.0, 1.0], [0.0, 0.0]])
    mae_w, mse_w = per_window_metrics(pred, truth)
    assert mae_w.tolist() == [1.0, 2.0]
    assert mse_w.tolist() == [1.0, 4.0]
    assert mae(pred, truth) == pytest.approx(1.5)
    assert mse(pred, truth) == pytest.approx(2.5)


def test_metrics_reject_shape_mismatch():
    with pytest.raises(EvalError):
        per_window_metrics(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(EvalError):
        per_window_metrics(np.zeros(3), np.zeros(3))


def test_jensen_inequality_holds_on_random_batches():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n, h = int(rng.integers(1, 9)), int(rng.integers(1, 15))
        pred = rng.normal(size=(n, h)) * rng.uniform(0.1, 50)
        truth = rng.normal(size=(n, h))
        mae_w, mse_w = per_window_metrics(pred, truth)
        assert np.all(mse_w + 1e-9 >= mae_w**2)


def test_per_bin_errors_average_over_covering_windows():
    ws = WindowSet(
        lookbacks=np.zeros((2, 2)),
        horizons=np.zeros((2, 2)),
        event_ids=["e", "e"],
        starts=[0, 1],
    )
    preds = np.array([[1.0, 3.0], [5.0, 7.0]])
    errs = per_bin_abs_errors(ws, preds, lookback=2)
    assert errs == {("e", 2): 1.0, ("e", 3): 4.0, ("e", 4): 7.0}


def test_mae_over_bins_identity_and_empty():
    errs = {("e", 0): 1.0, ("e", 1): 3.0, ("f", 0): 5.0}
    assert mae_over_bins(errs) == pytest.approx(3.0)
    assert mae_over_bins(errs, set(errs)) == mae_over_bins(errs)
    assert mae_over_bins({}) is None


# --- window collection ------------------------------------------------------

def test_collect_windows_split_counts_and_alignment():
    series = _mk_series("e1", CATEGORIES[0], n=100)
    sets, dropped = collect_windows([series], "count", "1d")
    assert (len(sets["train"]), len(sets["val"]), len(sets["test"])) == (50, 4, 14)
    assert dropped == 0
    first = sets["train"]
    idx = first.starts.index(0)
    np.testing.assert_allclose(first.lookbacks[idx], series.counts_z[:14])
    np.testing.assert_allclose(first.horizons[idx], series.counts_z[14:21])


def test_collect_windows_drops_windows_touching_missing_bins():
    series = _mk_series("e1", CATEGORIES[0], n=100)
    series.counts_z[0] = None
    sets, dropped = collect_windows([series], "count", "1d")
    assert dropped == 1
    assert len(sets["train"]) == 49
    assert 0 not in sets["train"].starts


def test_collect_windows_filters_granularity():
    series = _mk_series("e1", CATEGORIES[0], n=100, granularity="12h")
    sets, _ = collect_windows([series], "count", "1d")
    assert all(len(sets[name]) == 0 for name in sets)


# --- protocol: within_event ---------------------------------------------------

def test_within_event_deterministic_rows():
    series = [
        _mk_series("e1", CATEGORIES[0], seed=1),
        _mk_series("e2", CATEGORIES[1], seed=2),
    ]
    rows, audit = run_within_event(
        series, ["last_value", "moving_average"], granularities=("1d",)
    )
    assert len(rows) == 8  # 2 models x 2 targets x 2 metrics
    for row in rows:
        assert row.protocol == "within_event"
        assert row.std == 0.0
        assert row.n_seeds == 5
        assert row.k is None and row.held_out == "" and row.text_config == ""
    assert audit["1d"]["count"]["last_value"]["0"]["n_test"] > 0


def test_within_event_matches_manual_last_value_score():
    series = [_mk_series("e1", CATEGORIES[0], seed=3)]
    sets, _ = collect_windows([series[0]], "count", "1d")
    test = sets["test"]
    manual_preds = np.tile(test.lookbacks[:, -1:], (1, test.horizons.shape[1]))
    expected_mae = float(np.abs(manual_preds - test.horizons).mean(axis=1).mean())

    rows, _ = run_within_event(
        series, ["last_value"], granularities=("1d",), targets=("count",)
    )
    got = {r.metric: r.mean for r in rows}
    assert got["mae"] == expected_mae


def test_within_event_seed_sweep_for_trained_model():
    series = [_mk_series("e1", CATEGORIES[0], seed=9)]
    rows, audit = run_within_event(
        series, ["dlinear"], granularities=("1d",), targets=("count",), seeds=(0, 1)
    )
    assert {r.metric for r in rows} == {"mae", "mse"}
    for row in rows:
        assert row.n_seeds == 2
        assert row.std >= 0.0
    assert set(audit["1d"]["count"]["dlinear"]) == {"0", "1"}


def test_within_event_skips_granularity_without_windows():
    series = [_mk_series("e1", CATEGORIES[0], granularity="1d")]
    rows, _ = run_within_event(series, ["last_value"], granularities=("1d", "6h"))
    assert {r.granularity for r in rows} == {"1d"}


# --- protocol: structure_aware -------------------------------------------------

def test_structure_aware_full_percent_equals_bin_mae():
    series = [
        _mk_series("e1", CATEGORIES[0], seed=4),
        _mk_series("e2", CATEGORIES[1], seed=5),
    ]
    rows, audit = run_structure_aware(
        series, ["last_value"], top_percents=(100, 50)
    )
    by_k = {r.k: r.mean for r in rows}

    # Independent recomputation over every pooled test bin.
    sets, _ = collect_windows(series, "sentiment", "1d")
    test = sets["test"]
    preds = np.tile(test.lookbacks[:, -1:], (1, test.horizons.shape[1]))
    errs = per_bin_abs_errors(test, preds, lookback=14)
    assert by_k[100] == pytest.approx(mae_over_bins(errs), abs=0)
    assert audit["n_pooled_bins"] == len(errs)
    assert rows[0].metric == "mae_reply"
    assert all(r.target == "sentiment" and r.granularity == "1d" for r in rows)


def test_structure_aware_requires_reply_ratios():
    series = [_mk_series("e1", CATEGORIES[0], ratios=[None] * 80)]
    with pytest.raises(EvalError, match="reply ratio"):
        run_structure_aware(series, ["last_value"])


# --- protocol: loco -----------------------------------------------------------

def test_loco_emits_one_block_per_held_category():
    series = [
        _mk_series(f"e{i}", cat, seed=i)
        for i, cat in enumerate(CATEGORIES[:3])
    ]
    rows, audit = run_loco(series, ["last_value"], targets=("count",))
    held = {r.held_out for r in rows}
    assert held == set(CATEGORIES[:3])
    assert len(rows) == 6  # 3 held-out x 2 metrics
    for row in rows:
        assert row.protocol == "loco"
        assert row.granularity == "1d"
    assert set(audit["count"]) == set(CATEGORIES[:3])


def test_loco_score_ignores_other_categories_for_stateless_model():
    series = [
        _mk_series("e1", CATEGORIES[0], seed=11),
        _mk_series("e2", CATEGORIES[1], seed=12),
    ]
    rows, _ = run_loco(series, ["last_value"], targets=("count",))
    held_first = [r for r in rows if r.held_out == CATEGORIES[0] and r.metric == "mae"]

    sets, _ = collect_windows([series[0]], "count", "1d")
    test = sets["test"]
    preds = np.tile(test.lookbacks[:, -1:], (1, test.horizons.shape[1]))
    expected = float(np.abs(preds - test.horizons).mean(axis=1).mean())
    assert held_first[0].mean == expected


def test_loco_requires_two_categories():
    with pytest.raises(EvalError, match="two categories"):
        run_loco([_mk_series("e1", CATEGORIES[0])], ["last_value"])


# --- protocol: text_augmented ---------------------------------------------------

def test_text_augmented_rows_identical_across_configs():
    series = [_mk_series("e1", CATEGORIES[0], seed=6)]
    views = {"e1": ["view"] * 80}
    rows, audit = run_text_augmented(series, ["last_value"], views.__getitem__)
    configs = {r.text_config for r in rows}
    assert configs == {"none", "flat", "structured"}
    by_config = {}
    for row in rows:
        by_config.setdefault(row.text_config, {})[row.metric] = row.mean
    assert by_config["none"] == by_config["flat"] == by_config["structured"]
    assert audit["sentiment"]["last_value"]["text_blind"] is True


def test_text_augmented_fails_fast_on_missing_views():
    series = [_mk_series("e1", CATEGORIES[0])]
    with pytest.raises(EvalError, match="misaligned"):
        run_text_augmented(series, ["last_value"], lambda _eid: ["v"] * 3)


def test_text_augmented_rejects_unknown_config():
    series = [_mk_series("e1", CATEGORIES[0])]
    with pytest.raises(EvalError, match="unknown text configs"):
        run_text_augmented(
            series, ["last_value"], lambda _eid: ["v"] * 80,
            text_configs=("none", "fancy"),
        )


# --- report writing --------------------------------------------------------------

def _sample_rows():
    return [
        EvalRow(
            model="dlinear", target="count", granularity="1d",
            protocol="within_event", metric="mae",
            mean=0.125, std=0.015625, n_seeds=5,
        ),
        EvalRow(
            model="last_value", target="sentiment", granularity="1d",
            protocol="structure_aware", metric="mae_reply",
            k=10, mean=1.5, std=0.0, n_seeds=5,
        ),
        EvalRow(
            model="last_value", target="count", granularity="1d",
            protocol="loco", metric="mse", held_out="political",
            mean=2.0, std=0.0, n_seeds=5,
        ),
    ]


def test_report_round_trip_and_columns(tmp_path):
    path = tmp_path / "report.csv"
    write_report(_sample_rows(), path)
    records = read_report(path)
    assert list(records[0].keys()) == list(REPORT_COLUMNS)
    by_protocol = {r["protocol"]: r for r in records}
    assert by_protocol["structure_aware"]["k"] == "10"
    assert by_protocol["within_event"]["k"] == ""
    assert by_protocol["loco"]["held_out"] == "political"
    assert by_protocol["within_event"]["std"] == "0.015625"
    assert by_protocol["loco"]["std"] == "0.0"


def test_report_bytes_stable_under_input_order(tmp_path):
    rows = _sample_rows()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_report(rows, a)
    write_report(list(reversed(rows)), b)
    assert a.read_bytes() == b.read_bytes()
