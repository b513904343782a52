"""Forecast evaluation: metrics, protocols, and report rows.

All protocols share one mechanical core: collect fixed-geometry windows
from normalized per-event series, fit a model per seed on the pooled
train windows, and score pooled test windows. Metrics are averaged per
window first and pooled uniformly across events, so a loud event cannot
swamp the benchmark.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import make_model
from .corpus import CATEGORIES
from .graph import high_interaction_subset
from .series import (
    GRANULARITY_WINDOWS,
    EventSeries,
    make_windows,
)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_TOP_PERCENTS = (5, 10, 20, 50)
TARGETS = ("count", "sentiment")
TEXT_CONFIGS = ("none", "flat", "structured")
PROTOCOLS = ("within_event", "text_augmented", "structure_aware", "loco")

# Float slack for the per-window Jensen assertion.
_JENSEN_EPS = 1e-9


class EvalError(RuntimeError):
    pass


# --- metrics ----------------------------------------------------------------

def per_window_metrics(pred: np.ndarray, truth: np.ndarray) -> tuple:
    """Per-window MAE and MSE; shapes must match exactly.

    Every batch is checked against the Jensen inequality
    ``MSE >= MAE**2``, which any correct implementation satisfies
    window by window.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise EvalError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = np.abs(pred - truth)
    mae_w = err.mean(axis=1)
    mse_w = (err ** 2).mean(axis=1)
    if not np.all(mse_w + _JENSEN_EPS >= mae_w ** 2):
        raise EvalError("per-window MSE fell below MAE^2; metric implementation broken")
    return mae_w, mse_w


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(per_window_metrics(pred, truth)[0].mean())


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(per_window_metrics(pred, truth)[1].mean())


def mae_over_bins(bin_errors: dict, subset: Optional[set] = None) -> Optional[float]:
    """Mean per-bin absolute error over ``subset`` (all bins when None).

    Keys are summed in sorted order, so the full-subset result is bit-equal
    to the unrestricted one regardless of set iteration order.
    """
    keys = bin_errors.keys() if subset is None else subset
    values = [bin_errors[k] for k in sorted(keys)]
    if not values:
        return None
    return float(np.mean(values))


# --- window collection ----------------------------------------------------------

@dataclass
class WindowSet:
    lookbacks: np.ndarray      # [n, L]
    horizons: np.ndarray       # [n, H]
    event_ids: list
    starts: list

    def __len__(self) -> int:
        return len(self.event_ids)

    @classmethod
    def empty(cls, lookback: int, horizon: int) -> "WindowSet":
        return cls(
            lookbacks=np.zeros((0, lookback)),
            horizons=np.zeros((0, horizon)),
            event_ids=[], starts=[],
        )


def series_values(series: EventSeries, target: str) -> np.ndarray:
    return np.array(
        [np.nan if v is None else float(v) for v in series.values_for(target)],
        dtype=np.float64,
    )


def collect_windows(
    series_list: Sequence[EventSeries],
    target: str,
    granularity: str,
) -> tuple:
    """Pool windows of every event at one granularity, keyed by split.

    Windows touching a missing (never-imputed) bin are dropped; the count
    of such windows is returned for the audit trail.
    """
    lookback, horizon = GRANULARITY_WINDOWS[granularity]
    sets = {name: WindowSet.empty(lookback, horizon) for name in ("train", "val", "test")}
    buffers = {name: ([], [], [], []) for name in sets}
    dropped_nan = 0
    for series in series_list:
        if series.granularity != granularity:
            continue
        values = series_values(series, target)
        for spec in make_windows(series.event_id, series.splits, lookback, horizon):
            lb = values[spec.start : spec.start + lookback]
            hz = values[spec.start + lookback : spec.start + lookback + horizon]
            if np.isnan(lb).any() or np.isnan(hz).any():
                dropped_nan += 1
                continue
            xs, ys, ids, starts = buffers[spec.split]
            xs.append(lb)
            ys.append(hz)
            ids.append(series.event_id)
            starts.append(spec.start)
    for name, (xs, ys, ids, starts) in buffers.items():
        if xs:
            sets[name] = WindowSet(
                lookbacks=np.stack(xs), horizons=np.stack(ys),
                event_ids=ids, starts=starts,
            )
    return sets, dropped_nan


def per_bin_abs_errors(
    window_set: WindowSet, preds: np.ndarray, lookback: int
) -> dict:
    """Mean absolute error per (event, bin index) across covering windows."""
    if preds.shape != window_set.horizons.shape:
        raise EvalError("prediction and horizon shapes must match")
    sums: dict = {}
    counts: dict = {}
    err = np.abs(preds - window_set.horizons)
    horizon = err.shape[1]
    for i in range(len(window_set)):
        event = window_set.event_ids[i]
        base = window_set.starts[i] + lookback
        for j in range(horizon):
            key = (event, base + j)
            sums[key] = sums.get(key, 0.0) + float(err[i, j])
            counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


# --- report rows ---------------------------------------------------------------

REPORT_COLUMNS = (
    "model", "target", "granularity", "protocol", "text_config",
    "metric", "k", "held_out", "mean", "std", "n_seeds",
)


@dataclass(frozen=True)
class EvalRow:
    model: str
    target: str
    granularity: str
    protocol: str
    metric: str
    mean: float
    std: float
    n_seeds: int
    text_config: str = ""
    k: Optional[int] = None
    held_out: str = ""

    def as_csv_row(self) -> list:
        return [
            self.model, self.target, self.granularity, self.protocol,
            self.text_config, self.metric,
            "" if self.k is None else str(self.k),
            self.held_out,
            repr(self.mean), repr(self.std), str(self.n_seeds),
        ]


def _row_sort_key(row: EvalRow) -> tuple:
    return (
        row.protocol, row.granularity, row.target, row.model,
        row.text_config, row.metric, row.k if row.k is not None else -1,
        row.held_out,
    )


def write_report(rows: Sequence[EvalRow], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=_row_sort_key)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in ordered:
            writer.writerow(row.as_csv_row())


def read_report(path: Path) -> list:
    rows = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(record)
    return rows


def write_audit(audit: dict, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- seed aggregation ------------------------------------------------------------

def _aggregate(values: Sequence[float], n_seeds: int, deterministic: bool) -> tuple:
    """Across-seed mean and population std.

    Deterministic models are evaluated once; their variance is exactly
    zero by construction rather than by floating-point accident.
    """
    if deterministic:
        return float(values[0]), 0.0, n_seeds
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std()), len(values)


def _fit_and_predict(
    model_kind: str,
    train: WindowSet,
    val: WindowSet,
    test: WindowSet,
    seed: int,
    lookback: int,
    horizon: int,
):
    model = make_model(model_kind, lookback, horizon)
    if len(train) == 0:
        raise EvalError(f"no training windows for {model_kind}")
    model.fit(
        train.lookbacks, train.horizons,
        val.lookbacks if len(val) else None,
        val.horizons if len(val) else None,
        seed,
    )
    return model, model.predict(test.lookbacks)


def _is_deterministic(model_kind: str) -> bool:
    return make_model(model_kind, 2, 1).deterministic


def _seeds_for(model_kind: str, seeds: Sequence[int]) -> Sequence[int]:
    """Deterministic models are scored once; seed sweeps add nothing."""
    return seeds[:1] if _is_deterministic(model_kind) else seeds


# --- protocols ------------------------------------------------------------------

def run_within_event(
    series_list: Sequence[EventSeries],
    model_kinds: Sequence[str],
    granularities: Sequence[str] = ("1d", "12h", "6h"),
    targets: Sequence[str] = TARGETS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> tuple:
    """Global model per (granularity, target), chronological per-event splits."""
    rows: list = []
    audit: dict = {}
    for granularity in granularities:
        lookback, horizon = GRANULARITY_WINDOWS[granularity]
        for target in targets:
            sets, dropped = collect_windows(series_list, target, granularity)
            if len(sets["test"]) == 0:
                continue
            for kind in model_kinds:
                deterministic = _is_deterministic(kind)
                maes, mses = [], []
                for seed in _seeds_for(kind, seeds):
                    _, preds = _fit_and_predict(
                        kind, sets["train"], sets["val"], sets["test"],
                        seed, lookback, horizon,
                    )
                    mae_w, mse_w = per_window_metrics(preds, sets["test"].horizons)
                    maes.append(float(mae_w.mean()))
                    mses.append(float(mse_w.mean()))
                    audit.setdefault(granularity, {}).setdefault(target, {}).setdefault(
                        kind, {}
                    )[str(seed)] = {
                        "n_train": len(sets["train"]),
                        "n_val": len(sets["val"]),
                        "n_test": len(sets["test"]),
                        "n_dropped_nan": dropped,
                        "per_window_abs_error": [float(v) for v in mae_w],
                    }
                for metric, values in (("mae", maes), ("mse", mses)):
                    mean, std, n = _aggregate(values, len(seeds), deterministic)
                    rows.append(EvalRow(
                        model=kind, target=target, granularity=granularity,
                        protocol="within_event", metric=metric,
                        mean=mean, std=std, n_seeds=n,
                    ))
    return rows, audit


def run_structure_aware(
    series_list: Sequence[EventSeries],
    model_kinds: Sequence[str],
    top_percents: Sequence[int] = DEFAULT_TOP_PERCENTS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    granularity: str = "1d",
    target: str = "sentiment",
) -> tuple:
    """Error on the most interactive test bins, per pooled-percentile slice."""
    lookback, horizon = GRANULARITY_WINDOWS[granularity]
    sets, _ = collect_windows(series_list, target, granularity)
    test = sets["test"]
    if len(test) == 0:
        raise EvalError("no test windows available")

    ratios_by_event: dict = {
        s.event_id: s.reply_ratios for s in series_list if s.granularity == granularity
    }
    # Bins eligible for the pool: covered by at least one test horizon and
    # carrying a defined reply ratio, so subset errors are always defined.
    covered: set = set()
    for i in range(len(test)):
        base = test.starts[i] + lookback
        for j in range(horizon):
            covered.add((test.event_ids[i], base + j))
    pooled_ratios = {}
    for event_id, bin_idx in covered:
        ratios = ratios_by_event.get(event_id)
        if ratios is None or bin_idx >= len(ratios):
            continue
        ratio = ratios[bin_idx]
        if ratio is not None:
            pooled_ratios[(event_id, bin_idx)] = ratio
    if not pooled_ratios:
        raise EvalError("no test bins carry a reply ratio")

    rows: list = []
    audit: dict = {"n_pooled_bins": len(pooled_ratios)}
    for kind in model_kinds:
        deterministic = _is_deterministic(kind)
        per_seed: dict = {k: [] for k in top_percents}
        for seed in _seeds_for(kind, seeds):
            _, preds = _fit_and_predict(
                kind, sets["train"], sets["val"], test, seed, lookback, horizon
            )
            bin_errors = per_bin_abs_errors(test, preds, lookback)
            for k in top_percents:
                subset = high_interaction_subset(pooled_ratios, k)
                value = mae_over_bins(bin_errors, subset)
                if value is None:
                    raise EvalError(f"empty high-interaction subset at k={k}")
                per_seed[k].append(value)
        for k in top_percents:
            mean, std, n = _aggregate(per_seed[k], len(seeds), deterministic)
            rows.append(EvalRow(
                model=kind, target=target, granularity=granularity,
                protocol="structure_aware", metric="mae_reply",
                k=k, mean=mean, std=std, n_seeds=n,
            ))
    return rows, audit


def run_loco(
    series_list: Sequence[EventSeries],
    model_kinds: Sequence[str],
    granularity: str = "1d",
    targets: Sequence[str] = TARGETS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> tuple:
    """Leave-one-category-out transfer: test on the held-out category only.

    Training pools the other categories' train windows and early-stops on
    their val windows.
    """
    lookback, horizon = GRANULARITY_WINDOWS[granularity]
    present = [c for c in CATEGORIES if any(s.category == c for s in series_list)]
    if len(present) < 2:
        raise EvalError("leave-one-category-out needs at least two categories")
    rows: list = []
    audit: dict = {}
    for target in targets:
        for held in present:
            held_events = [s for s in series_list if s.category == held]
            other_events = [s for s in series_list if s.category != held]
            train_sets, _ = collect_windows(other_events, target, granularity)
            test_sets, _ = collect_windows(held_events, target, granularity)
            test = test_sets["test"]
            if len(test) == 0 or len(train_sets["train"]) == 0:
                continue
            for kind in model_kinds:
                deterministic = _is_deterministic(kind)
                maes, mses = [], []
                for seed in _seeds_for(kind, seeds):
                    _, preds = _fit_and_predict(
                        kind, train_sets["train"], train_sets["val"], test,
                        seed, lookback, horizon,
                    )
                    mae_w, mse_w = per_window_metrics(preds, test.horizons)
                    maes.append(float(mae_w.mean()))
                    mses.append(float(mse_w.mean()))
                audit.setdefault(target, {})[held] = {
                    "n_train": len(train_sets["train"]),
                    "n_test": len(test),
                }
                for metric, values in (("mae", maes), ("mse", mses)):
                    mean, std, n = _aggregate(values, len(seeds), deterministic)
                    rows.append(EvalRow(
                        model=kind, target=target, granularity=granularity,
                        protocol="loco", metric=metric, held_out=held,
                        mean=mean, std=std, n_seeds=n,
                    ))
    return rows, audit


def run_text_augmented(
    series_list: Sequence[EventSeries],
    model_kinds: Sequence[str],
    views_index: Callable,
    text_configs: Sequence[str] = TEXT_CONFIGS,
    granularity: str = "1d",
    targets: Sequence[str] = ("sentiment",),
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> tuple:
    """Score every model under each text condition on identical windows.

    ``views_index(event_id)`` must return the event's per-bin views (any
    truthy sequence aligned with the series bins); a missing or
    misaligned view set is an error raised before any training starts.
    The bundled numeric baselines are text-blind, so their rows repeat
    across configurations by construction; text-aware models plug into
    the same window geometry through their own packages.
    """
    unknown = set(text_configs) - set(TEXT_CONFIGS)
    if unknown:
        raise EvalError(f"unknown text configs: {sorted(unknown)}")
    lookback, horizon = GRANULARITY_WINDOWS[granularity]
    relevant = [s for s in series_list if s.granularity == granularity]
    for series in relevant:
        views = views_index(series.event_id)
        if not views or len(views) != series.n_bins:
            raise EvalError(
                f"missing or misaligned text views for event {series.event_id}"
            )
    rows: list = []
    audit: dict = {}
    for target in targets:
        sets, _ = collect_windows(series_list, target, granularity)
        if len(sets["test"]) == 0:
            continue
        for kind in model_kinds:
            deterministic = _is_deterministic(kind)
            maes, mses = [], []
            for seed in _seeds_for(kind, seeds):
                _, preds = _fit_and_predict(
                    kind, sets["train"], sets["val"], sets["test"],
                    seed, lookback, horizon,
                )
                mae_w, mse_w = per_window_metrics(preds, sets["test"].horizons)
                maes.append(float(mae_w.mean()))
                mses.append(float(mse_w.mean()))
            audit.setdefault(target, {})[kind] = {
                "n_test": len(sets["test"]), "text_blind": True,
            }
            for config in text_configs:
                for metric, values in (("mae", maes), ("mse", mses)):
                    mean, std, n = _aggregate(values, len(seeds), deterministic)
                    rows.append(EvalRow(
                        model=kind, target=target, granularity=granularity,
                        protocol="text_augmented", text_config=config,
                        metric=metric, mean=mean, std=std, n_seeds=n,
                    ))
    return rows, audit
