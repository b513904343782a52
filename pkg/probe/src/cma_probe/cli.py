"""Command line entry points: embed and eval.

embed walks every event built at a granularity, joins its per-bin token
grid with the unified post texts, and writes one embedding JSONL per
event using the deterministic hash provider. eval assembles windows
from the published artifacts, trains the fusion model under the
requested input configurations and seeds, and writes result rows in the
shared report schema.

Exit codes: 0 success, 2 unreadable or invalid input, 4 missing
upstream artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .dataset import (
    EMBED_DIR,
    GRANULARITY_WINDOWS,
    TARGET_COLUMNS,
    TEXT_CONFIGS,
    ArtifactMissing,
    DataContractError,
    apply_text_config,
    assemble_windows,
    ensure_text_present,
    list_series_events,
    read_event_texts,
    read_event_views,
    to_tensors,
)
from .embeddings import EMBED_DIM, export_event_embeddings, hash_embedding
from .hyperparams import CmaHyperparams, HyperparamError
from .report import ResultRow, aggregate_seeds, write_report
from .training import build_model, evaluate, train_model

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_MISSING_ARTIFACT = 4

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _split_csv(raw: str) -> list:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _cmd_embed(args) -> int:
    workdir = Path(args.workdir)
    gran = args.granularity
    out_dir = workdir / EMBED_DIR / gran
    out_dir.mkdir(parents=True, exist_ok=True)

    report = {}
    total_errors = []
    for event_id in list_series_events(workdir, gran):
        views = read_event_views(workdir, gran, event_id)
        texts = read_event_texts(workdir, event_id)
        lines, errors = export_event_embeddings(views, texts, hash_embedding, EMBED_DIM)
        payload = "".join(
            json.dumps(line, sort_keys=True, ensure_ascii=False) + "\n" for line in lines
        )
        (out_dir / f"{event_id}.jsonl").write_text(payload, encoding="utf-8")
        n_valid = sum(tok["valid"] for line in lines for tok in line["tokens"])
        report[event_id] = {
            "n_bins": len(lines),
            "n_valid_tokens": n_valid,
            "n_errors": len(errors),
        }
        total_errors.extend({"event_id": event_id, **err} for err in errors)

    summary = {"dim": EMBED_DIM, "events": report, "errors": total_errors}
    (out_dir / "embed_report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"embedded {len(report)} events at {gran} "
          f"({sum(r['n_valid_tokens'] for r in report.values())} tokens, "
          f"{len(total_errors)} errors)")
    return EXIT_OK


def _hyperparams(args, lookback: int, horizon: int) -> CmaHyperparams:
    return CmaHyperparams(
        d_model=args.d_model,
        backbone_heads=args.heads,
        e_layers=args.e_layers,
        d_ff=args.d_ff,
        dropout=args.dropout,
        lookback=lookback,
        horizon=horizon,
        prior_window=min(7, lookback),
        max_epochs=args.max_epochs,
        patience=args.patience,
        batch_size=args.batch_size,
    )


def _cmd_eval(args) -> int:
    torch.set_num_threads(1)  # keeps reruns bit-identical
    workdir = Path(args.workdir)
    gran = args.granularity
    target = args.target
    if target not in TARGET_COLUMNS:
        raise DataContractError(f"unknown target {target!r}")
    configs = _split_csv(args.configs)
    for config in configs:
        if config not in TEXT_CONFIGS:
            raise DataContractError(f"unknown text configuration {config!r}")
    seeds = [int(s) for s in _split_csv(args.seeds)]
    if not seeds:
        raise DataContractError("need at least one seed")

    lookback, horizon = GRANULARITY_WINDOWS[gran]
    hp = _hyperparams(args, lookback, horizon)
    window_sets, dropped = assemble_windows(workdir, gran, target, EMBED_DIM)
    counts = {split: len(ws) for split, ws in window_sets.items()}
    print(f"windows: {counts['train']} train / {counts['val']} val / "
          f"{counts['test']} test ({dropped} dropped)")

    rows = []
    audit = {"granularity": gran, "target": target, "windows": counts,
             "dropped_nan": dropped, "configs": {}}
    for config in configs:
        shaped = {split: apply_text_config(ws, config)
                  for split, ws in window_sets.items()}
        ensure_text_present(shaped, config)
        data = {split: to_tensors(ws) for split, ws in shaped.items()}
        per_seed = {"mae": [], "mse": [], "best_epoch": []}
        for seed in seeds:
            model = build_model(hp, seed)
            result = train_model(model, data["train"], data["val"], hp, seed)
            mae, mse = evaluate(result.model, data["test"])
            per_seed["mae"].append(mae)
            per_seed["mse"].append(mse)
            per_seed["best_epoch"].append(result.best_epoch)
        for metric in ("mae", "mse"):
            mean, std = aggregate_seeds(per_seed[metric])
            rows.append(ResultRow(
                model="cma", target=target, granularity=gran,
                protocol="text_augmented", text_config=config,
                metric=metric, mean=mean, std=std, n_seeds=len(seeds),
            ))
        audit["configs"][config] = per_seed
        print(f"{config}: mae {sum(per_seed['mae']) / len(seeds):.4f} "
              f"mse {sum(per_seed['mse']) / len(seeds):.4f} over {len(seeds)} seeds")

    out_path = Path(args.out) if args.out else workdir / "reports" / "cma_report.csv"
    write_report(rows, out_path)
    print(f"wrote {len(rows)} rows to {out_path}")
    if args.audit:
        audit_path = out_path.with_name("cma_audit.json")
        audit_path.write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cma-probe",
        description="structure-aware text-and-time-series forecasting probe",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    embed = sub.add_parser("embed", help="write token embedding files for built events")
    embed.add_argument("--workdir", required=True)
    embed.add_argument("--granularity", default="1d", choices=sorted(GRANULARITY_WINDOWS))
    embed.set_defaults(func=_cmd_embed)

    ev = sub.add_parser("eval", help="train and score the probe on built windows")
    ev.add_argument("--workdir", required=True)
    ev.add_argument("--granularity", default="1d", choices=sorted(GRANULARITY_WINDOWS))
    ev.add_argument("--target", default="sentiment")
    ev.add_argument("--configs", default=",".join(TEXT_CONFIGS))
    ev.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS))
    ev.add_argument("--out", default=None)
    ev.add_argument("--audit", action="store_true",
                    help="also write per-seed scores next to the report")
    ev.add_argument("--d-model", type=int, default=512)
    ev.add_argument("--heads", type=int, default=8)
    ev.add_argument("--e-layers", type=int, default=2)
    ev.add_argument("--d-ff", type=int, default=2048)
    ev.add_argument("--dropout", type=float, default=0.1)
    ev.add_argument("--max-epochs", type=int, default=100)
    ev.add_argument("--patience", type=int, default=10)
    ev.add_argument("--batch-size", type=int, default=32)
    ev.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ArtifactMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (DataContractError, HyperparamError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
