"""Command line entry point: gen, train, infer, ablate, export-attn, mem-report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
from dataclasses import asdict, fields
from pathlib import Path

import tomli

from .engine import (
    MemoryLedger, ModelConfig, forward_stream, init_model, iter_row_blocks, load_checkpoint,
    peak_memory_report, predict, save_checkpoint, write_memory_csv,
)
from .errors import ConfigError, TileMilError
from .hilbert import STRATEGIES, order_bag
from .pipeline.ablation import MODES, run_ablation
from .pipeline.attention_export import export_attention
from .pipeline.bagio import load_dataset, read_bag, save_dataset, spec_to_json
from .pipeline.metrics import softmax_rows
from .pipeline.synthetic import SyntheticSpec, generate_dataset, split_indices
from .pipeline.train import TrainConfig, evaluate, order_bags, train

log = logging.getLogger("tilemil")


def git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomli.load(fh)


def _build(cls, section: dict, **overrides):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    values = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    for key in ("betas", "region_fraction"):
        if key in values:
            values[key] = tuple(values[key])
    return cls(**values)


def configs(args) -> tuple[SyntheticSpec, TrainConfig]:
    cfg = load_config(getattr(args, "config", None))
    seed = getattr(args, "seed", None)
    data = _build(SyntheticSpec, cfg.get("data", {}), seed=seed)
    tc = _build(TrainConfig, cfg.get("train", {}), seed=seed, order=getattr(args, "order", None))
    return data, tc


def dataset_model_config(args, manifest: dict, bags: list) -> ModelConfig:
    """Model config from the [model] table, defaulting task and width to the dataset's."""
    task = manifest.get("spec", {}).get("task", "classification")
    base = {"task": task, "dim": bags[0].dim, "dtype": "float32"}
    if task == "survival":
        base["num_classes"] = 1
    model = load_config(args.config).get("model", {})
    return _build(ModelConfig, {**base, **model}, structure=getattr(args, "structure", None))


def write_manifest(path: Path, **content) -> None:
    payload = {"git_hash": git_hash(), "argv": sys.argv[1:], **content}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))


def write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _splits(manifest: dict, bags: list) -> tuple[list, list, list]:
    splits = manifest.get("splits") or {}
    if not splits:
        tr, va, te = split_indices(len(bags))
    else:
        tr, va, te = splits["train"], splits["val"], splits["test"]
    return [bags[i] for i in tr], [bags[i] for i in va], [bags[i] for i in te]


# -- verbs ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    spec, _ = configs(args)
    if args.task:
        spec = _build(SyntheticSpec, {**spec_to_json(spec), "task": args.task})
    bags = generate_dataset(spec, args.n_bags)
    tr, va, te = split_indices(len(bags), seed=spec.seed)
    save_dataset(args.out, bags, {"spec": spec_to_json(spec), "git_hash": git_hash()},
                 {"train": tr, "val": va, "test": te})
    print(f"wrote {len(bags)} bags to {args.out}")
    return 0


def cmd_train(args) -> int:
    _, tc = configs(args)
    bags, manifest = load_dataset(args.data)
    mc = dataset_model_config(args, manifest, bags)
    train_bags, val_bags, test_bags = _splits(manifest, bags)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(tc, mc, train_bags, val_bags)
    test, _ = evaluate(result.params, test_bags, order_bags(test_bags, tc.order, tc.seed + 104729),
                       tc.inf_batch)
    save_checkpoint(out / "model.ckpt", result.params, {"best_epoch": result.best_epoch})
    write_rows(out / "history.csv", result.history)
    write_rows(out / "metrics.csv", [{"split": "test", **test}])
    write_manifest(out / "manifest.json", train_config=asdict(tc), model_config=asdict(mc),
                   best_epoch=result.best_epoch, best_val=result.best_metric, epochs_run=result.epochs_run,
                   test_metrics=test)
    print(json.dumps({"best_epoch": result.best_epoch, "test": test}))
    return 0


def cmd_infer(args) -> int:
    p, _ = load_checkpoint(args.checkpoint)
    if args.chunk_len is not None:
        if args.chunk_len < 1:
            raise ConfigError("--chunk-len must be >= 1")
        p.config.chunk_len = args.chunk_len
    bag = read_bag(args.bag)
    x = bag.features[order_bag(bag, args.order, 0).perm].astype(p.config.dtype)
    ledger = MemoryLedger(events=None)
    if p.config.has_local_stage:
        out = forward_stream(iter_row_blocks(x), p, args.inf_batch, ledger).data
    else:
        out = predict(x, p, args.inf_batch)
    result = {"n_tiles": len(bag), "output": out.tolist()}
    if p.config.task == "classification":
        result["probabilities"] = softmax_rows(out[None])[0].tolist()
    print(json.dumps(result))
    if args.mem_report:
        path = Path(args.mem_report)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "stage", "peak_bytes"])
            for stage in ("local", "global"):
                w.writerow([len(bag), stage, ledger.peak(stage)])
            w.writerow([len(bag), "global_tokens", ledger.marks.get("global_tokens", 0)])
    return 0


def cmd_ablate(args) -> int:
    _, tc = configs(args)
    bags, manifest = load_dataset(args.data)
    mc = dataset_model_config(args, manifest, bags)
    data = _splits(manifest, bags)
    variants = args.variants.split(",") if args.variants else None
    report = run_ablation(args.mode, data, tc, mc, seeds=range(args.seeds), variants=variants)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / f"ablation_{args.mode}.csv")
    write_manifest(out / "manifest.json", mode=args.mode, train_config=asdict(tc),
                   model_config=asdict(mc), summary=report.summary())
    print(report.format_table())
    return 0


def cmd_export_attn(args) -> int:
    p, _ = load_checkpoint(args.checkpoint)
    bag = read_bag(args.bag)
    scores = export_attention(bag, p, args.out, args.order)
    print(f"wrote {len(scores)} tile scores to {args.out}")
    return 0


def cmd_mem_report(args) -> int:
    if args.checkpoint:
        p, _ = load_checkpoint(args.checkpoint)
    else:
        p = init_model(ModelConfig(dim=args.dim, chunk_len=args.chunk_len, dtype=args.dtype), args.seed or 0)
    ns = [int(n) for n in args.ns.split(",")]
    rows = peak_memory_report(ns, p, args.inf_batch)
    write_memory_csv(rows, args.out)
    for r in rows:
        print(f"N={r.n_tiles} local_peak={r.local_peak} global_peak={r.global_peak} "
              f"global_tokens={r.global_tokens}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilemil", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="TOML file with [data], [train] and [model] tables")
        sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("gen", help="generate a synthetic dataset directory"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-bags", type=int, default=500)
    sp.add_argument("--task", choices=("classification", "survival"))
    sp.set_defaults(func=cmd_gen)

    sp = common(sub.add_parser("train", help="train on a dataset directory"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--order", choices=STRATEGIES)
    sp.add_argument("--structure", choices=("full", "local_only", "global_only", "reversed"))
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="streamed inference on one bag")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--bag", required=True)
    sp.add_argument("--chunk-len", type=int)
    sp.add_argument("--inf-batch", type=int, default=4)
    sp.add_argument("--order", choices=STRATEGIES, default="hilbert")
    sp.add_argument("--mem-report", metavar="CSV", help="write stage peak bytes for this bag")
    sp.set_defaults(func=cmd_infer)

    sp = common(sub.add_parser("ablate", help="ordering or structure ablation over seeds"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=MODES, required=True)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--variants", help="comma-separated subset of variants")
    sp.add_argument("--order", choices=STRATEGIES)
    sp.add_argument("--structure", choices=("full", "local_only", "global_only", "reversed"))
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("export-attn", help="write per-tile attention scores as CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--bag", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--order", choices=STRATEGIES, default="hilbert")
    sp.set_defaults(func=cmd_export_attn)

    sp = common(sub.add_parser("mem-report", help="local/global peak bytes across bag sizes"), config=False)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ns", default="256,4096,65536")
    sp.add_argument("--checkpoint")
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--chunk-len", type=int, default=64)
    sp.add_argument("--inf-batch", type=int, default=4)
    sp.add_argument("--dtype", default="float32")
    sp.set_defaults(func=cmd_mem_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (TileMilError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
