"""Ordering and structure ablations over seeds on one fixed data split."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..engine import STRUCTURES, ModelConfig
from ..errors import ConfigError
from ..hilbert import STRATEGIES, TileBag
from .train import TrainConfig, evaluate, order_bags, train

log = logging.getLogger(__name__)

MODES = ("ordering", "structure")


@dataclass
class AblationReport:
    mode: str
    rows: list[dict] = field(default_factory=list)

    @property
    def variants(self) -> list[str]:
        return list(dict.fromkeys(r["variant"] for r in self.rows))

    @property
    def metric_names(self) -> list[str]:
        skip = {"variant", "seed", "epochs", "seconds"}
        return [k for k in self.rows[0] if k not in skip] if self.rows else []

    def values(self, variant: str, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["variant"] == variant])

    def summary(self) -> list[dict]:
        out = []
        for v in self.variants:
            row = {"variant": v, "n_seeds": len(self.values(v, self.metric_names[0]))}
            for m in self.metric_names:
                vals = self.values(v, m)
                row[f"{m}_mean"] = float(vals.mean())
                row[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out.append(row)
        return out

    def format_table(self) -> str:
        lines = [f"{self.mode} ablation"]
        for row in self.summary():
            cells = [f"{m} {row[m + '_mean']:.4f} +- {row[m + '_std']:.4f}" for m in self.metric_names]
            lines.append(f"  {row['variant']:<12} " + "  ".join(cells))
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        """Per-seed rows followed by mean/std rows (seed column 'mean' / 'std')."""
        metrics = self.metric_names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "variant", "seed"] + metrics)
            for r in self.rows:
                w.writerow([self.mode, r["variant"], r["seed"]] + [r[m] for m in metrics])
            for s in self.summary():
                w.writerow([self.mode, s["variant"], "mean"] + [s[m + "_mean"] for m in metrics])
                w.writerow([self.mode, s["variant"], "std"] + [s[m + "_std"] for m in metrics])


def run_variant(structure: str, order: str, seed: int, data: tuple[Sequence[TileBag], ...],
                train_config: TrainConfig, model_config: ModelConfig) -> dict:
    """Train one (structure, order, seed) cell and score it on the test split."""
    train_bags, val_bags, test_bags = data
    tc = replace(train_config, order=order, seed=seed)
    mc = replace(model_config, structure=structure)
    t0 = time.perf_counter()
    result = train(tc, mc, train_bags, val_bags)
    test_orders = order_bags(test_bags, order, seed + 104729)
    scores, _ = evaluate(result.params, test_bags, test_orders, tc.inf_batch)
    scores.pop("loss", None)
    return {**scores, "epochs": result.epochs_run, "seconds": time.perf_counter() - t0}


def run_ablation(mode: str, data: tuple[Sequence[TileBag], ...], train_config: TrainConfig,
                 model_config: ModelConfig, seeds: Sequence[int] = range(5),
                 variants: Sequence[str] | None = None, cache: dict | None = None) -> AblationReport:
    """Train every variant of ``mode`` once per seed.

    Ordering mode varies the serialization with the configured structure;
    structure mode varies the architecture with the configured ordering.
    ``cache`` maps ``(structure, order, seed)`` to finished results so runs
    shared between ablations are trained once.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    allowed = STRATEGIES if mode == "ordering" else STRUCTURES
    variants = list(allowed if variants is None else variants)
    bad = [v for v in variants if v not in allowed]
    if bad:
        raise ConfigError(f"unknown {mode} variants {bad}")
    cache = {} if cache is None else cache
    report = AblationReport(mode)
    for variant in variants:
        structure, order = ((model_config.structure, variant) if mode == "ordering"
                            else (variant, train_config.order))
        for seed in seeds:
            key = (structure, order, int(seed))
            if key not in cache:
                cache[key] = run_variant(structure, order, int(seed), data, train_config, model_config)
                log.info("%s %s seed %d: %s", mode, variant, seed, cache[key])
            report.rows.append({"variant": variant, "seed": int(seed), **cache[key]})
    return report


