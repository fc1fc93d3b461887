"""Per-tile attention scores for heatmaps.

A tile's score is the global weight of its chunk times its local weight
inside the chunk, so the scores form a distribution over the bag.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..core.tensor import no_tape
from ..engine import ModelParams, forward_detail
from ..hilbert import TileBag, order_bag


def attention_scores(bag: TileBag, p: ModelParams, order: str = "hilbert", seed: int = 0) -> np.ndarray:
    """Scores indexed like ``bag.features``; nonnegative and summing to one."""
    perm = order_bag(bag, order, seed).perm
    with no_tape():
        detail = forward_detail(bag.features[perm].astype(p.config.dtype), p)
    gw = detail.global_weights.data.astype(np.float64)
    if detail.local_weights is None:
        sorted_scores = gw
    else:
        lw = detail.local_weights.data.astype(np.float64)
        sorted_scores = (gw[:, None] * lw).reshape(-1)[:len(perm)]
    scores = np.empty(len(perm))
    scores[perm] = sorted_scores
    return scores


def export_attention(bag: TileBag, p: ModelParams, path: str | Path, order: str = "hilbert",
                     seed: int = 0) -> np.ndarray:
    scores = attention_scores(bag, p, order, seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "score"])
        for (x, y), s in zip(bag.coords_raw, scores):
            w.writerow([int(x), int(y), repr(float(s))])
    return scores
