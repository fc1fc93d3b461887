"""Chunk-and-accumulate inference with a bounded local-stage footprint.

Tiles arrive as an iterator of row blocks of any size. They are regrouped
into mini-batches of ``inf_batch`` whole chunks; each mini-batch runs the
local stage, keeps only its chunk tokens and drops every intermediate
before the next mini-batch is read. The tokens are concatenated and the
global stage runs once over the full token sequence.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..core.tensor import Tensor, no_tape, tracking
from ..errors import ConfigError, DimensionError, EmptyBagError
from .memory import MemoryLedger
from .model import ModelParams, chunk_tiles, forward_detail, global_stage, local_stage


def iter_row_blocks(x: np.ndarray, block_rows: int = 1024) -> Iterator[np.ndarray]:
    for start in range(0, len(x), block_rows):
        yield x[start:start + block_rows]


def _rebatch(source: Iterable[np.ndarray], rows: int, dim: int) -> Iterator[np.ndarray]:
    pending: list[np.ndarray] = []
    have = 0
    for block in source:
        block = np.asarray(block)
        if block.ndim != 2 or block.shape[1] != dim:
            raise DimensionError(f"tile block of shape {block.shape}; expected (*, {dim})")
        pending.append(block)
        have += len(block)
        while have >= rows:
            joined = np.concatenate(pending) if len(pending) > 1 else pending[0]
            yield joined[:rows]
            rest = joined[rows:]
            pending = [rest] if len(rest) else []
            have = len(rest)
    if have:
        yield np.concatenate(pending) if len(pending) > 1 else pending[0]


def _local_tokens(batch: np.ndarray, p: ModelParams, ledger: MemoryLedger) -> Tensor:
    with ledger.stage("local"):
        x = Tensor(np.array(batch, dtype=p.config.dtype))
        chunks, mask = chunk_tiles(x, p.chunk_len)
        tokens, _ = local_stage(chunks, mask, p)
        with ledger.stage("global"):
            kept = Tensor(tokens.data.copy(), name="chunk_tokens")
    return kept


def forward_stream(source: Iterable[np.ndarray], p: ModelParams, inf_batch: int = 4,
                   ledger: MemoryLedger | None = None) -> Tensor:
    """Streamed inference; returns the same outputs as `forward_train` without a tape."""
    if inf_batch < 1:
        raise ConfigError("inf_batch must be >= 1")
    if not p.config.has_local_stage:
        raise ConfigError("streaming needs a model with a local stage")
    ledger = MemoryLedger() if ledger is None else ledger
    rows = inf_batch * p.chunk_len
    with no_tape(), tracking(ledger):
        pieces = [_local_tokens(batch, p, ledger) for batch in _rebatch(source, rows, p.config.dim)]
        if not pieces:
            raise EmptyBagError("tile source yielded no rows")
        with ledger.stage("global"):
            tokens = Tensor(np.concatenate([t.data for t in pieces]), name="global_tokens")
            del pieces
            ledger.marks["global_tokens"] = tokens.nbytes
            out, _ = global_stage(tokens, p)
            del tokens
    return out


def predict(x: np.ndarray, p: ModelParams, inf_batch: int = 4) -> np.ndarray:
    """Inference entry point for a whole bag, streaming when the structure allows it."""
    if p.config.has_local_stage:
        return forward_stream(iter_row_blocks(np.asarray(x)), p, inf_batch).data
    with no_tape():
        return forward_detail(x, p).outputs.data


@dataclass
class MemoryRow:
    n_tiles: int
    local_peak: int
    global_peak: int
    global_tokens: int
    n_chunks: int


def peak_memory_report(ns: Sequence[int], p: ModelParams, inf_batch: int = 4,
                       seed: int = 0, block_rows: int = 4096) -> list[MemoryRow]:
    """Measure stage peaks of streamed inference over random bags of each size."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in ns:
        x = rng.standard_normal((int(n), p.config.dim)).astype(p.config.dtype)
        ledger = MemoryLedger(events=None)
        forward_stream(iter_row_blocks(x, block_rows), p, inf_batch, ledger)
        rows.append(MemoryRow(int(n), ledger.peak("local"), ledger.peak("global"),
                              ledger.marks["global_tokens"], math.ceil(n / p.chunk_len)))
    return rows


def write_memory_csv(rows: Sequence[MemoryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "stage", "peak_bytes"])
        for r in rows:
            w.writerow([r.n_tiles, "local", r.local_peak])
            w.writerow([r.n_tiles, "global", r.global_peak])
            w.writerow([r.n_tiles, "global_tokens", r.global_tokens])
