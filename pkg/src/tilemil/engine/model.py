"""Model parameters and the parallel (training) forward pass."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ..blocks import (
    BiMambaParams, GatedAttnParams, GatedCnnParams, bimamba2, gated_attention, gated_cnn_1d,
    init_bimamba, init_gated_attention, init_gated_cnn,
)
from ..core import ops
from ..core.params import ParamGroup, leaf, uniform_fan_in
from ..core.serialize import load_tensors, save_tensors
from ..core.tensor import Tape, Tensor
from ..errors import ConfigError, DimensionError, EmptyBagError

Block = Union[GatedCnnParams, BiMambaParams]

STRUCTURES = ("full", "local_only", "global_only", "reversed")
TASKS = ("classification", "survival")


@dataclass
class ModelConfig:
    dim: int = 64
    num_classes: int = 2
    task: str = "classification"
    chunk_len: int = 64
    structure: str = "full"
    n_local: int = 1
    n_global: int = 1
    d_state: int = 16
    d_inner: int | None = None
    attn_hidden: int | None = None
    kernel_size: int = 3
    dtype: str = "float64"

    def __post_init__(self):
        if self.chunk_len < 1:
            raise ConfigError("chunk_len must be >= 1")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"structure must be one of {STRUCTURES}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigError("classification needs num_classes >= 2")

    @property
    def out_dim(self) -> int:
        return self.num_classes if self.task == "classification" else 1

    @property
    def has_local_stage(self) -> bool:
        return self.structure != "global_only"


@dataclass
class ModelParams(ParamGroup):
    config: ModelConfig
    local_blocks: list = field(default_factory=list)
    local_attn: GatedAttnParams | None = None
    global_blocks: list = field(default_factory=list)
    global_attn: GatedAttnParams | None = None
    head_w: Tensor | None = None
    head_b: Tensor | None = None

    @property
    def chunk_len(self) -> int:
        return self.config.chunk_len

    def astype(self, dtype) -> "ModelParams":
        for t in self.parameters():
            t.data = t.data.astype(dtype)
        self.config.dtype = np.dtype(dtype).name
        return self


def init_model(config: ModelConfig, seed: int | np.random.Generator = 0) -> ModelParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    D = config.dim
    dtype = np.dtype(config.dtype)

    def cnn():
        return init_gated_cnn(D, rng, kernel_size=config.kernel_size, dtype=dtype)

    def scan():
        return init_bimamba(D, rng, d_state=config.d_state, d_inner=config.d_inner, dtype=dtype)

    local_kind, global_kind = {
        "full": (cnn, scan),
        "local_only": (cnn, None),
        "global_only": (None, scan),
        "reversed": (scan, cnn),
    }[config.structure]
    p = ModelParams(config)
    if local_kind is not None:
        p.local_blocks = [local_kind() for _ in range(config.n_local)]
        p.local_attn = init_gated_attention(D, rng, config.attn_hidden, dtype)
    if global_kind is not None:
        p.global_blocks = [global_kind() for _ in range(config.n_global)]
    p.global_attn = init_gated_attention(D, rng, config.attn_hidden, dtype)
    p.head_w = uniform_fan_in(rng, (D, config.out_dim), D, dtype)
    p.head_b = leaf(np.zeros(config.out_dim), dtype)
    return p


def apply_block(block: Block, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    if isinstance(block, GatedCnnParams):
        return gated_cnn_1d(x, block, mask)
    if isinstance(block, BiMambaParams):
        return bimamba2(x, block, mask)
    raise TypeError(f"unknown block type {type(block).__name__}")


def chunk_tiles(x: Tensor, chunk_len: int) -> tuple[Tensor, np.ndarray]:
    """Zero-pad ``[N, D]`` to whole chunks and reshape to ``[M, L, D]`` plus a validity mask."""
    n, d = x.shape
    m = math.ceil(n / chunk_len)
    padded = ops.pad_rows(x, m * chunk_len - n)
    mask = (np.arange(m * chunk_len) < n).reshape(m, chunk_len)
    return padded.reshape(m, chunk_len, d), mask


def local_stage(chunks: Tensor, mask: np.ndarray, p: ModelParams) -> tuple[Tensor, Tensor]:
    """Compress each ``[L, D]`` chunk to one token. Returns tokens and per-tile weights."""
    h = chunks
    for block in p.local_blocks:
        h = apply_block(block, h, mask)
    return gated_attention(h, p.local_attn, mask)


def global_stage(tokens: Tensor, p: ModelParams) -> tuple[Tensor, Tensor]:
    """Context over the token sequence, pooling and head. Returns outputs and token weights."""
    h = tokens
    for block in p.global_blocks:
        h = apply_block(block, h)
    emb, weights = gated_attention(h, p.global_attn)
    out = emb.reshape(1, emb.shape[0]) @ p.head_w + p.head_b
    return out.reshape(out.shape[1:]), weights


@dataclass
class ForwardDetail:
    outputs: Tensor
    local_weights: Tensor | None
    global_weights: Tensor
    tokens: Tensor | None


def _as_input(x, p: ModelParams) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=p.config.dtype))
    if x.ndim != 2:
        raise DimensionError(f"expected an N x D tile matrix, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptyBagError("cannot run the model on an empty bag")
    if x.shape[1] != p.config.dim:
        raise DimensionError(f"tile width {x.shape[1]} != model width {p.config.dim}")
    return x


def forward_detail(x, p: ModelParams) -> ForwardDetail:
    x = _as_input(x, p)
    if not p.config.has_local_stage:
        out, gw = global_stage(x, p)
        return ForwardDetail(out, None, gw, None)
    chunks, mask = chunk_tiles(x, p.chunk_len)
    tokens, lw = local_stage(chunks, mask, p)
    out, gw = global_stage(tokens, p)
    return ForwardDetail(out, lw, gw, tokens)


def forward_train(x, p: ModelParams, tape: Tape | None = None) -> tuple[Tensor, Tape]:
    """Parallel pass: all chunks of the bag go through the local stage at once.

    Records onto ``tape`` (a fresh one if not given) and returns the logits
    (or the scalar risk, for survival) together with the tape.
    """
    tape = Tape() if tape is None else tape
    with tape:
        detail = forward_detail(x, p)
    return detail.outputs, tape


def save_checkpoint(path: str | Path, p: ModelParams, meta: dict | None = None) -> None:
    payload = {"config": asdict(p.config), **(meta or {})}
    save_tensors(path, p.state_dict(), payload)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    tensors, meta = load_tensors(path)
    config = ModelConfig(**meta["config"])
    p = init_model(config, 0)
    p.load_state_dict(tensors)
    return p, meta
