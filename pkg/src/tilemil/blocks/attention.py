"""Gated attention pooling (tanh branch gated by a sigmoid branch)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.params import ParamGroup, uniform_fan_in
from ..core.tensor import Tensor


@dataclass
class GatedAttnParams(ParamGroup):
    v: Tensor
    u: Tensor
    w: Tensor


def init_gated_attention(dim: int, rng: np.random.Generator, hidden: int | None = None,
                         dtype=np.float64) -> GatedAttnParams:
    hidden = max(1, dim // 2) if hidden is None else hidden
    return GatedAttnParams(
        v=uniform_fan_in(rng, (dim, hidden), dim, dtype),
        u=uniform_fan_in(rng, (dim, hidden), dim, dtype),
        w=uniform_fan_in(rng, (hidden, 1), hidden, dtype),
    )


def gated_attention(tokens: Tensor, p: GatedAttnParams,
                    mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Pool ``[..., L, D]`` tokens to ``[..., D]``.

    Returns the pooled vectors and the ``[..., L]`` attention weights; masked
    positions receive weight exactly zero.
    """
    scores = (ops.tanh(tokens @ p.v) * ops.sigmoid(tokens @ p.u)) @ p.w
    scores = scores.reshape(scores.shape[:-1])
    weights = ops.softmax(scores, axis=-1, mask=mask)
    lead = weights.shape[:-1]
    pooled = weights.reshape(lead + (1, weights.shape[-1])) @ tokens
    return pooled.reshape(lead + (tokens.shape[-1],)), weights
