"""Training objectives built from differentiable core ops."""
from __future__ import annotations

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from ..errors import DegenerateBatchError, DimensionError, LabelRangeError


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label] for one bag."""
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise DimensionError(f"cross_entropy needs a vector of >= 2 logits, got {logits.shape}")
    if not 0 <= int(label) < logits.shape[0]:
        raise LabelRangeError(f"label {label} outside [0, {logits.shape[0]})")
    return ops.log_softmax(logits)[int(label)] * -1.0


def coxph_loss(risks: Tensor, times, events) -> Tensor:
    """Mean negative Cox partial log-likelihood over the observed events of a batch.

    The risk set of sample i is every j with t_j >= t_i (Breslow handling of ties).
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    risks = risks.reshape(-1)
    if risks.shape[0] < 2 or len(times) != risks.shape[0] or len(events) != risks.shape[0]:
        raise DimensionError("coxph_loss needs >= 2 aligned risks, times and events")
    if not events.any():
        raise DegenerateBatchError("batch has no observed event")
    at_risk = (times[None, :] >= times[:, None]).astype(risks.dtype)
    # Shift by a constant for stability; the partial likelihood is shift invariant.
    shift = float(risks.data.max())
    centred = risks - shift
    log_denominator = ops.log(Tensor(at_risk) @ ops.exp(centred).reshape(-1, 1)).reshape(-1)
    idx = np.flatnonzero(events)
    terms = centred[idx] - log_denominator[idx]
    return terms.sum() * (-1.0 / len(idx))
