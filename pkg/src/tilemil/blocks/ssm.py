"""Selective state-space scan and its bidirectional wrapper.

Single-head recurrence with a scalar decay per step::

    h_t = abar_t * h_{t-1} + dt_t * x_t B_t^T      (h_t is d_inner x d_state)
    y_t = h_t C_t + d_skip * x_t
    abar_t = exp(-dt_t * a),  dt_t = softplus(x_t w_dt + b_dt),  a = softplus(a_raw)

where ``x_t`` is the input projection of the token and ``B_t``, ``C_t``
are linear in ``x_t``. The bidirectional block runs one scan per
direction over a shared LayerNorm and renormalizes the residual sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..core import ops
from ..core.params import ParamGroup, leaf, uniform_fan_in
from ..core.tensor import Tensor, active_tape, make_result


@numba.njit(cache=True)
def _scan_forward(x, dt, abar, bm, cm, store):
    nb, T, d = x.shape
    S = bm.shape[2]
    y = np.zeros_like(x)
    hs = np.zeros((nb, T if store else 0, d, S), dtype=x.dtype)
    h = np.zeros((d, S), dtype=x.dtype)
    for b in range(nb):
        h[:, :] = 0.0
        for t in range(T):
            a = abar[b, t]
            w = dt[b, t]
            for c in range(d):
                xc = w * x[b, t, c]
                acc = 0.0
                for s in range(S):
                    v = a * h[c, s] + xc * bm[b, t, s]
                    h[c, s] = v
                    acc += v * cm[b, t, s]
                y[b, t, c] = acc
            if store:
                hs[b, t] = h
    return y, hs


@numba.njit(cache=True)
def _scan_backward(x, dt, abar, bm, cm, hs, gy):
    nb, T, d = x.shape
    S = bm.shape[2]
    gx = np.zeros_like(x)
    gdt = np.zeros_like(dt)
    gabar = np.zeros_like(abar)
    gb = np.zeros_like(bm)
    gc = np.zeros_like(cm)
    gh = np.zeros((d, S), dtype=x.dtype)
    for b in range(nb):
        gh[:, :] = 0.0
        for t in range(T - 1, -1, -1):
            w = dt[b, t]
            for c in range(d):
                g = gy[b, t, c]
                for s in range(S):
                    gh[c, s] += g * cm[b, t, s]
                    gc[b, t, s] += g * hs[b, t, c, s]
            acc_a = 0.0
            acc_dt = 0.0
            for c in range(d):
                xc = x[b, t, c]
                acc_x = 0.0
                for s in range(S):
                    ghv = gh[c, s]
                    if t > 0:
                        acc_a += ghv * hs[b, t - 1, c, s]
                    acc_x += ghv * bm[b, t, s]
                    gb[b, t, s] += w * ghv * xc
                acc_dt += acc_x * xc
                gx[b, t, c] = w * acc_x
            gabar[b, t] = acc_a
            gdt[b, t] = acc_dt
            a = abar[b, t]
            for c in range(d):
                for s in range(S):
                    gh[c, s] *= a
    return gx, gdt, gabar, gb, gc


def selective_scan(x: Tensor, dt: Tensor, abar: Tensor, bm: Tensor, cm: Tensor) -> Tensor:
    """Run the recurrence over axis -2 of ``x`` (``[..., T, d]``).

    ``dt`` and ``abar`` are ``[..., T]``; ``bm`` and ``cm`` are ``[..., T, S]``.
    Hidden states are kept only when a tape will need them.
    """
    lead = x.shape[:-2]
    T, d = x.shape[-2:]
    S = bm.shape[-1]
    flat = (int(np.prod(lead, dtype=np.int64)), T)
    xd = np.ascontiguousarray(x.data.reshape(flat + (d,)))
    dtd = np.ascontiguousarray(dt.data.reshape(flat))
    ad = np.ascontiguousarray(abar.data.reshape(flat))
    bd = np.ascontiguousarray(bm.data.reshape(flat + (S,)))
    cd = np.ascontiguousarray(cm.data.reshape(flat + (S,)))
    inputs = (x, dt, abar, bm, cm)
    store = active_tape() is not None and any(t.requires_grad for t in inputs)
    y, hs = _scan_forward(xd, dtd, ad, bd, cd, store)

    def back(g):
        gy = np.ascontiguousarray(g.reshape(flat + (d,)))
        grads = _scan_backward(xd, dtd, ad, bd, cd, hs, gy)
        return tuple(gr.reshape(t.shape) for gr, t in zip(grads, inputs))

    return make_result(y.reshape(x.shape), inputs, back, "selective_scan")


@dataclass
class SsmParams(ParamGroup):
    w_in: Tensor
    w_dt: Tensor
    b_dt: Tensor
    w_b: Tensor
    w_c: Tensor
    a_raw: Tensor
    d_skip: Tensor
    w_out: Tensor

    @property
    def d_state(self) -> int:
        return self.w_b.shape[1]


def _inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def init_ssm(dim: int, rng: np.random.Generator, *, d_inner: int | None = None, d_state: int = 16,
             dt_init: float = 0.1, decay_init: float = 1.0, dtype=np.float64) -> SsmParams:
    d_inner = 2 * dim if d_inner is None else d_inner
    return SsmParams(
        w_in=uniform_fan_in(rng, (dim, d_inner), dim, dtype),
        w_dt=uniform_fan_in(rng, (d_inner, 1), d_inner, dtype),
        b_dt=leaf([_inv_softplus(dt_init)], dtype),
        w_b=uniform_fan_in(rng, (d_inner, d_state), d_inner, dtype),
        w_c=uniform_fan_in(rng, (d_inner, d_state), d_inner, dtype),
        a_raw=leaf([_inv_softplus(decay_init)], dtype),
        d_skip=leaf(np.ones(d_inner), dtype),
        w_out=leaf(np.zeros((d_inner, dim)), dtype),
    )


def ssm_scan(seq: Tensor, p: SsmParams) -> Tensor:
    """Causal selective scan over ``[..., M, D]``, returning ``[..., M, D]``."""
    u = seq @ p.w_in
    dt = ops.softplus(u @ p.w_dt + p.b_dt)
    dt = dt.reshape(dt.shape[:-1])
    abar = ops.exp(dt * ops.softplus(p.a_raw) * -1.0)
    y = selective_scan(u, dt, abar, u @ p.w_b, u @ p.w_c)
    return (y + u * p.d_skip) @ p.w_out


@dataclass
class BiMambaParams(ParamGroup):
    fwd: SsmParams
    bwd: SsmParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


def init_bimamba(dim: int, rng: np.random.Generator, *, d_state: int = 16,
                 d_inner: int | None = None, dtype=np.float64) -> BiMambaParams:
    return BiMambaParams(
        fwd=init_ssm(dim, rng, d_inner=d_inner, d_state=d_state, dtype=dtype),
        bwd=init_ssm(dim, rng, d_inner=d_inner, d_state=d_state, dtype=dtype),
        ln1_gain=leaf(np.ones(dim), dtype),
        ln1_bias=leaf(np.zeros(dim), dtype),
        ln2_gain=leaf(np.ones(dim), dtype),
        ln2_bias=leaf(np.zeros(dim), dtype),
    )


def bimamba2(tokens: Tensor, p: BiMambaParams, mask: np.ndarray | None = None) -> Tensor:
    """LayerNorm(T + scan_fwd(T^) + flip(scan_bwd(flip(T^)))) with T^ = LayerNorm(T).

    Masked positions of T^ are zeroed, which keeps padding from reaching
    valid outputs in either direction.
    """
    normed = ops.layer_norm(tokens, p.ln1_gain, p.ln1_bias)
    if mask is not None:
        normed = normed * Tensor(mask[..., None].astype(tokens.dtype))
    h_fwd = ssm_scan(normed, p.fwd)
    h_bwd = ops.flip(ssm_scan(ops.flip(normed, axis=-2), p.bwd), axis=-2)
    return ops.layer_norm(tokens + h_fwd + h_bwd, p.ln2_gain, p.ln2_bias)
