"""1D Gated CNN token mixer.

    Z = W_out( GELU(X_gate) * [X_pass, DWConv(X_conv)] ) + C
    (X_gate, X_pass, X_conv) = split(W_in LayerNorm(C))

Applied independently to every ``[L, D]`` chunk along the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.params import ParamGroup, leaf, uniform_fan_in
from ..core.tensor import Tensor
from ..errors import ConfigError, DimensionError


@dataclass
class GatedCnnParams(ParamGroup):
    ln_gain: Tensor
    ln_bias: Tensor
    w_in: Tensor
    conv_kernel: Tensor
    w_out: Tensor

    @property
    def dim(self) -> int:
        return self.w_out.shape[1]

    @property
    def widths(self) -> tuple[int, int, int]:
        d_conv = self.conv_kernel.shape[1]
        d_pass = self.w_out.shape[0] - d_conv
        d_gate = self.w_in.shape[1] - d_pass - d_conv
        return d_gate, d_pass, d_conv


def init_gated_cnn(dim: int, rng: np.random.Generator, *, d_pass: int | None = None,
                   d_conv: int | None = None, kernel_size: int = 3, dtype=np.float64) -> GatedCnnParams:
    d_pass = dim if d_pass is None else d_pass
    d_conv = dim if d_conv is None else d_conv
    if kernel_size % 2 == 0:
        raise ConfigError("conv kernel size must be odd")
    # The gate multiplies [X_pass, DWConv(X_conv)] elementwise.
    d_gate = d_pass + d_conv
    return GatedCnnParams(
        ln_gain=leaf(np.ones(dim), dtype),
        ln_bias=leaf(np.zeros(dim), dtype),
        w_in=uniform_fan_in(rng, (dim, d_gate + d_pass + d_conv), dim, dtype),
        conv_kernel=uniform_fan_in(rng, (kernel_size, d_conv), kernel_size, dtype),
        w_out=leaf(np.zeros((d_pass + d_conv, dim)), dtype),
    )


def gated_cnn_1d(chunk: Tensor, p: GatedCnnParams, mask: np.ndarray | None = None) -> Tensor:
    """Mix tokens within each chunk of shape ``[..., L, D]``.

    ``mask`` (``[..., L]`` bool) marks valid positions; padded positions are
    zeroed before the convolution so they act exactly like boundary padding.
    """
    if chunk.shape[-1] != p.dim:
        raise DimensionError(f"chunk width {chunk.shape[-1]} != block width {p.dim}")
    d_gate, d_pass, d_conv = p.widths
    if d_gate != d_pass + d_conv:
        raise DimensionError(f"gate width {d_gate} != pass {d_pass} + conv {d_conv}")
    h = ops.layer_norm(chunk, p.ln_gain, p.ln_bias) @ p.w_in
    gate, passthrough, conv_in = ops.split(h, [d_gate, d_pass, d_conv])
    if mask is not None:
        conv_in = conv_in * Tensor(mask[..., None].astype(chunk.dtype))
    mixed = ops.gelu(gate) * ops.concat([passthrough, ops.depthwise_conv1d(conv_in, p.conv_kernel)])
    return mixed @ p.w_out + chunk
