from .attention import GatedAttnParams, gated_attention, init_gated_attention
from .gated_cnn import GatedCnnParams, gated_cnn_1d, init_gated_cnn
from .ssm import BiMambaParams, SsmParams, bimamba2, init_bimamba, init_ssm, selective_scan, ssm_scan

__all__ = [
    "BiMambaParams", "GatedAttnParams", "GatedCnnParams", "SsmParams",
    "bimamba2", "gated_attention", "gated_cnn_1d", "init_bimamba", "init_gated_attention",
    "init_gated_cnn", "init_ssm", "selective_scan", "ssm_scan",
]
