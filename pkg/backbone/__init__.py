"""Mixture-of-modality-experts Transformer backbone."""

from .model import EncodedBatch, MoMEModel
from .mome import attention, drop_path, drop_path_rates, expert_ffn, mome_block, route_ffn
from .params import EXPERTS, census, count_params, init_params, param_shapes

__all__ = [
    "EXPERTS",
    "EncodedBatch",
    "MoMEModel",
    "attention",
    "census",
    "count_params",
    "drop_path",
    "drop_path_rates",
    "expert_ffn",
    "init_params",
    "mome_block",
    "param_shapes",
    "route_ffn",
]
