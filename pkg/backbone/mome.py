"""Shared self-attention, modality-routed feed-forward experts and the block built from them.

All functions take a batch ``x`` of shape [B, L, d] with ``valid`` [B, L]
marking real (non-padding) positions and ``tags`` [B, L] holding each
position's modality.
"""

import math
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from autograd import functional as F
from autograd.tensor import Tensor
from core.errors import ContractError, DimensionError
from models.configs import MoMEConfig

from .params import expert_for


def _linear(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    return F.linear(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def attention(
    x: Tensor,
    valid: np.ndarray,
    params: Mapping[str, Tensor],
    prefix: str,
    heads: int,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """Bidirectional multi-head self-attention; invalid positions are never attended to."""
    b, length, d = x.shape
    if d % heads:
        raise DimensionError(f"width {d} is not divisible by {heads} heads")
    valid = np.asarray(valid, dtype=bool).reshape(b, length)
    if not valid.any(axis=1).all():
        raise ContractError("attention needs at least one valid position per sequence")
    hd = d // heads

    def split(t: Tensor) -> Tensor:
        return F.transpose(F.reshape(t, (b, length, heads, hd)), (0, 2, 1, 3))

    q = split(_linear(x, params, f"{prefix}.q"))
    k = split(_linear(x, params, f"{prefix}.k"))
    v = split(_linear(x, params, f"{prefix}.v"))

    scores = F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    key_bias = np.where(valid, 0.0, -np.inf).astype(x.dtype)[:, None, None, :]
    weights = F.softmax(F.add(scores, key_bias), axis=-1)

    context = F.reshape(F.transpose(F.matmul(weights, v), (0, 2, 1, 3)), (b, length, d))
    out = _linear(context, params, f"{prefix}.o")
    return (out, weights) if return_weights else out


def expert_ffn(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """``gelu(x @ w1 + b1) @ w2 + b2``."""
    hidden = F.gelu(F.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return F.linear(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def route_ffn(x: Tensor, tags: np.ndarray, params: Mapping[str, Tensor], prefix: str, cfg: MoMEConfig) -> Tensor:
    """Send every position through the expert of its modality (hard routing)."""
    b, length, d = x.shape
    flat_tags = np.asarray(tags).reshape(-1)
    if flat_tags.shape[0] != b * length:
        raise DimensionError(f"{flat_tags.shape[0]} modality tags for {b * length} positions")
    groups: Dict[str, List[int]] = {}
    for row, tag in enumerate(flat_tags):
        groups.setdefault(expert_for(cfg, int(tag)), []).append(row)

    flat = F.reshape(x, (b * length, d))
    parts: List[Tensor] = []
    indices: List[np.ndarray] = []
    for expert in sorted(groups):
        rows = np.array(groups[expert], dtype=np.int64)
        parts.append(expert_ffn(flat[rows], params, f"{prefix}.ffn.{expert}"))
        indices.append(rows)
    return F.reshape(F.assemble_rows(parts, indices, b * length), (b, length, d))


def drop_path(branch: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Zero a whole residual branch per example with probability ``rate``; kept branches scale by 1/(1-rate)."""
    if not training or rate <= 0.0:
        return branch
    if rng is None:
        raise ContractError("drop_path in training mode needs a random generator")
    keep = (rng.random(branch.shape[0]) >= rate).astype(branch.dtype) / (1.0 - rate)
    return F.mul(branch, keep.reshape((-1,) + (1,) * (branch.ndim - 1)))


def drop_path_rates(cfg: MoMEConfig) -> np.ndarray:
    """Per-block rates rising linearly from 0 to ``drop_path_rate``."""
    return np.linspace(0.0, cfg.drop_path_rate, cfg.depth)


def mome_block(
    x: Tensor,
    tags: np.ndarray,
    valid: np.ndarray,
    params: Mapping[str, Tensor],
    layer_index: int,
    cfg: MoMEConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Pre-norm residual block: shared attention, then modality experts."""
    prefix = f"blocks.{layer_index}"
    rate = float(drop_path_rates(cfg)[layer_index])

    h = F.layer_norm(x, params[f"{prefix}.norm1.weight"], params[f"{prefix}.norm1.bias"], cfg.ln_eps)
    x = F.add(x, drop_path(attention(h, valid, params, f"{prefix}.attn", cfg.heads), rate, training, rng))

    h = F.layer_norm(x, params[f"{prefix}.norm2.weight"], params[f"{prefix}.norm2.bias"], cfg.ln_eps)
    x = F.add(x, drop_path(route_ffn(h, tags, params, prefix, cfg), rate, training, rng))
    return x
