"""Parameter initialisation and census for the shared Transformer.

Projection and embedding weights are drawn from a normal distribution with
standard deviation ``init_std`` truncated at two standard deviations; biases
and layer-norm offsets start at zero and layer-norm gains at one. Weights are
stored as ``[in, out]`` so a projection is ``x @ weight + bias``.
"""

from typing import Dict, List, Tuple

import numpy as np
from scipy.stats import truncnorm

from autograd.tensor import Tensor, get_default_dtype
from core.errors import ConfigurationError
from models.configs import ExpertSet, MoMEConfig
from pipeline.representations import Modality

ParamDict = Dict[str, Tensor]

EXPERTS: Dict[ExpertSet, Tuple[str, ...]] = {
    ExpertSet.MOME: ("language", "vision"),
    ExpertSet.STANDARD: ("shared",),
}

# Which expert each modality tag routes to.
ROUTES: Dict[ExpertSet, Dict[int, str]] = {
    ExpertSet.MOME: {int(Modality.TEXT): "language", int(Modality.IMAGE): "vision"},
    ExpertSet.STANDARD: {int(Modality.TEXT): "shared", int(Modality.IMAGE): "shared"},
}


def trunc_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)


def param_shapes(cfg: MoMEConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Every parameter name and shape, in registration order."""
    d, f = cfg.width, cfg.ffn_width
    shapes: List[Tuple[str, Tuple[int, ...]]] = [
        ("embed.word", (cfg.text_vocab_size, d)),
        ("embed.text_pos", (cfg.max_text_len, d)),
    ]
    if cfg.separate_pair_text_pos:
        shapes.append(("embed.pair_text_pos", (cfg.max_text_len, d)))
    shapes += [
        ("embed.patch.weight", (cfg.patch_dim, d)),
        ("embed.image_cls", (1, d)),
        ("embed.image_mask", (1, d)),
        ("embed.image_pos", (cfg.image_positions, d)),
    ]
    for i in range(cfg.depth):
        prefix = f"blocks.{i}"
        shapes += [(f"{prefix}.norm1.weight", (d,)), (f"{prefix}.norm1.bias", (d,))]
        for proj in ("q", "k", "v", "o"):
            shapes += [(f"{prefix}.attn.{proj}.weight", (d, d)), (f"{prefix}.attn.{proj}.bias", (d,))]
        shapes += [(f"{prefix}.norm2.weight", (d,)), (f"{prefix}.norm2.bias", (d,))]
        for expert in EXPERTS[cfg.expert_set]:
            e = f"{prefix}.ffn.{expert}"
            shapes += [(f"{e}.w1", (d, f)), (f"{e}.b1", (f,)), (f"{e}.w2", (f, d)), (f"{e}.b2", (d,))]
    shapes += [
        ("final_norm.weight", (d,)),
        ("final_norm.bias", (d,)),
        ("mlm_head.weight", (d, cfg.text_vocab_size)),
        ("mlm_head.bias", (cfg.text_vocab_size,)),
        ("mim_head.weight", (d, cfg.visual_vocab_size)),
        ("mim_head.bias", (cfg.visual_vocab_size,)),
    ]
    return shapes


def _initial_value(name: str, shape: Tuple[int, ...], cfg: MoMEConfig, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    is_norm = "norm" in name
    if is_norm and leaf == "weight":
        return np.ones(shape)
    if leaf in ("bias", "b1", "b2"):
        return np.zeros(shape)
    return trunc_normal(rng, shape, cfg.init_std)


def init_params(cfg: MoMEConfig, rng: np.random.Generator) -> ParamDict:
    """Fresh parameters in the current numeric mode."""
    dtype = get_default_dtype()
    params: ParamDict = {}
    for name, shape in param_shapes(cfg):
        value = _initial_value(name, shape, cfg, rng).astype(dtype)
        params[name] = Tensor(value, requires_grad=True, name=name, dtype=dtype)
    return params


def census(cfg: MoMEConfig) -> Dict[str, int]:
    """Closed-form parameter count, by group."""
    d, f = cfg.width, cfg.ffn_width
    n_text_pos = cfg.max_text_len * (2 if cfg.separate_pair_text_pos else 1)
    embeddings = cfg.text_vocab_size * d + n_text_pos * d + cfg.patch_dim * d + 2 * d + cfg.image_positions * d
    attention = 4 * (d * d + d)
    expert = d * f + f + f * d + d
    norms = 2 * 2 * d
    per_block = attention + len(EXPERTS[cfg.expert_set]) * expert + norms
    heads = d * cfg.text_vocab_size + cfg.text_vocab_size + d * cfg.visual_vocab_size + cfg.visual_vocab_size
    counts = {
        "embeddings": embeddings,
        "blocks": cfg.depth * per_block,
        "final_norm": 2 * d,
        "heads": heads,
    }
    counts["total"] = sum(counts.values())
    return counts


def count_params(params: ParamDict) -> int:
    return int(sum(p.size for p in params.values()))


def expert_for(cfg: MoMEConfig, tag: int) -> str:
    try:
        return ROUTES[cfg.expert_set][int(tag)]
    except KeyError as e:
        raise ConfigurationError(f"no {cfg.expert_set.value} expert is configured for modality tag {tag}") from e
