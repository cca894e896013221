"""Task heads placed on top of the pretrained backbone.

Heads are plain parameter dicts, stored under ``heads/`` in checkpoints:

- ``cls``      d -> answers, on the fused T_CLS vector (VQA)
- ``nlvr``     2d -> 2, on two concatenated T_CLS vectors
- ``itm``      d -> 2, image-text matching on the fused T_CLS vector
- ``img_proj`` / ``txt_proj`` d -> embed_dim, dual-encoder projections
- ``log_tau``  log of the contrastive scale, initialised to log(1 / temperature)
- ``imgcls``   d -> classes, on the average-pooled image
"""

import math
from typing import Dict, List, Mapping, Tuple

import numpy as np

from autograd.tensor import Tensor, get_default_dtype
from backbone.params import ParamDict, trunc_normal
from core.errors import ConfigurationError
from models.configs import FinetuneConfig, FinetuneTaskName, MoMEConfig

HEAD_GROUPS: Dict[FinetuneTaskName, Tuple[str, ...]] = {
    FinetuneTaskName.VQA: ("cls",),
    FinetuneTaskName.NLVR: ("nlvr",),
    FinetuneTaskName.RETRIEVAL: ("img_proj", "txt_proj", "log_tau", "itm"),
    FinetuneTaskName.IMGCLS: ("imgcls",),
}


def head_shapes(mome: MoMEConfig, cfg: FinetuneConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    d = mome.width
    if cfg.embed_dim > d:
        raise ConfigurationError(f"embed_dim {cfg.embed_dim} exceeds the backbone width {d}")
    linear = {
        "cls": (d, cfg.n_answers),
        "nlvr": (2 * d, 2),
        "itm": (d, 2),
        "img_proj": (d, cfg.embed_dim),
        "txt_proj": (d, cfg.embed_dim),
        "imgcls": (d, cfg.n_classes),
    }
    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    for group in HEAD_GROUPS[cfg.task]:
        if group == "log_tau":
            shapes.append(("log_tau", (1,)))
            continue
        fan_in, fan_out = linear[group]
        shapes += [(f"{group}.weight", (fan_in, fan_out)), (f"{group}.bias", (fan_out,))]
    return shapes


def init_heads(mome: MoMEConfig, cfg: FinetuneConfig, rng: np.random.Generator) -> ParamDict:
    """Fresh heads for ``cfg.task`` in the current numeric mode."""
    dtype = get_default_dtype()
    heads: ParamDict = {}
    for name, shape in head_shapes(mome, cfg):
        if name == "log_tau":
            value = np.full(shape, math.log(1.0 / cfg.init_temperature))
        elif name.endswith(".bias"):
            value = np.zeros(shape)
        else:
            value = trunc_normal(rng, shape, mome.init_std)
        heads[name] = Tensor(value.astype(dtype), requires_grad=True, name=f"heads/{name}", dtype=dtype)
    return heads


def heads_from_arrays(mome: MoMEConfig, cfg: FinetuneConfig, arrays: Mapping[str, np.ndarray]) -> ParamDict:
    heads: ParamDict = {}
    for name, shape in head_shapes(mome, cfg):
        if name not in arrays:
            raise ConfigurationError(f"stored heads lack '{name}' needed by {cfg.task.value}")
        value = np.asarray(arrays[name])
        if tuple(value.shape) != shape:
            raise ConfigurationError(f"stored head '{name}' has shape {value.shape}, expected {shape}")
        heads[name] = Tensor(value.astype(get_default_dtype()), requires_grad=True, name=f"heads/{name}")
    return heads


def temperature_scale(heads: Mapping[str, Tensor]) -> float:
    """Current contrastive scale tau = exp(log_tau)."""
    return float(np.exp(heads["log_tau"].data[0]))
