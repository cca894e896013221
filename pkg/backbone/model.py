"""The shared Transformer: parameters, input embedding, batched encoding and prediction heads."""

from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from autograd import functional as F
from autograd.tensor import Tensor
from core.errors import ConfigurationError, ContractError
from models.configs import MoMEConfig
from pipeline.images import PatchGrid, RawImage, patchify
from pipeline.representations import (
    InputRepr,
    Modality,
    build_image_repr,
    build_pair_repr,
    build_text_repr,
    reprs_width,
)
from pipeline.text import TextTokens, clip_tokens

from .mome import mome_block
from .params import ParamDict, census, count_params, init_params, param_shapes


class EncodedBatch(BaseModel):
    """Final hidden states of a padded batch, [B, L_max, d], with per-row bookkeeping."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    hidden: Tensor
    valid: np.ndarray
    lengths: Tuple[int, ...]
    inputs: Tuple[InputRepr, ...]

    @property
    def max_len(self) -> int:
        return int(self.hidden.shape[1])

    def rows(self, selections: Sequence[Tuple[int, int]]) -> Tensor:
        """Gather ``(example, position)`` rows into a [k, d] tensor."""
        b, length, d = self.hidden.shape
        flat = np.array([i * length + j for i, j in selections], dtype=np.int64)
        return F.reshape(self.hidden, (b * length, d))[flat]

    def first_rows(self) -> Tensor:
        """Row 0 of every example (T_CLS for texts and pairs, I_CLS for images)."""
        return self.rows([(i, 0) for i in range(len(self.inputs))])

    def image_cls_rows(self) -> Tensor:
        return self.rows([(i, r.image_offset) for i, r in enumerate(self.inputs)])

    def mean_pool(self) -> Tensor:
        """Mean over each example's valid positions."""
        weights = self.valid.astype(self.hidden.dtype) / self.valid.sum(axis=1, keepdims=True).astype(self.hidden.dtype)
        return F.sum(F.mul(self.hidden, weights[:, :, None]), axis=1)


class MoMEModel:
    """Parameters plus the entry points shared by pretraining and finetuning."""

    def __init__(self, cfg: MoMEConfig, params: ParamDict) -> None:
        self.cfg = cfg
        self.params = params
        self.logger = logger.bind(component="backbone")

    @classmethod
    def create(cls, cfg: MoMEConfig, seed: int) -> "MoMEModel":
        rng = np.random.default_rng([seed, 0x6D6F6D65])
        model = cls(cfg, init_params(cfg, rng))
        model.logger.debug(f"Initialised {cfg.expert_set.value} backbone with {model.num_parameters()} parameters")
        return model

    @classmethod
    def from_arrays(cls, cfg: MoMEConfig, arrays: Mapping[str, np.ndarray], dtype: Optional[np.dtype] = None) -> "MoMEModel":
        """Rebuild from stored arrays; every expected parameter must be present with its shape."""
        params: ParamDict = {}
        for name, shape in param_shapes(cfg):
            if name not in arrays:
                raise ConfigurationError(f"stored weights lack parameter '{name}'")
            value = np.asarray(arrays[name])
            if tuple(value.shape) != shape:
                raise ConfigurationError(f"stored parameter '{name}' has shape {value.shape}, configuration expects {shape}")
            params[name] = Tensor(value.astype(dtype or value.dtype), requires_grad=True, name=name)
        return cls(cfg, params)

    # Introspection

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return count_params(self.params)

    def census(self) -> Dict[str, int]:
        return census(self.cfg)

    # Inputs

    def patchify(self, image: RawImage) -> PatchGrid:
        if image.height != self.cfg.image_size or image.width != self.cfg.image_size:
            raise ConfigurationError(
                f"image {image.height}x{image.width} does not match configured size {self.cfg.image_size}"
            )
        return patchify(image, self.cfg.patch_size)

    def clip(self, tokens: TextTokens) -> TextTokens:
        return clip_tokens(tokens, self.cfg.max_text_len)

    def image_repr(self, grid: PatchGrid) -> InputRepr:
        return build_image_repr(grid, self.params)

    def text_repr(self, tokens: TextTokens) -> InputRepr:
        return build_text_repr(tokens, self.params)

    def pair_repr(self, tokens: TextTokens, grid: PatchGrid) -> InputRepr:
        return build_pair_repr(tokens, grid, self.params)

    # Encoding

    def encode_batch(
        self, inputs: Sequence[InputRepr], training: bool = False, rng: Optional[np.random.Generator] = None
    ) -> EncodedBatch:
        """Pad to the longest input, run every block, then the final layer norm."""
        if not inputs:
            raise ContractError("encode needs at least one input")
        reprs_width(inputs)
        lengths = tuple(r.length for r in inputs)
        max_len = max(lengths)
        valid = np.zeros((len(inputs), max_len), dtype=bool)
        tags = np.full((len(inputs), max_len), int(Modality.TEXT), dtype=np.int8)
        for i, r in enumerate(inputs):
            valid[i, : r.length] = r.valid
            tags[i, : r.length] = r.modality_tags

        x = F.pad_stack([r.embeddings for r in inputs], max_len)
        for layer in range(self.cfg.depth):
            x = mome_block(x, tags, valid, self.params, layer, self.cfg, training, rng)
        x = F.layer_norm(x, self.params["final_norm.weight"], self.params["final_norm.bias"], self.cfg.ln_eps)
        return EncodedBatch(hidden=x, valid=valid, lengths=lengths, inputs=tuple(inputs))

    def encode(self, inputs: InputRepr, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Final hidden states [L, d] of a single input."""
        batch = self.encode_batch([inputs], training, rng)
        return F.reshape(batch.hidden, (inputs.length, self.cfg.width))

    # Heads

    def mlm_logits(self, rows: Tensor) -> Tensor:
        return F.linear(rows, self.params["mlm_head.weight"], self.params["mlm_head.bias"])

    def mim_logits(self, rows: Tensor) -> Tensor:
        return F.linear(rows, self.params["mim_head.weight"], self.params["mim_head.bias"])

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())
