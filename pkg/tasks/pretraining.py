"""Masked language, image and vision-language modeling objectives.

Every objective follows the same path: plan a mask per example, corrupt the
embedded input with ``apply_mask``, encode the padded batch, gather the final
rows at masked positions and score them with a linear head under cross
entropy. Visual-token targets are always computed on the unmasked patches.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from autograd import functional as F
from autograd.tensor import Tensor
from backbone.model import MoMEModel
from core.errors import ConfigurationError, ContractError
from masking.apply import MaskedInput, apply_mask
from masking.plans import plan_mim, plan_mlm, plan_mvlm
from models.configs import MaskingConfig, PretrainTask
from models.schemas import TaskStats
from pipeline.images import PatchGrid
from pipeline.text import TextTokens
from tokenizer.codebook import Codebook, quantize

from .base_task import BaseTask, accuracy


class PretrainBatch(BaseModel):
    """One step's data: monomodal texts and images plus image-text pairs."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    texts: Tuple[TextTokens, ...] = ()
    images: Tuple[PatchGrid, ...] = ()
    pairs: Tuple[Tuple[TextTokens, PatchGrid], ...] = ()


def _require_codebook(codebook: Optional[Codebook], model: MoMEModel, task: str) -> Codebook:
    if codebook is None:
        raise ConfigurationError(f"{task} needs a trained visual codebook")
    if codebook.K != model.cfg.visual_vocab_size:
        raise ConfigurationError(f"codebook has {codebook.K} tokens, the image head predicts {model.cfg.visual_vocab_size}")
    return codebook


def _text_selections(masked: Sequence[MaskedInput]) -> Tuple[List[Tuple[int, int]], List[int]]:
    rows = [(i, r) for i, m in enumerate(masked) for r in m.text_rows]
    targets = [t for m in masked for t in m.text_targets]
    return rows, targets


def _image_selections(
    masked: Sequence[MaskedInput], tokens: Sequence[np.ndarray]
) -> Tuple[List[Tuple[int, int]], List[int]]:
    rows = [(i, r) for i, m in enumerate(masked) for r in m.image_rows]
    targets = [int(tokens[i][p]) for i, m in enumerate(masked) for p in m.image_patches]
    return rows, targets


def _stats(task: str, loss: Tensor, logits: Tensor, targets: Sequence[int]) -> TaskStats:
    return TaskStats(task=task, loss=float(loss.item()), accuracy=accuracy(logits, targets), n_targets=len(targets))


def mlm_loss(
    texts: Sequence[TextTokens],
    model: MoMEModel,
    rng: np.random.Generator,
    cfg: Optional[MaskingConfig] = None,
    training: bool = True,
) -> Tuple[Tensor, TaskStats]:
    """Recover corrupted text tokens from the rest of the text."""
    if not texts:
        raise ContractError("MLM needs at least one text")
    cfg = cfg or MaskingConfig()
    vocab_size = model.cfg.text_vocab_size
    masked = []
    for tokens in texts:
        tokens = model.clip(tokens)
        plan = plan_mlm(tokens, rng, vocab_size, cfg)
        masked.append(apply_mask(model.text_repr(tokens), plan, model.params))
    rows, targets = _text_selections(masked)
    if not rows:
        raise ContractError("MLM batch has no maskable tokens")

    batch = model.encode_batch([m.inputs for m in masked], training, rng)
    logits = model.mlm_logits(batch.rows(rows))
    loss = F.cross_entropy(logits, targets)
    return loss, _stats(PretrainTask.MLM.value, loss, logits, targets)


def mim_loss(
    images: Sequence[PatchGrid],
    model: MoMEModel,
    codebook: Optional[Codebook],
    rng: np.random.Generator,
    cfg: Optional[MaskingConfig] = None,
    training: bool = True,
) -> Tuple[Tensor, TaskStats]:
    """Predict the visual tokens of block-masked patches."""
    if not images:
        raise ContractError("MIM needs at least one image")
    codebook = _require_codebook(codebook, model, "MIM")
    cfg = cfg or MaskingConfig()
    tokens = [quantize(grid, codebook) for grid in images]
    masked = []
    for grid in images:
        plan = plan_mim(grid.n, grid.grid_h, grid.grid_w, rng, cfg)
        masked.append(apply_mask(model.image_repr(grid), plan, model.params))
    rows, targets = _image_selections(masked, tokens)
    if not rows:
        raise ContractError("MIM batch has no masked patches; image_mask_ratio must be positive")

    batch = model.encode_batch([m.inputs for m in masked], training, rng)
    logits = model.mim_logits(batch.rows(rows))
    loss = F.cross_entropy(logits, targets)
    return loss, _stats(PretrainTask.MIM.value, loss, logits, targets)


def mvlm_loss(
    pairs: Sequence[Tuple[TextTokens, PatchGrid]],
    model: MoMEModel,
    codebook: Optional[Codebook],
    rng: np.random.Generator,
    cfg: Optional[MaskingConfig] = None,
    text_weight: float = 1.0,
    image_weight: float = 1.0,
    training: bool = True,
) -> Tuple[Tensor, TaskStats]:
    """Joint masking of a pair: masked words and masked patches are both predicted.

    The loss is ``text_weight * text CE + image_weight * image CE``; the image
    term is absent when no patch is masked.
    """
    if not pairs:
        raise ContractError("MVLM needs at least one image-text pair")
    cfg = cfg or MaskingConfig()
    vocab_size = model.cfg.text_vocab_size
    codebook = _require_codebook(codebook, model, "MVLM") if cfg.image_mask_ratio > 0 else codebook

    masked = []
    visual_tokens = []
    for tokens, grid in pairs:
        tokens = model.clip(tokens)
        plan = plan_mvlm(tokens, grid.n, grid.grid_h, grid.grid_w, rng, vocab_size, cfg)
        masked.append(apply_mask(model.pair_repr(tokens, grid), plan, model.params))
        visual_tokens.append(quantize(grid, codebook) if plan.image_positions else np.zeros(0, dtype=np.int64))
    text_rows, text_targets = _text_selections(masked)
    image_rows, image_targets = _image_selections(masked, visual_tokens)
    if not text_rows and not image_rows:
        raise ContractError("MVLM batch has nothing to predict")

    batch = model.encode_batch([m.inputs for m in masked], training, rng)
    parts = {}
    loss: Optional[Tensor] = None
    if text_rows:
        text_logits = model.mlm_logits(batch.rows(text_rows))
        text_loss = F.cross_entropy(text_logits, text_targets)
        parts["text"] = _stats("text", text_loss, text_logits, text_targets)
        loss = F.mul(text_loss, text_weight)
    if image_rows:
        image_logits = model.mim_logits(batch.rows(image_rows))
        image_loss = F.cross_entropy(image_logits, image_targets)
        parts["image"] = _stats("image", image_loss, image_logits, image_targets)
        weighted = F.mul(image_loss, image_weight)
        loss = weighted if loss is None else F.add(loss, weighted)

    assert loss is not None
    n_targets = len(text_targets) + len(image_targets)
    hits = sum(p.accuracy * p.n_targets for p in parts.values())
    stats = TaskStats(
        task=PretrainTask.MVLM.value, loss=float(loss.item()), accuracy=hits / n_targets, n_targets=n_targets, parts=parts
    )
    return loss, stats


class MLMTask(BaseTask):
    def __init__(self) -> None:
        super().__init__(PretrainTask.MLM.value, "masked language modeling on texts")

    def compute(  # type: ignore[override]
        self, batch: PretrainBatch, model: MoMEModel, codebook: Optional[Codebook], rng: np.random.Generator, cfg: MaskingConfig
    ) -> Tuple[Tensor, TaskStats]:
        return mlm_loss(batch.texts, model, rng, cfg)


class MIMTask(BaseTask):
    def __init__(self) -> None:
        super().__init__(PretrainTask.MIM.value, "masked image modeling on images")

    def compute(  # type: ignore[override]
        self, batch: PretrainBatch, model: MoMEModel, codebook: Optional[Codebook], rng: np.random.Generator, cfg: MaskingConfig
    ) -> Tuple[Tensor, TaskStats]:
        return mim_loss(batch.images, model, codebook, rng, cfg)


class MVLMTask(BaseTask):
    def __init__(self, text_weight: float = 1.0, image_weight: float = 1.0) -> None:
        super().__init__(PretrainTask.MVLM.value, "masked vision-language modeling on image-text pairs")
        self.text_weight = text_weight
        self.image_weight = image_weight

    def compute(  # type: ignore[override]
        self, batch: PretrainBatch, model: MoMEModel, codebook: Optional[Codebook], rng: np.random.Generator, cfg: MaskingConfig
    ) -> Tuple[Tensor, TaskStats]:
        return mvlm_loss(batch.pairs, model, codebook, rng, cfg, self.text_weight, self.image_weight)
