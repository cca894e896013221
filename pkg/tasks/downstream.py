"""Downstream finetuning tasks: VQA, NLVR, retrieval and image classification."""

from abc import abstractmethod
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from autograd import functional as F
from autograd.tensor import Tensor, no_grad
from backbone.model import MoMEModel
from core.errors import ContractError
from finetune.classification import avgpool_classify, fusion_classify, nlvr_forward
from finetune.retrieval import (
    Direction,
    build_index,
    itc_loss,
    itm_loss,
    recall_at_k,
    rerank_many,
)
from models.configs import FinetuneConfig, FinetuneTaskName
from models.schemas import TaskStats
from pipeline.images import PatchGrid
from pipeline.synthetic import SyntheticExample
from pipeline.text import TextTokens, Vocabulary, tokenize

from .base_task import BaseTask, accuracy

EVAL_BATCH = 64


class FinetuneExample(BaseModel):
    """A synthetic example converted to model inputs."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    index: int
    tokens: TextTokens
    grids: Tuple[PatchGrid, ...]
    label: int


def prepare_examples(examples: Sequence[SyntheticExample], model: MoMEModel, vocab: Vocabulary) -> List[FinetuneExample]:
    return [
        FinetuneExample(
            index=e.index,
            tokens=model.clip(tokenize(e.text, vocab)),
            grids=tuple(model.patchify(img) for img in e.images),
            label=e.label,
        )
        for e in examples
    ]


def _labels(batch: Sequence[FinetuneExample]) -> np.ndarray:
    return np.array([e.label for e in batch], dtype=np.int64)


def _chunks(examples: Sequence[FinetuneExample], size: int = EVAL_BATCH):
    for start in range(0, len(examples), size):
        yield examples[start : start + size]


class DownstreamTask(BaseTask):
    """A finetuning objective with a held-out evaluation."""

    task_name: FinetuneTaskName

    def __init__(self, description: str) -> None:
        super().__init__(self.task_name.value, description)

    @abstractmethod
    def evaluate(
        self, examples: Sequence[FinetuneExample], model: MoMEModel, heads: Mapping[str, Tensor], cfg: FinetuneConfig
    ) -> Dict[str, float]:
        """Held-out metrics by name."""


class ClassificationTask(DownstreamTask):
    """Cross-entropy over the classes of a task head."""

    @abstractmethod
    def logits(
        self,
        batch: Sequence[FinetuneExample],
        model: MoMEModel,
        heads: Mapping[str, Tensor],
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """[B, classes] scores for a batch."""

    def compute(  # type: ignore[override]
        self,
        batch: Sequence[FinetuneExample],
        model: MoMEModel,
        heads: Mapping[str, Tensor],
        rng: np.random.Generator,
        cfg: FinetuneConfig,
    ) -> Tuple[Tensor, TaskStats]:
        if not batch:
            raise ContractError(f"{self.name} needs a non-empty batch")
        logits = self.logits(batch, model, heads, True, rng)
        labels = _labels(batch)
        loss = F.cross_entropy(logits, labels)
        return loss, TaskStats(task=self.name, loss=float(loss.item()), accuracy=accuracy(logits, labels), n_targets=len(batch))

    def evaluate(
        self, examples: Sequence[FinetuneExample], model: MoMEModel, heads: Mapping[str, Tensor], cfg: FinetuneConfig
    ) -> Dict[str, float]:
        """Held-out accuracy."""
        if not examples:
            raise ContractError(f"{self.name} evaluation needs at least one example")
        hits = 0
        with no_grad():
            for batch in _chunks(examples):
                predicted = np.argmax(self.logits(batch, model, heads).data, axis=1)
                hits += int((predicted == _labels(batch)).sum())
        return {"accuracy": hits / len(examples)}


class VQATask(ClassificationTask):
    task_name = FinetuneTaskName.VQA

    def __init__(self) -> None:
        super().__init__("question answering as classification over a closed answer set")

    def logits(self, batch, model, heads, training=False, rng=None):  # type: ignore[no-untyped-def]
        return fusion_classify([e.tokens for e in batch], [e.grids[0] for e in batch], model, heads, training, rng)


class NLVRTask(ClassificationTask):
    task_name = FinetuneTaskName.NLVR

    def __init__(self) -> None:
        super().__init__("true/false statements about a pair of images")

    def logits(self, batch, model, heads, training=False, rng=None):  # type: ignore[no-untyped-def]
        return nlvr_forward(
            [e.grids[0] for e in batch], [e.grids[1] for e in batch], [e.tokens for e in batch], model, heads, training, rng
        )


class ImgClsTask(ClassificationTask):
    task_name = FinetuneTaskName.IMGCLS

    def __init__(self) -> None:
        super().__init__("image classification on average-pooled image vectors")

    def logits(self, batch, model, heads, training=False, rng=None):  # type: ignore[no-untyped-def]
        return avgpool_classify([e.grids[0] for e in batch], model, heads, training, rng)


class RetrievalTask(DownstreamTask):
    """Contrastive plus hard-negative matching training; two-stage retrieval evaluation."""

    task_name = FinetuneTaskName.RETRIEVAL

    def __init__(self) -> None:
        super().__init__("image-text retrieval with matching rerank")

    def compute(  # type: ignore[override]
        self,
        batch: Sequence[FinetuneExample],
        model: MoMEModel,
        heads: Mapping[str, Tensor],
        rng: np.random.Generator,
        cfg: FinetuneConfig,
    ) -> Tuple[Tensor, TaskStats]:
        if len(batch) < 2:
            raise ContractError("retrieval finetuning needs at least two pairs per batch")
        texts = [e.tokens for e in batch]
        grids = [e.grids[0] for e in batch]
        contrastive, sims = itc_loss(texts, grids, model, heads, True, rng)
        matching, _ = itm_loss(texts, grids, sims.data, model, heads, rng, True)
        loss = F.add(contrastive, matching)

        diagonal = np.arange(len(batch))
        itc_acc = float(np.mean(np.argmax(sims.data, axis=1) == diagonal))
        parts = {
            "itc": TaskStats(task="itc", loss=float(contrastive.item()), accuracy=itc_acc, n_targets=len(batch)),
            "itm": TaskStats(task="itm", loss=float(matching.item()), accuracy=float("nan"), n_targets=2 * len(batch)),
        }
        return loss, TaskStats(task=self.name, loss=float(loss.item()), accuracy=itc_acc, n_targets=len(batch), parts=parts)

    def evaluate(
        self, examples: Sequence[FinetuneExample], model: MoMEModel, heads: Mapping[str, Tensor], cfg: FinetuneConfig
    ) -> Dict[str, float]:
        """Recall@1/5 in both directions after rerank of the top ``rerank_k``."""
        if len(examples) < 2:
            raise ContractError("retrieval evaluation needs at least two pairs")
        texts = [e.tokens for e in examples]
        grids = [e.grids[0] for e in examples]
        ids = [e.index for e in examples]
        index = build_index(texts, grids, ids, model, heads)
        k = min(cfg.rerank_k, len(examples))

        to_image = rerank_many(Direction.TEXT_TO_IMAGE, index.text_emb, texts, index, k, model, heads)
        to_text = rerank_many(Direction.IMAGE_TO_TEXT, index.image_emb, grids, index, k, model, heads)
        metrics = {
            "ir_recall@1": recall_at_k(to_image, ids, 1),
            "tr_recall@1": recall_at_k(to_text, ids, 1),
        }
        if k >= 5:
            metrics["ir_recall@5"] = recall_at_k(to_image, ids, 5)
            metrics["tr_recall@5"] = recall_at_k(to_text, ids, 5)
        return metrics
