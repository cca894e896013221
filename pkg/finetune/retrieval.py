"""Dual-encoder retrieval with image-text matching rerank.

Texts and images are embedded separately from their final T_CLS / I_CLS
vectors, projected and L2-normalised. Training combines the symmetric
contrastive loss with matching on hard negatives drawn from the contrastive
similarities. Retrieval shortlists ``k`` candidates by cosine similarity and
reorders them by the fused matching score.
"""

from enum import Enum
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, model_validator

from autograd import functional as F
from autograd.tensor import Tensor, no_grad
from backbone.model import MoMEModel
from core.errors import ContractError
from pipeline.images import PatchGrid
from pipeline.text import TextTokens

from .classification import fused_cls

NORM_TOLERANCE = 1e-5
_log = logger.bind(component="retrieval")


class Direction(str, Enum):
    TEXT_TO_IMAGE = "text_to_image"
    IMAGE_TO_TEXT = "image_to_text"


def embed_texts(
    texts: Sequence[TextTokens],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    batch = model.encode_batch([model.text_repr(model.clip(t)) for t in texts], training, rng)
    projected = F.linear(batch.first_rows(), heads["txt_proj.weight"], heads["txt_proj.bias"])
    return F.l2_normalize(projected, axis=-1)


def embed_images(
    grids: Sequence[PatchGrid],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    batch = model.encode_batch([model.image_repr(g) for g in grids], training, rng)
    projected = F.linear(batch.image_cls_rows(), heads["img_proj.weight"], heads["img_proj.bias"])
    return F.l2_normalize(projected, axis=-1)


def similarity(text_emb: Tensor, image_emb: Tensor, log_tau: Tensor) -> Tensor:
    """``S[i, j] = exp(log_tau) * <text_i, image_j>``."""
    return F.mul(F.matmul(text_emb, F.transpose(image_emb, (1, 0))), F.exp(log_tau))


def contrastive_loss(text_emb: Tensor, image_emb: Tensor, log_tau: Tensor) -> Tuple[Tensor, Tensor]:
    """Symmetric in-batch cross entropy with matched pairs on the diagonal.

    Returns the loss and the similarity matrix. A batch of one has nothing to
    contrast and yields zero.
    """
    b = text_emb.shape[0]
    if image_emb.shape[0] != b:
        raise ContractError(f"{b} text embeddings for {image_emb.shape[0]} image embeddings")
    sims = similarity(text_emb, image_emb, log_tau)
    if b == 1:
        _log.warning("Contrastive loss on a batch of one pair is identically zero")
        return F.mul(F.sum(sims), 0.0), sims
    targets = np.arange(b)
    rows = F.cross_entropy(sims, targets)
    cols = F.cross_entropy(F.transpose(sims, (1, 0)), targets)
    return F.mul(F.add(rows, cols), 0.5), sims


def itc_loss(
    texts: Sequence[TextTokens],
    grids: Sequence[PatchGrid],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    text_emb = embed_texts(texts, model, heads, training, rng)
    image_emb = embed_images(grids, model, heads, training, rng)
    return contrastive_loss(text_emb, image_emb, heads["log_tau"])


def hard_negative_weights(sims: np.ndarray) -> np.ndarray:
    """Row-wise softmax over off-diagonal entries; the diagonal gets zero weight."""
    sims = np.asarray(sims, dtype=np.float64)
    b = sims.shape[0]
    if sims.shape != (b, b) or b < 2:
        raise ContractError(f"hard negatives need a square similarity matrix with b >= 2, got {sims.shape}")
    masked = np.where(np.eye(b, dtype=bool), -np.inf, sims)
    masked = masked - masked.max(axis=1, keepdims=True)
    weights = np.exp(masked)
    return weights / weights.sum(axis=1, keepdims=True)


def sample_hard_negatives(sims: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One off-diagonal column index per row, drawn from ``hard_negative_weights``."""
    weights = hard_negative_weights(sims)
    cumulative = np.cumsum(weights, axis=1)
    draws = rng.random(weights.shape[0])[:, None]
    picks = (cumulative < draws).sum(axis=1)
    # Guard against cumulative sums that end just below 1.
    picks = np.minimum(picks, weights.shape[1] - 1)
    for i, j in enumerate(picks):
        if j == i:
            picks[i] = int(np.flatnonzero(weights[i])[-1])
    return picks


def itm_logits(
    texts: Sequence[TextTokens],
    grids: Sequence[PatchGrid],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    cls_rows = fused_cls(texts, grids, model, training, rng)
    return F.linear(cls_rows, heads["itm.weight"], heads["itm.bias"])


def itm_loss(
    texts: Sequence[TextTokens],
    grids: Sequence[PatchGrid],
    sims: np.ndarray,
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    rng: np.random.Generator,
    training: bool = False,
) -> Tuple[Tensor, np.ndarray]:
    """Binary matching over b true pairs and b hard negatives.

    Each image gets one negative text sampled in proportion to its contrastive
    similarities with the other texts in the batch. Returns the loss and the
    sampled text index per image.
    """
    b = len(texts)
    if b < 2:
        raise ContractError("image-text matching needs at least two pairs for a negative")
    image_to_text = np.asarray(sims).T
    negatives = sample_hard_negatives(image_to_text, rng)
    pair_texts = list(texts) + [texts[int(j)] for j in negatives]
    pair_grids = list(grids) + list(grids)
    labels = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(b, dtype=np.int64)])
    logits = itm_logits(pair_texts, pair_grids, model, heads, training, rng)
    return F.cross_entropy(logits, labels), negatives


def itm_scores(
    texts: Sequence[TextTokens],
    grids: Sequence[PatchGrid],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    batch_size: int = 64,
) -> np.ndarray:
    """Positive-class matching probability of each ``(text, image)`` pair."""
    scores: List[np.ndarray] = []
    with no_grad():
        for start in range(0, len(texts), batch_size):
            logits = itm_logits(texts[start : start + batch_size], grids[start : start + batch_size], model, heads)
            scores.append(F.softmax(logits, axis=-1).data[:, 1].astype(np.float64))
    return np.concatenate(scores) if scores else np.zeros(0)


class RetrievalIndex(BaseModel):
    """Normalised embeddings of a corpus plus the raw inputs needed for reranking."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    image_emb: np.ndarray
    text_emb: np.ndarray
    image_ids: Tuple[int, ...]
    text_ids: Tuple[int, ...]
    images: Tuple[PatchGrid, ...] = ()
    texts: Tuple[TextTokens, ...] = ()

    @model_validator(mode="after")
    def _check_rows(self) -> "RetrievalIndex":
        for label, emb, ids in (("image", self.image_emb, self.image_ids), ("text", self.text_emb, self.text_ids)):
            if emb.ndim != 2 or emb.shape[0] != len(ids):
                raise ValueError(f"{label} embeddings {emb.shape} do not match {len(ids)} ids")
            norms = np.linalg.norm(emb, axis=1)
            if emb.shape[0] and np.abs(norms - 1.0).max() > NORM_TOLERANCE:
                raise ValueError(f"{label} embeddings must be unit norm")
        return self

    def candidates(self, direction: Direction) -> Tuple[np.ndarray, Tuple[int, ...]]:
        if direction == Direction.TEXT_TO_IMAGE:
            return self.image_emb, self.image_ids
        return self.text_emb, self.text_ids


def build_index(
    texts: Sequence[TextTokens],
    grids: Sequence[PatchGrid],
    ids: Sequence[int],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    batch_size: int = 64,
) -> RetrievalIndex:
    """Embed a paired corpus; text ``i`` and image ``i`` share ``ids[i]``."""
    if not (len(texts) == len(grids) == len(ids)):
        raise ContractError("index needs one text and one image per id")
    text_parts, image_parts = [], []
    with no_grad():
        for start in range(0, len(ids), batch_size):
            stop = start + batch_size
            text_parts.append(embed_texts(texts[start:stop], model, heads).data.astype(np.float64))
            image_parts.append(embed_images(grids[start:stop], model, heads).data.astype(np.float64))
    width = int(heads["img_proj.weight"].shape[1])
    return RetrievalIndex(
        image_emb=np.concatenate(image_parts) if image_parts else np.zeros((0, width)),
        text_emb=np.concatenate(text_parts) if text_parts else np.zeros((0, width)),
        image_ids=tuple(int(i) for i in ids),
        text_ids=tuple(int(i) for i in ids),
        images=tuple(grids),
        texts=tuple(texts),
    )


def dual_encoder_topk(query_emb: np.ndarray, candidates: np.ndarray, ids: Sequence[int], k: int) -> np.ndarray:
    """Positions of the ``k`` most similar candidates; equal similarity ranks the lower id first."""
    n = candidates.shape[0]
    if n == 0:
        raise ContractError("retrieval index is empty")
    if not 1 <= k <= n:
        raise ContractError(f"k={k} must lie in [1, {n}]")
    sims = candidates @ np.asarray(query_emb, dtype=np.float64)
    order = np.lexsort((np.asarray(ids), -sims))
    return order[:k]


def rerank_retrieve(
    direction: Direction,
    query_emb: np.ndarray,
    query_input: object,
    index: RetrievalIndex,
    k: int,
    model: MoMEModel,
    heads: Mapping[str, Tensor],
) -> List[int]:
    """Two-stage retrieval for one query; returns ``k`` ids, best first.

    ``query_input`` is the query's ``TextTokens`` for text-to-image retrieval
    and its ``PatchGrid`` for image-to-text.
    """
    return rerank_many(direction, np.asarray(query_emb)[None, :], [query_input], index, k, model, heads)[0]


def rerank_many(
    direction: Direction,
    query_embs: np.ndarray,
    query_inputs: Sequence[object],
    index: RetrievalIndex,
    k: int,
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    batch_size: int = 64,
) -> List[List[int]]:
    """``rerank_retrieve`` for many queries, with matching scores computed in batches."""
    candidates, ids = index.candidates(direction)
    shortlists = [dual_encoder_topk(q, candidates, ids, k) for q in query_embs]

    texts: List[TextTokens] = []
    grids: List[PatchGrid] = []
    for query, shortlist in zip(query_inputs, shortlists):
        for pos in shortlist:
            if direction == Direction.TEXT_TO_IMAGE:
                texts.append(query)  # type: ignore[arg-type]
                grids.append(index.images[int(pos)])
            else:
                texts.append(index.texts[int(pos)])
                grids.append(query)  # type: ignore[arg-type]
    scores = itm_scores(texts, grids, model, heads, batch_size).reshape(len(shortlists), k)

    ranked: List[List[int]] = []
    for shortlist, row in zip(shortlists, scores):
        order = np.argsort(-row, kind="stable")
        ranked.append([int(ids[int(shortlist[j])]) for j in order])
    return ranked


def recall_at_k(ranked: Sequence[Sequence[int]], gold: Sequence[int], k: int) -> float:
    """Fraction of queries whose gold id is among the first ``k`` results."""
    if len(ranked) != len(gold):
        raise ContractError(f"{len(ranked)} ranked lists for {len(gold)} gold ids")
    if not ranked:
        raise ContractError("recall needs at least one query")
    if k < 1:
        raise ContractError(f"recall@k needs k >= 1, got {k}")
    hits = 0
    for results, target in zip(ranked, gold):
        if target is None:
            raise ContractError("every query needs a gold id")
        hits += int(target in list(results)[:k])
    return hits / len(ranked)
