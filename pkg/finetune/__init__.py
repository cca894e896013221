"""Task heads and downstream forwards: classification, NLVR and dual-encoder retrieval."""

from .classification import avgpool_classify, fusion_classify, nlvr_forward
from .heads import HEAD_GROUPS, head_shapes, heads_from_arrays, init_heads
from .retrieval import (
    Direction,
    RetrievalIndex,
    build_index,
    contrastive_loss,
    hard_negative_weights,
    itc_loss,
    itm_loss,
    recall_at_k,
    rerank_retrieve,
)

__all__ = [
    "Direction",
    "HEAD_GROUPS",
    "RetrievalIndex",
    "avgpool_classify",
    "build_index",
    "contrastive_loss",
    "fusion_classify",
    "hard_negative_weights",
    "head_shapes",
    "heads_from_arrays",
    "init_heads",
    "itc_loss",
    "itm_loss",
    "nlvr_forward",
    "recall_at_k",
    "rerank_retrieve",
]
