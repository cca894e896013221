"""Classification forwards: fused image-question pairs, two-image reasoning and pooled images.

None of these paths masks its input.
"""

from typing import Mapping, Optional, Sequence

import numpy as np

from autograd import functional as F
from autograd.tensor import Tensor
from backbone.model import MoMEModel
from core.errors import ContractError
from pipeline.images import PatchGrid
from pipeline.text import TextTokens


def _linear(x: Tensor, heads: Mapping[str, Tensor], name: str) -> Tensor:
    return F.linear(x, heads[f"{name}.weight"], heads[f"{name}.bias"])


def fused_cls(
    texts: Sequence[TextTokens],
    grids: Sequence[PatchGrid],
    model: MoMEModel,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Final T_CLS vectors [b, d] of ``(text, image)`` pairs encoded jointly."""
    if len(texts) != len(grids):
        raise ContractError(f"{len(texts)} texts for {len(grids)} images")
    if not texts:
        raise ContractError("fusion encoding needs at least one pair")
    inputs = [model.pair_repr(model.clip(t), g) for t, g in zip(texts, grids)]
    return model.encode_batch(inputs, training, rng).first_rows()


def fusion_classify(
    texts: Sequence[TextTokens],
    grids: Sequence[PatchGrid],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Answer logits [b, answers] from the fused T_CLS vector."""
    return _linear(fused_cls(texts, grids, model, training, rng), heads, "cls")


def nlvr_forward(
    lefts: Sequence[PatchGrid],
    rights: Sequence[PatchGrid],
    texts: Sequence[TextTokens],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Logits [b, 2] over {false, true} for a statement about two images.

    The statement is fused with each image separately and the two T_CLS vectors
    are concatenated, left first.
    """
    b = len(texts)
    if len(lefts) != b or len(rights) != b:
        raise ContractError(f"NLVR needs matching counts, got {len(lefts)} left, {len(rights)} right, {b} texts")
    cls_rows = fused_cls(list(texts) + list(texts), list(lefts) + list(rights), model, training, rng)
    joined = F.concat([cls_rows[0:b], cls_rows[b : 2 * b]], axis=1)
    return _linear(joined, heads, "nlvr")


def avgpool_classify(
    grids: Sequence[PatchGrid],
    model: MoMEModel,
    heads: Mapping[str, Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Class logits from the mean of every final image position, I_CLS included."""
    if not grids:
        raise ContractError("image classification needs at least one image")
    batch = model.encode_batch([model.image_repr(g) for g in grids], training, rng)
    return _linear(batch.mean_pool(), heads, "imgcls")
