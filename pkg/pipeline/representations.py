"""Image, text and image-text pair input representations.

An image becomes ``[E_ICLS; patches @ W_patch] + V_pos[0..N]``, a text becomes
``word([T_CLS] ids [T_SEP]) + T_pos[0..M+1]`` and a pair is the text block
followed by the image block. Parameter tables are looked up by name:

    embed.word            [V_t, d]
    embed.text_pos        [max_text_len, d]
    embed.pair_text_pos   [max_text_len, d]  (only with separate pair text positions)
    embed.patch.weight    [P*P*C, d]
    embed.image_cls       [1, d]
    embed.image_mask      [1, d]
    embed.image_pos       [N+1, d]
"""

from enum import Enum, IntEnum
from typing import Mapping, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from autograd import functional as F
from autograd.tensor import Tensor
from core.errors import ConfigurationError, DimensionError

from .images import PatchGrid
from .text import TextTokens, frame

TEXT_POS = "embed.text_pos"
PAIR_TEXT_POS = "embed.pair_text_pos"


class Modality(IntEnum):
    TEXT = 0
    IMAGE = 1


class ReprKind(str, Enum):
    IMAGE_ONLY = "image_only"
    TEXT_ONLY = "text_only"
    PAIR = "pair"


class InputRepr(BaseModel):
    """Embedded sequence with per-position modality tags and validity flags.

    ``token_ids`` holds the framed text ids of the text block (empty for
    images); ``text_len`` and ``image_len`` give the block lengths, text first.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    embeddings: Tensor
    modality_tags: np.ndarray
    valid: np.ndarray
    kind: ReprKind
    token_ids: Tuple[int, ...] = ()
    text_len: int = 0
    image_len: int = 0
    text_pos_table: str = TEXT_POS

    @property
    def length(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def width(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def image_offset(self) -> int:
        """Row of I_CLS, the first image row."""
        return self.text_len

    @property
    def num_patches(self) -> int:
        return max(0, self.image_len - 1)


def build_image_repr(grid: PatchGrid, params: Mapping[str, Tensor]) -> InputRepr:
    weight = params["embed.patch.weight"]
    cls_row = params["embed.image_cls"]
    pos = params["embed.image_pos"]
    if grid.n + 1 > pos.shape[0]:
        raise ConfigurationError(f"{grid.n} patches need {grid.n + 1} image positions, table has {pos.shape[0]}")
    if grid.dim != weight.shape[0]:
        raise DimensionError(f"patch width {grid.dim} does not match patch embedding {weight.shape}")
    patches = Tensor(grid.patches, dtype=weight.dtype)
    rows = F.concat([cls_row, F.matmul(patches, weight)], axis=0)
    embeddings = F.add(rows, pos[0 : grid.n + 1])
    length = grid.n + 1
    return InputRepr(
        embeddings=embeddings,
        modality_tags=np.full(length, Modality.IMAGE, dtype=np.int8),
        valid=np.ones(length, dtype=bool),
        kind=ReprKind.IMAGE_ONLY,
        image_len=length,
    )


def build_text_repr(tokens: TextTokens, params: Mapping[str, Tensor], pair: bool = False) -> InputRepr:
    """Embed a text; over-long texts keep their first tokens and always end in T_SEP.

    With ``pair=True`` the pair position table is used when the model has one.
    """
    table = PAIR_TEXT_POS if pair and PAIR_TEXT_POS in params else TEXT_POS
    pos = params[table]
    ids = frame(tokens, pos.shape[0])
    length = len(ids)
    embeddings = F.add(F.take_rows(params["embed.word"], ids), pos[0:length])
    return InputRepr(
        embeddings=embeddings,
        modality_tags=np.full(length, Modality.TEXT, dtype=np.int8),
        valid=np.ones(length, dtype=bool),
        kind=ReprKind.TEXT_ONLY,
        token_ids=tuple(ids),
        text_len=length,
        text_pos_table=table,
    )


def concat_pair(text: InputRepr, image: InputRepr) -> InputRepr:
    """Text block followed by image block."""
    if text.kind != ReprKind.TEXT_ONLY or image.kind != ReprKind.IMAGE_ONLY:
        raise ConfigurationError(f"concat_pair needs a text and an image, got {text.kind.value} and {image.kind.value}")
    if text.width != image.width:
        raise DimensionError(f"text width {text.width} does not match image width {image.width}")
    return InputRepr(
        embeddings=F.concat([text.embeddings, image.embeddings], axis=0),
        modality_tags=np.concatenate([text.modality_tags, image.modality_tags]),
        valid=np.concatenate([text.valid, image.valid]),
        kind=ReprKind.PAIR,
        token_ids=text.token_ids,
        text_len=text.length,
        image_len=image.length,
        text_pos_table=text.text_pos_table,
    )


def build_pair_repr(tokens: TextTokens, grid: PatchGrid, params: Mapping[str, Tensor]) -> InputRepr:
    return concat_pair(build_text_repr(tokens, params, pair=True), build_image_repr(grid, params))


def reprs_width(reprs: Sequence[InputRepr]) -> int:
    widths = {r.width for r in reprs}
    if len(widths) != 1:
        raise DimensionError(f"batch mixes embedding widths {sorted(widths)}")
    return widths.pop()
