"""Apply a mask plan to an embedded input."""

from typing import List, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from autograd import functional as F
from autograd.tensor import Tensor
from core.errors import ContractError
from pipeline.representations import InputRepr
from pipeline.text import T_MASK

from .plans import MaskAction, MaskPlan


class MaskedInput(BaseModel):
    """A corrupted input with the rows to predict and their original text ids.

    ``text_rows`` / ``text_targets`` cover every planned text position (KEEP
    included); ``image_rows`` are sequence rows of the masked patches and
    ``image_patches`` their patch indices.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    inputs: InputRepr
    plan: MaskPlan
    text_rows: Tuple[int, ...] = ()
    text_targets: Tuple[int, ...] = ()
    image_rows: Tuple[int, ...] = ()
    image_patches: Tuple[int, ...] = ()


def _check_plan(inputs: InputRepr, plan: MaskPlan) -> None:
    last_text = inputs.text_len - 1
    for entry in plan.text_positions:
        if not 1 <= entry.position < last_text:
            raise ContractError(
                f"text mask position {entry.position} outside the maskable range [1, {last_text}) of a "
                f"{inputs.kind.value} input"
            )
    n = inputs.num_patches
    for idx in plan.image_positions:
        if not 0 <= idx < n:
            raise ContractError(f"image mask position {idx} outside [0, {n}) of a {inputs.kind.value} input")
    if len(set(plan.image_positions)) != len(plan.image_positions):
        raise ContractError("image mask positions must be unique")


def apply_mask(inputs: InputRepr, plan: MaskPlan, params: Mapping[str, Tensor]) -> MaskedInput:
    """Replace planned rows; every other row is passed through unchanged.

    MASK and RANDOM text rows are re-embedded as ``word[id] + T_pos[row]``;
    masked patch rows become ``E_IMASK + V_pos[1 + patch]``.
    """
    _check_plan(inputs, plan)
    text_rows = tuple(e.position for e in plan.text_positions)
    text_targets = tuple(e.original_id for e in plan.text_positions)
    image_rows = tuple(inputs.image_offset + 1 + i for i in plan.image_positions)
    if plan.is_empty:
        return MaskedInput(inputs=inputs, plan=plan)

    parts: List[Tensor] = []
    indices: List[np.ndarray] = []

    replaced = [e for e in plan.text_positions if e.action != MaskAction.KEEP]
    if replaced:
        ids = [T_MASK if e.action == MaskAction.MASK else e.replacement_id for e in replaced]
        rows = np.array([e.position for e in replaced], dtype=np.int64)
        parts.append(F.add(F.take_rows(params["embed.word"], ids), params[inputs.text_pos_table][rows]))
        indices.append(rows)

    if plan.image_positions:
        patches = np.array(plan.image_positions, dtype=np.int64)
        mask_rows = F.add(params["embed.image_mask"], params["embed.image_pos"][patches + 1])
        parts.append(mask_rows)
        indices.append(np.array(image_rows, dtype=np.int64))

    embeddings = inputs.embeddings
    if parts:
        cond = np.zeros((inputs.length, 1), dtype=bool)
        for idx in indices:
            cond[idx, 0] = True
        replacement = F.assemble_rows(parts, indices, inputs.length)
        embeddings = F.where(cond, replacement, embeddings)

    masked = inputs.model_copy(update={"embeddings": embeddings})
    return MaskedInput(
        inputs=masked,
        plan=plan,
        text_rows=text_rows,
        text_targets=text_targets,
        image_rows=image_rows,
        image_patches=tuple(plan.image_positions),
    )
