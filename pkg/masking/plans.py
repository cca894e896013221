"""Mask plans for masked language, image and vision-language modeling.

Text positions are sequence positions of the framed text (``1..M``), so
position 0 (T_CLS) and the final T_SEP are never planned. Image positions are
patch indices in ``[0, N)``.
"""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import ContractError
from models.configs import MaskingConfig
from pipeline.text import NUM_SPECIALS, TextTokens

MAX_REJECTIONS = 100
BLOCK_CANDIDATES = 10


class MaskAction(str, Enum):
    MASK = "mask"
    RANDOM = "random"
    KEEP = "keep"


class TextMaskEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: int
    action: MaskAction
    original_id: int
    replacement_id: int


class MaskPlan(BaseModel):
    """Planned text corruptions and masked patches of one example."""

    model_config = ConfigDict(frozen=True)

    text_positions: Tuple[TextMaskEntry, ...] = ()
    image_positions: Tuple[int, ...] = ()
    ratios_used: Dict[str, float] = Field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.text_positions and not self.image_positions


def mask_count(ratio: float, m: int) -> int:
    """``max(1, floor(ratio * m))`` for ``m >= 1``."""
    if m <= 0:
        return 0
    return max(1, int(math.floor(ratio * m + 1e-9)))


def plan_text(
    tokens: TextTokens,
    rng: np.random.Generator,
    ratio: float,
    vocab_size: int,
    mask_prob: float = 0.8,
    random_prob: float = 0.1,
    actions: bool = True,
) -> Tuple[TextMaskEntry, ...]:
    """Choose ``mask_count(ratio, M)`` positions and a corruption for each.

    With ``actions=False`` every planned position is replaced by T_MASK.
    """
    m = tokens.M
    count = mask_count(ratio, m)
    if count == 0:
        return ()
    chosen = np.sort(rng.choice(m, size=count, replace=False))
    draws = rng.random(count)
    random_ids = rng.integers(NUM_SPECIALS, vocab_size, size=count)
    entries = []
    for k, idx in enumerate(chosen):
        if not actions or draws[k] < mask_prob:
            action = MaskAction.MASK
        elif draws[k] < mask_prob + random_prob:
            action = MaskAction.RANDOM
        else:
            action = MaskAction.KEEP
        original = tokens.ids[int(idx)]
        replacement = int(random_ids[k]) if action == MaskAction.RANDOM else original
        entries.append(TextMaskEntry(position=int(idx) + 1, action=action, original_id=original, replacement_id=replacement))
    return tuple(entries)


def plan_mlm(
    tokens: TextTokens, rng: np.random.Generator, vocab_size: int, cfg: Optional[MaskingConfig] = None
) -> MaskPlan:
    """Masked language modeling plan (15% by default, 80/10/10 actions)."""
    cfg = cfg or MaskingConfig()
    entries = plan_text(tokens, rng, cfg.mlm_ratio, vocab_size, cfg.mask_prob, cfg.random_prob, True)
    ratios = {"text": len(entries) / tokens.M} if tokens.M else {}
    return MaskPlan(text_positions=entries, ratios_used=ratios)


def _sample_block(
    rng: np.random.Generator, grid_h: int, grid_w: int, min_area: int, max_area: int, min_aspect: float
) -> Tuple[int, int, int, int]:
    """A (top, left, h, w) rectangle of area >= min_area with bounded aspect ratio."""
    log_lo, log_hi = math.log(min_aspect), math.log(1.0 / min_aspect)
    rejections = 0
    while True:
        area = rng.uniform(min_area, max(min_area, max_area))
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        h = min(max(int(round(math.sqrt(area * aspect))), 1), grid_h)
        w = min(max(int(round(math.sqrt(area / aspect))), 1), grid_w)
        relaxed = rejections >= MAX_REJECTIONS
        if relaxed:
            # Grow the clipped block until it meets the minimum area.
            while h * w < min_area:
                if w < grid_w:
                    w += 1
                else:
                    h += 1
        elif h * w < min_area or not (min_aspect <= h / w <= 1.0 / min_aspect):
            rejections += 1
            continue
        top = int(rng.integers(0, grid_h - h + 1))
        left = int(rng.integers(0, grid_w - w + 1))
        return top, left, h, w


def plan_blockwise(
    n: int,
    grid_h: int,
    grid_w: int,
    ratio: float,
    rng: np.random.Generator,
    min_area: int = 4,
    min_aspect: float = 0.3,
) -> MaskPlan:
    """Union of random rectangles covering at least ``ceil(ratio * n)`` patches.

    Each round draws up to ``BLOCK_CANDIDATES`` rectangles and keeps the first
    that adds new patches without overshooting the remaining quota, or else the
    one adding the fewest new patches.
    """
    if grid_h * grid_w != n:
        raise ContractError(f"grid {grid_h}x{grid_w} does not hold {n} patches")
    target = min(n, int(math.ceil(ratio * n - 1e-9)))
    block_min = min(min_area, n)
    mask = np.zeros((grid_h, grid_w), dtype=bool)
    masked = 0
    while masked < target:
        remaining = target - masked
        best: Optional[Tuple[int, Tuple[int, int, int, int]]] = None
        for _ in range(BLOCK_CANDIDATES):
            top, left, h, w = _sample_block(rng, grid_h, grid_w, block_min, remaining, min_aspect)
            added = h * w - int(mask[top : top + h, left : left + w].sum())
            if added <= 0:
                continue
            if added <= remaining:
                best = (added, (top, left, h, w))
                break
            if best is None or added < best[0]:
                best = (added, (top, left, h, w))
        if best is None:
            continue
        top, left, h, w = best[1]
        mask[top : top + h, left : left + w] = True
        masked = int(mask.sum())
    positions = tuple(int(i) for i in np.flatnonzero(mask.reshape(-1)))
    return MaskPlan(image_positions=positions, ratios_used={"image": len(positions) / n if n else 0.0})


def plan_mvlm(
    tokens: TextTokens,
    n: int,
    grid_h: int,
    grid_w: int,
    rng: np.random.Generator,
    vocab_size: int,
    cfg: Optional[MaskingConfig] = None,
) -> MaskPlan:
    """Joint plan: 50% of text tokens and block-wise 40% of patches by default.

    An image mask ratio of zero leaves the image unmasked.
    """
    cfg = cfg or MaskingConfig()
    text = plan_text(
        tokens, rng, cfg.mvlm_text_ratio, vocab_size, cfg.mask_prob, cfg.random_prob, cfg.mvlm_text_actions
    )
    ratios: Dict[str, float] = {"text": len(text) / tokens.M} if tokens.M else {}
    image: Tuple[int, ...] = ()
    if cfg.image_mask_ratio > 0 and n > 0:
        block = plan_blockwise(n, grid_h, grid_w, cfg.image_mask_ratio, rng, cfg.block_min_area, cfg.block_min_aspect)
        image = block.image_positions
        ratios.update(block.ratios_used)
    return MaskPlan(text_positions=text, image_positions=image, ratios_used=ratios)


def plan_mim(n: int, grid_h: int, grid_w: int, rng: np.random.Generator, cfg: Optional[MaskingConfig] = None) -> MaskPlan:
    cfg = cfg or MaskingConfig()
    return plan_blockwise(n, grid_h, grid_w, cfg.image_mask_ratio, rng, cfg.block_min_area, cfg.block_min_aspect)


def action_counts(plans: List[MaskPlan]) -> Dict[MaskAction, int]:
    counts = {action: 0 for action in MaskAction}
    for plan in plans:
        for entry in plan.text_positions:
            counts[entry.action] += 1
    return counts
