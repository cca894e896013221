"""Mask planning and application."""

from .apply import MaskedInput, apply_mask
from .plans import MaskAction, MaskPlan, TextMaskEntry, mask_count, plan_blockwise, plan_mim, plan_mlm, plan_mvlm

__all__ = [
    "MaskAction",
    "MaskPlan",
    "MaskedInput",
    "TextMaskEntry",
    "apply_mask",
    "mask_count",
    "plan_blockwise",
    "plan_mim",
    "plan_mlm",
    "plan_mvlm",
]
