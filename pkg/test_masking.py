#!/usr/bin/env python3
"""
Tests for mask planning (text actions, block-wise image masks, joint
plans) and for applying a plan to an embedded input.
"""

import numpy as np
import pytest

from backbone.params import init_params
from core.errors import ContractError
from masking.apply import apply_mask
from masking.plans import (
    MaskAction,
    MaskPlan,
    TextMaskEntry,
    action_counts,
    mask_count,
    plan_blockwise,
    plan_mim,
    plan_mlm,
    plan_mvlm,
    plan_text,
)
from models.configs import MaskingConfig, MoMEConfig
from pipeline.images import RawImage, patchify
from pipeline.representations import build_image_repr, build_pair_repr, build_text_repr
from pipeline.text import NUM_SPECIALS, T_MASK, TextTokens, build_vocab

VOCAB_SIZE = build_vocab().size


def tokens(m: int) -> TextTokens:
    return TextTokens(ids=tuple(270 + (i % 20) for i in range(m)))


@pytest.fixture(scope="module")
def params():
    cfg = MoMEConfig(width=16, heads=2, text_vocab_size=VOCAB_SIZE)
    return init_params(cfg, np.random.default_rng(0))


@pytest.fixture(scope="module")
def grid():
    return patchify(RawImage(pixels=np.random.default_rng(1).random((32, 32, 3))), 8)


# Text plans


def test_mlm_counts():
    rng = np.random.default_rng(0)
    assert len(plan_mlm(tokens(20), rng, VOCAB_SIZE).text_positions) == 3
    assert len(plan_mlm(tokens(1), rng, VOCAB_SIZE).text_positions) == 1
    assert plan_mlm(tokens(0), rng, VOCAB_SIZE).is_empty
    assert mask_count(0.15, 20) == 3 and mask_count(0.5, 8) == 4 and mask_count(0.15, 0) == 0


def test_text_positions_skip_specials():
    rng = np.random.default_rng(2)
    for m in (1, 5, 14):
        plan = plan_mlm(tokens(m), rng, VOCAB_SIZE, MaskingConfig(mlm_ratio=0.9))
        assert all(1 <= e.position <= m for e in plan.text_positions)
        assert len({e.position for e in plan.text_positions}) == len(plan.text_positions)


def test_action_frequencies():
    rng = np.random.default_rng(3)
    plans = [MaskPlan(text_positions=plan_text(tokens(100), rng, 0.5, VOCAB_SIZE)) for _ in range(200)]
    counts = action_counts(plans)
    total = sum(counts.values())
    assert total == 10_000
    assert abs(counts[MaskAction.MASK] / total - 0.8) <= 0.02
    assert abs(counts[MaskAction.RANDOM] / total - 0.1) <= 0.02
    assert abs(counts[MaskAction.KEEP] / total - 0.1) <= 0.02


def test_random_replacements_avoid_specials():
    rng = np.random.default_rng(4)
    entries = [e for _ in range(200) for e in plan_text(tokens(30), rng, 0.5, VOCAB_SIZE)]
    replacements = [e.replacement_id for e in entries if e.action == MaskAction.RANDOM]
    assert replacements and all(NUM_SPECIALS <= r < VOCAB_SIZE for r in replacements)
    assert all(e.replacement_id == e.original_id for e in entries if e.action != MaskAction.RANDOM)


def test_actions_can_be_disabled():
    rng = np.random.default_rng(5)
    entries = plan_text(tokens(40), rng, 0.5, VOCAB_SIZE, actions=False)
    assert {e.action for e in entries} == {MaskAction.MASK}


# Image plans


def test_blockwise_quota():
    rng = np.random.default_rng(6)
    assert len(plan_blockwise(196, 14, 14, 0.4, rng).image_positions) >= 79
    for _ in range(50):
        plan = plan_blockwise(16, 4, 4, 0.4, rng)
        assert len(plan.image_positions) >= 7
        assert all(0 <= p < 16 for p in plan.image_positions)


def test_blockwise_grid_mismatch():
    with pytest.raises(ContractError):
        plan_blockwise(15, 4, 4, 0.4, np.random.default_rng(0))


def _adjacent_fraction(mask: np.ndarray) -> float:
    pairs = (mask[:, 1:] & mask[:, :-1]).sum() + (mask[1:, :] & mask[:-1, :]).sum()
    return pairs / max(1, mask.sum())


def test_blockwise_ratio_and_clustering():
    rng = np.random.default_rng(7)
    ratios, block_adj, uniform_adj = [], [], []
    for _ in range(2000):
        plan = plan_blockwise(16, 4, 4, 0.4, rng)
        mask = np.zeros(16, dtype=bool)
        mask[list(plan.image_positions)] = True
        ratios.append(plan.ratios_used["image"])
        block_adj.append(_adjacent_fraction(mask.reshape(4, 4)))
        uniform = np.zeros(16, dtype=bool)
        uniform[rng.choice(16, size=len(plan.image_positions), replace=False)] = True
        uniform_adj.append(_adjacent_fraction(uniform.reshape(4, 4)))
    assert 0.40 <= float(np.mean(ratios)) <= 0.60
    assert np.mean(block_adj) > np.mean(uniform_adj)


def test_mvlm_plan_halves():
    rng = np.random.default_rng(8)
    plan = plan_mvlm(tokens(8), 16, 4, 4, rng, VOCAB_SIZE)
    assert len(plan.text_positions) == 4
    assert len(plan.image_positions) >= 7
    assert set(plan.ratios_used) == {"text", "image"}


def test_mvlm_without_image_masking():
    plan = plan_mvlm(tokens(8), 16, 4, 4, np.random.default_rng(9), VOCAB_SIZE, MaskingConfig(image_mask_ratio=0.0))
    assert plan.image_positions == () and len(plan.text_positions) == 4


def test_plan_mim_uses_config():
    plan = plan_mim(16, 4, 4, np.random.default_rng(10), MaskingConfig(image_mask_ratio=0.75))
    assert len(plan.image_positions) >= 12


# Applying plans


def test_empty_plan_is_identity(params, grid):
    r = build_pair_repr(tokens(5), grid, params)
    masked = apply_mask(r, MaskPlan(), params)
    np.testing.assert_array_equal(masked.inputs.embeddings.data, r.embeddings.data)
    assert masked.text_rows == () and masked.image_rows == ()


def test_all_mask_plan(params):
    t = tokens(6)
    r = build_text_repr(t, params)
    entries = tuple(
        TextMaskEntry(position=p, action=MaskAction.MASK, original_id=t.ids[p - 1], replacement_id=t.ids[p - 1])
        for p in range(1, 7)
    )
    masked = apply_mask(r, MaskPlan(text_positions=entries), params)
    expected = params["embed.word"].data[T_MASK] + params["embed.text_pos"].data[1:7]
    np.testing.assert_allclose(masked.inputs.embeddings.data[1:7], expected, rtol=1e-6)
    np.testing.assert_array_equal(masked.inputs.embeddings.data[[0, 7]], r.embeddings.data[[0, 7]])
    assert masked.text_targets == t.ids


def test_keep_action_leaves_row_but_is_predicted(params):
    t = tokens(4)
    r = build_text_repr(t, params)
    entry = TextMaskEntry(position=2, action=MaskAction.KEEP, original_id=t.ids[1], replacement_id=t.ids[1])
    masked = apply_mask(r, MaskPlan(text_positions=(entry,)), params)
    np.testing.assert_array_equal(masked.inputs.embeddings.data, r.embeddings.data)
    assert masked.text_rows == (2,) and masked.text_targets == (t.ids[1],)


def test_one_masked_patch_changes_one_row(params, grid):
    r = build_image_repr(grid, params)
    masked = apply_mask(r, MaskPlan(image_positions=(5,)), params)
    diff = np.abs(masked.inputs.embeddings.data - r.embeddings.data).max(axis=1)
    assert np.flatnonzero(diff > 0).tolist() == [6]
    assert masked.image_rows == (6,) and masked.image_patches == (5,)


def test_pair_image_rows_are_offset(params, grid):
    r = build_pair_repr(tokens(3), grid, params)
    masked = apply_mask(r, MaskPlan(image_positions=(0, 15)), params)
    assert masked.image_rows == (5 + 1, 5 + 16)


def test_plans_never_touch_specials(params, grid):
    r = build_text_repr(tokens(3), params)
    for position in (0, 4):
        bad = TextMaskEntry(position=position, action=MaskAction.MASK, original_id=0, replacement_id=0)
        with pytest.raises(ContractError):
            apply_mask(r, MaskPlan(text_positions=(bad,)), params)
    with pytest.raises(ContractError):
        apply_mask(build_image_repr(grid, params), MaskPlan(image_positions=(16,)), params)
