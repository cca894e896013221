#!/usr/bin/env python3
"""
Tests for the MoME backbone: attention masking, modality routing,
stochastic depth, encoding shapes and the parameter census.
"""

import math
from pathlib import Path

import numpy as np
import pytest
from scipy.special import ndtr

from autograd import functional as F
from autograd.tensor import Tensor, numeric_mode
from backbone.model import MoMEModel
from backbone.mome import attention, drop_path, drop_path_rates, expert_ffn, mome_block, route_ffn
from backbone.params import census, count_params, expert_for, init_params, param_shapes
from core.config import load_config
from core.errors import ConfigurationError, ContractError
from models.configs import ExpertSet, MoMEConfig
from pipeline.images import RawImage
from pipeline.representations import Modality
from pipeline.text import TextTokens, build_vocab

VOCAB_SIZE = build_vocab().size


def small_cfg(**overrides) -> MoMEConfig:
    values = dict(depth=2, width=16, heads=2, ffn_mult=2, max_text_len=12, text_vocab_size=VOCAB_SIZE, visual_vocab_size=8)
    values.update(overrides)
    return MoMEConfig(**values)


@pytest.fixture(scope="module")
def model():
    with numeric_mode(np.float64):
        return MoMEModel.create(small_cfg(), seed=1)


def image(seed: int) -> RawImage:
    return RawImage(pixels=np.random.default_rng(seed).random((32, 32, 3)))


# Four text positions followed by five image positions.
PAIR_TAGS = np.array([[0, 0, 0, 0, 1, 1, 1, 1, 1]], dtype=np.int8)


def random_params(cfg: MoMEConfig, seed: int, scale: float = 0.3):
    rng = np.random.default_rng(seed)
    return {name: Tensor(scale * rng.standard_normal(shape), dtype=np.float64) for name, shape in param_shapes(cfg)}


def shifted(params, expert: str, block: int = 0, delta: float = 0.5):
    """Copy of ``params`` with one block's expert moved by ``delta``."""
    out = dict(params)
    for name, p in params.items():
        if name.startswith(f"blocks.{block}.ffn.{expert}."):
            out[name] = Tensor(p.data + delta, dtype=np.float64)
    return out


def features(seed: int, *shape: int) -> Tensor:
    return Tensor(np.random.default_rng(seed).standard_normal(shape), dtype=np.float64)


# Attention


def test_padded_keys_get_zero_weight():
    rng = np.random.default_rng(0)
    cfg = small_cfg()
    with numeric_mode(np.float64):
        params = init_params(cfg, rng)
        x = Tensor(rng.standard_normal((2, 5, 16)))
    valid = np.array([[True, True, True, False, False], [True] * 5])
    _, weights = attention(x, valid, params, "blocks.0.attn", cfg.heads, return_weights=True)
    assert weights.shape == (2, 2, 5, 5)
    np.testing.assert_array_equal(weights.data[0, :, :, 3:], 0.0)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, rtol=1e-12)


def test_attention_needs_a_valid_position():
    cfg = small_cfg()
    params = init_params(cfg, np.random.default_rng(0))
    with pytest.raises(ContractError):
        attention(Tensor(np.zeros((1, 3, 16))), np.zeros((1, 3), dtype=bool), params, "blocks.0.attn", cfg.heads)


def test_single_position_attends_only_to_itself():
    cfg = small_cfg()
    params = random_params(cfg, seed=2)
    x = features(3, 1, 1, 16)
    out, weights = attention(x, np.ones((1, 1), dtype=bool), params, "blocks.0.attn", cfg.heads, return_weights=True)
    assert weights.shape == (1, 2, 1, 1)
    np.testing.assert_array_equal(weights.data, 1.0)
    a = {name: p.data for name, p in params.items()}
    values = x.data[0] @ a["blocks.0.attn.v.weight"] + a["blocks.0.attn.v.bias"]
    expected = values @ a["blocks.0.attn.o.weight"] + a["blocks.0.attn.o.bias"]
    np.testing.assert_allclose(out.data[0], expected, rtol=1e-12, atol=1e-12)


def test_padding_does_not_change_valid_rows(model):
    short = model.text_repr(TextTokens(ids=(270, 271)))
    long = model.pair_repr(TextTokens(ids=(272, 273, 274)), model.patchify(image(0)))
    alone = model.encode(short).data
    batched = model.encode_batch([short, long])
    np.testing.assert_allclose(batched.hidden.data[0, : short.length], alone, atol=1e-10)
    assert batched.valid[0].tolist() == [True] * short.length + [False] * (long.length - short.length)


# Routing


def test_text_input_ignores_vision_expert(model):
    tokens = TextTokens(ids=(270, 275, 280))
    before = model.encode(model.text_repr(tokens)).data
    perturbed = MoMEModel(model.cfg, dict(model.params))
    for name in [n for n in model.params if ".ffn.vision." in n]:
        perturbed.params[name] = Tensor(model.params[name].data + 1.0)
    np.testing.assert_array_equal(perturbed.encode(perturbed.text_repr(tokens)).data, before)
    # Image inputs do go through the vision expert.
    grid = model.patchify(image(1))
    assert not np.allclose(perturbed.encode(perturbed.image_repr(grid)).data, model.encode(model.image_repr(grid)).data)


def test_expert_routes():
    mome, standard = small_cfg(), small_cfg(expert_set=ExpertSet.STANDARD)
    assert expert_for(mome, Modality.TEXT) == "language"
    assert expert_for(mome, Modality.IMAGE) == "vision"
    assert expert_for(standard, Modality.TEXT) == expert_for(standard, Modality.IMAGE) == "shared"
    with pytest.raises(ConfigurationError):
        expert_for(mome, 7)


@pytest.mark.parametrize("changed, untouched", [("vision", Modality.TEXT), ("language", Modality.IMAGE)])
def test_pair_block_keeps_experts_apart(changed, untouched):
    cfg = small_cfg()
    params = random_params(cfg, seed=4)
    other = shifted(params, changed)
    x = features(5, 1, 9, 16)
    valid = np.ones((1, 9), dtype=bool)
    same = PAIR_TAGS[0] == int(untouched)

    before = route_ffn(x, PAIR_TAGS, params, "blocks.0", cfg).data[0]
    after = route_ffn(x, PAIR_TAGS, other, "blocks.0", cfg).data[0]
    np.testing.assert_array_equal(after[same], before[same])
    assert not np.allclose(after[~same], before[~same])

    before = mome_block(x, PAIR_TAGS, valid, params, 0, cfg).data[0]
    after = mome_block(x, PAIR_TAGS, valid, other, 0, cfg).data[0]
    np.testing.assert_array_equal(after[same], before[same])
    assert not np.allclose(after[~same], before[~same])


def test_text_expert_update_reaches_image_rows_through_attention(model):
    pair = model.pair_repr(TextTokens(ids=(270, 275, 280)), model.patchify(image(4)))
    image_rows = pair.modality_tags == int(Modality.IMAGE)
    before = model.encode(pair).data
    other = MoMEModel(model.cfg, shifted(model.params, "language", block=0))
    after = other.encode(pair).data
    assert image_rows.sum() == pair.image_len and not image_rows[: pair.text_len].any()
    assert np.abs(after[image_rows] - before[image_rows]).max() > 1e-6


# Blocks


def reference_block(x: np.ndarray, tags: np.ndarray, a, cfg: MoMEConfig) -> np.ndarray:
    """Block 0 on one unpadded sequence, written out in plain numpy."""

    def norm(v, name):
        mu = v.mean(axis=-1, keepdims=True)
        var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + cfg.ln_eps) * a[f"{name}.weight"] + a[f"{name}.bias"]

    def proj(v, name):
        return v @ a[f"{name}.weight"] + a[f"{name}.bias"]

    hd = cfg.width // cfg.heads
    h = norm(x, "blocks.0.norm1")
    q, k, v = (proj(h, f"blocks.0.attn.{n}") for n in "qkv")
    heads = []
    for i in range(cfg.heads):
        cols = slice(i * hd, (i + 1) * hd)
        scores = q[:, cols] @ k[:, cols].T / math.sqrt(hd)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        heads.append(w / w.sum(axis=1, keepdims=True) @ v[:, cols])
    x = x + proj(np.concatenate(heads, axis=1), "blocks.0.attn.o")

    h = norm(x, "blocks.0.norm2")
    out = x.copy()
    for row, tag in enumerate(tags):
        e = "blocks.0.ffn." + ("language" if int(tag) == int(Modality.TEXT) else "vision")
        z = h[row] @ a[f"{e}.w1"] + a[f"{e}.b1"]
        out[row] += (z * ndtr(z)) @ a[f"{e}.w2"] + a[f"{e}.b2"]
    return out


def test_block_matches_plain_numpy():
    cfg = small_cfg(depth=1)
    params = random_params(cfg, seed=8)
    x = features(9, 1, 9, 16)
    got = mome_block(x, PAIR_TAGS, np.ones((1, 9), dtype=bool), params, 0, cfg).data[0]
    expected = reference_block(x.data[0], PAIR_TAGS[0], {n: p.data for n, p in params.items()}, cfg)
    np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-12)


def test_block_with_zero_output_projections_is_identity():
    cfg = small_cfg()
    params = random_params(cfg, seed=6)
    for name in list(params):
        if name.startswith("blocks.0.") and (".attn.o." in name or name.endswith((".w2", ".b2"))):
            params[name] = Tensor(np.zeros_like(params[name].data), dtype=np.float64)
    x = features(7, 2, 9, 16)
    valid = np.ones((2, 9), dtype=bool)
    valid[1, 6:] = False
    tags = np.vstack([PAIR_TAGS, PAIR_TAGS])
    np.testing.assert_array_equal(mome_block(x, tags, valid, params, 0, cfg).data, x.data)


def vanilla_encode(x: Tensor, valid: np.ndarray, params, cfg: MoMEConfig) -> Tensor:
    """Pre-norm Transformer over the same weights with one feed-forward for every position."""
    b, length, d = x.shape
    for layer in range(cfg.depth):
        p = f"blocks.{layer}"
        h = F.layer_norm(x, params[f"{p}.norm1.weight"], params[f"{p}.norm1.bias"], cfg.ln_eps)
        x = F.add(x, attention(h, valid, params, f"{p}.attn", cfg.heads))
        h = F.layer_norm(x, params[f"{p}.norm2.weight"], params[f"{p}.norm2.bias"], cfg.ln_eps)
        ffn = expert_ffn(F.reshape(h, (b * length, d)), params, f"{p}.ffn.shared")
        x = F.add(x, F.reshape(ffn, (b, length, d)))
    return F.layer_norm(x, params["final_norm.weight"], params["final_norm.bias"], cfg.ln_eps)


def test_standard_text_encoding_equals_vanilla_transformer():
    cfg = small_cfg(expert_set=ExpertSet.STANDARD)
    with numeric_mode(np.float64):
        standard = MoMEModel.create(cfg, seed=3)
    r = standard.text_repr(TextTokens(ids=(270, 271, 285, 290)))
    x = F.pad_stack([r.embeddings], r.length)
    expected = vanilla_encode(x, r.valid.reshape(1, -1), standard.params, cfg).data[0]
    np.testing.assert_array_equal(standard.encode(r).data, expected)


# Stochastic depth


def test_drop_path_is_identity_when_off():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 3, 2)))
    assert drop_path(x, 0.0, True, np.random.default_rng(1)) is x
    assert drop_path(x, 0.5, False, None) is x
    with pytest.raises(ContractError):
        drop_path(x, 0.5, True, None)


def test_drop_path_zeroes_whole_examples():
    x = Tensor(np.ones((2000, 3)), dtype=np.float64)
    out = drop_path(x, 0.25, True, np.random.default_rng(2)).data
    per_example = out[:, 0]
    assert np.all(np.isclose(per_example, 0.0) | np.isclose(per_example, 1 / 0.75))
    assert (out == out[:, :1]).all()
    assert per_example.mean() == pytest.approx(1.0, abs=0.05)


def test_drop_path_rates_rise_linearly():
    np.testing.assert_allclose(drop_path_rates(small_cfg(depth=3, drop_path_rate=0.1)), [0.0, 0.05, 0.1])


def test_eval_encoding_is_deterministic(model):
    r = model.pair_repr(TextTokens(ids=(270,)), model.patchify(image(2)))
    np.testing.assert_array_equal(model.encode(r).data, model.encode(r).data)


# Shapes


def test_encoding_shapes(model):
    grid = model.patchify(image(3))
    tokens = TextTokens(ids=(270, 271, 272))
    assert model.encode(model.image_repr(grid)).shape == (17, 16)
    assert model.encode(model.text_repr(tokens)).shape == (5, 16)
    batch = model.encode_batch([model.pair_repr(tokens, grid), model.image_repr(grid)])
    assert batch.hidden.shape == (2, 22, 16)
    assert batch.first_rows().shape == (2, 16)
    assert batch.mean_pool().shape == (2, 16)
    np.testing.assert_array_equal(batch.image_cls_rows().data[0], batch.hidden.data[0, 5])
    assert model.mlm_logits(batch.first_rows()).shape == (2, VOCAB_SIZE)
    assert model.mim_logits(batch.first_rows()).shape == (2, 8)


def test_encode_batch_rejects_empty_and_wrong_size(model):
    with pytest.raises(ContractError):
        model.encode_batch([])
    with pytest.raises(ConfigurationError):
        model.patchify(RawImage(pixels=np.zeros((16, 16, 3))))


# Parameters


@pytest.mark.parametrize(
    "overrides",
    [{}, {"expert_set": ExpertSet.STANDARD}, {"separate_pair_text_pos": True}, {"depth": 3, "ffn_mult": 4}],
)
def test_census_matches_parameter_count(overrides):
    cfg = small_cfg(**overrides)
    params = init_params(cfg, np.random.default_rng(0))
    assert census(cfg)["total"] == count_params(params)
    assert [name for name, _ in param_shapes(cfg)] == list(params)


def test_mome_adds_one_expert_per_block():
    mome, standard = census(small_cfg()), census(small_cfg(expert_set=ExpertSet.STANDARD))
    d, f = 16, 32
    assert mome["total"] - standard["total"] == 2 * (d * f + f + f * d + d)


def test_initialisation():
    cfg = small_cfg(width=64, heads=4)
    params = init_params(cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(params["blocks.0.norm1.weight"].data, 1.0)
    np.testing.assert_array_equal(params["blocks.1.attn.q.bias"].data, 0.0)
    word = params["embed.word"].data
    assert np.abs(word).max() <= 2 * cfg.init_std + 1e-7
    assert word.std() == pytest.approx(cfg.init_std * 0.88, rel=0.1)


def test_same_seed_same_model():
    a, b = MoMEModel.create(small_cfg(), seed=5), MoMEModel.create(small_cfg(), seed=5)
    for name, p in a.named_parameters():
        np.testing.assert_array_equal(p.data, b.params[name].data)


def test_from_arrays_checks_names_and_shapes(model):
    arrays = model.state_arrays()
    rebuilt = MoMEModel.from_arrays(model.cfg, arrays)
    assert rebuilt.num_parameters() == model.num_parameters()
    missing = {k: v for k, v in arrays.items() if k != "mlm_head.bias"}
    with pytest.raises(ConfigurationError, match="mlm_head.bias"):
        MoMEModel.from_arrays(model.cfg, missing)
    with pytest.raises(ConfigurationError):
        MoMEModel.from_arrays(small_cfg(width=32, heads=2), arrays)


def test_desk_census_matches_hand_count():
    cfg = load_config(Path(__file__).parent / "configs" / "desk.cfg")
    mome = cfg.mome_config(VOCAB_SIZE)
    assert VOCAB_SIZE == 301
    # embeddings 33_792, two blocks of 83_072, final norm 128, MLM head 19_565, MIM head 2_080
    assert census(mome)["total"] == 221_709
    assert MoMEModel.create(mome, seed=0).num_parameters() == 221_709
    standard = mome.model_copy(update={"expert_set": ExpertSet.STANDARD})
    assert census(standard)["total"] == 155_533
