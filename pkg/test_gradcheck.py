#!/usr/bin/env python3
"""
Tests for the finite-difference harness, including full MoME forwards
under the MVLM objective.
"""

import numpy as np
import pytest

from autograd import functional as F
from autograd.gradcheck import grad_check
from autograd.tensor import Tensor, numeric_mode
from backbone.model import MoMEModel
from backbone.mome import drop_path
from core.errors import ContractError
from models.configs import MaskingConfig, MoMEConfig
from pipeline.synthetic import DataTask, gen_synthetic
from pipeline.text import build_vocab, tokenize
from tasks.pretraining import mvlm_loss
from tokenizer.codebook import train_codebook


def test_square_at_three():
    x = Tensor([3.0], requires_grad=True, name="x", dtype=np.float64)
    report = grad_check(lambda: F.sum(x * x), [x], h=1e-4, tol=1e-6)
    assert report.passed
    assert report.params[0].max_rel_error < 1e-6
    assert report.params[0].checked_entries == 1


def test_cross_entropy_matmul_chain():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((6, 5)), requires_grad=True, name="w", dtype=np.float64)
    x = Tensor(rng.standard_normal((4, 6)), dtype=np.float64)
    targets = np.array([0, 4, 2, 2])
    report = grad_check(lambda: F.cross_entropy(F.matmul(x, w), targets), {"w": w}, h=1e-5, tol=1e-4)
    assert report.passed, report.table()
    assert "w" in report.table()


def test_stochastic_function_is_rejected():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((8, 3)), requires_grad=True, name="x", dtype=np.float64)
    draws = np.random.default_rng(1)
    with pytest.raises(ContractError, match="deterministic"):
        grad_check(lambda: F.sum(drop_path(x, 0.5, True, draws)), [x])


def test_float32_parameters_are_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True, name="x", dtype=np.float32)
    with pytest.raises(ContractError, match="float64"):
        grad_check(lambda: F.sum(x * x), [x])


def _mvlm_check(depth: int, max_entries: int):
    vocab = build_vocab()
    cfg = MoMEConfig(depth=depth, width=16, heads=2, ffn_mult=2, max_text_len=8, text_vocab_size=vocab.size, visual_vocab_size=8)
    examples = gen_synthetic(3, 2, DataTask.PAIRS, cfg.image_size)
    with numeric_mode(np.float64):
        model = MoMEModel.create(cfg, seed=3)
        noise = np.random.default_rng(5).random((64, cfg.patch_dim))
        codebook = train_codebook(noise, cfg.visual_vocab_size, 5, seed=3)
        pairs = [(model.clip(tokenize(e.text, vocab)), model.patchify(e.images[0])) for e in examples]

        def loss():
            value, _ = mvlm_loss(pairs, model, codebook, np.random.default_rng(11), MaskingConfig(), training=False)
            return value

        return grad_check(loss, model.params, h=1e-4, tol=1e-3, max_entries=max_entries, seed=0)


def test_one_block_mvlm_gradients():
    report = _mvlm_check(depth=1, max_entries=6)
    assert report.passed, report.table()
    assert {p.name for p in report.params} >= {"embed.word", "blocks.0.ffn.vision.w1", "blocks.0.ffn.language.w1", "mim_head.weight"}


@pytest.mark.slow
def test_two_block_mvlm_gradients():
    report = _mvlm_check(depth=2, max_entries=20)
    assert report.passed, report.table()
