#!/usr/bin/env python3
"""
End-to-end tests of the run workflows on the smoke configuration, plus the
run directory bookkeeping.
"""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from core.config import load_config, with_overrides
from core.errors import FormatError
from core.workflow import (
    CHECKPOINT_FILE,
    AblationWorkflow,
    EvalWorkflow,
    FinetuneWorkflow,
    GenerateDataWorkflow,
    PretrainWorkflow,
    TokenizerWorkflow,
)
from models.schemas import RunStatus
from training.checkpoint import load_checkpoint
from utils.file_handlers import read_dataset
from utils.run_manager import CONFIG_FILE, METRICS_FILE, SEED_FILE, RunManager, load_run

SMOKE = Path(__file__).parent / "configs" / "smoke.cfg"


@pytest.fixture(scope="module")
def smoke():
    return load_config(SMOKE)


@pytest.fixture(scope="module")
def pretrained(smoke, tmp_path_factory):
    out = tmp_path_factory.mktemp("pretrain")
    path = PretrainWorkflow(smoke, out, ["pretrain"]).run()
    return out, path


# Run bookkeeping


def test_run_manager_lifecycle(tmp_path, smoke):
    manager = RunManager(tmp_path / "run")
    record = manager.create_run("gen-data", 7, smoke, ["gen-data"], metrics=False)
    assert record.status == RunStatus.PENDING
    for name in (CONFIG_FILE, SEED_FILE):
        assert (tmp_path / "run" / name).is_file()
    assert load_config(tmp_path / "run" / CONFIG_FILE) == smoke

    manager.update_status(RunStatus.RUNNING, current_step=3)
    manager.set_metrics("held_out", {"gap": 0.25})
    manager.update_status(RunStatus.COMPLETED)
    stored = load_run(tmp_path / "run")
    assert stored.status == RunStatus.COMPLETED
    assert stored.current_step == 3 and stored.completed_at is not None
    assert stored.metrics["held_out"]["gap"] == 0.25
    manager.close()


def test_generate_data(tmp_path, smoke):
    path = GenerateDataWorkflow(smoke, tmp_path, []).run(task="nlvr", n=5)
    assert path.name == "nlvr.tsv"
    assert [r.index for r in read_dataset(path)] == [0, 1, 2, 3, 4]
    assert load_run(tmp_path).artifacts["dataset"] == "nlvr.tsv"


def test_tokenizer(tmp_path, smoke):
    codebook = TokenizerWorkflow(smoke, tmp_path, []).run()
    assert codebook.K == 8
    stored = load_checkpoint(tmp_path / "codebook.bin")
    assert stored.params == {} and stored.codebook.fingerprint == codebook.fingerprint
    metrics = load_run(tmp_path).metrics["tokenizer"]
    assert metrics["final_error"] <= metrics["initial_error"]


# Pretraining


def test_pretrain_outputs(pretrained, smoke):
    out, path = pretrained
    ckpt = load_checkpoint(path)
    assert ckpt.step == smoke.steps and ckpt.codebook is not None
    record = load_run(out)
    assert record.status == RunStatus.COMPLETED
    assert record.current_step == smoke.steps
    for key in ("final_total_loss", "probe_true_image", "probe_noise_image", "probe_gap"):
        assert key in record.metrics["pretrain"]
    lines = (out / METRICS_FILE).read_text(encoding="utf-8").splitlines()
    assert lines[0].split("\t")[:2] == ["0", "total"]
    assert {line.split("\t")[1] for line in lines} >= {"total", "MLM", "MIM", "MVLM", "MVLM.text", "MVLM.image"}
    assert (out / "pretrain_eval.tsv").is_file()


def test_pretrain_with_stored_codebook(tmp_path, smoke):
    codebook = TokenizerWorkflow(smoke, tmp_path / "tok", []).run()
    cfg = with_overrides(smoke, steps=2, warmup_steps=1, probe_size=0)
    path = PretrainWorkflow(cfg, tmp_path / "pre", []).run(codebook_path=tmp_path / "tok" / "codebook.bin")
    np.testing.assert_array_equal(load_checkpoint(path).codebook.centroids, codebook.centroids)


def test_mlm_only_pretraining_needs_no_codebook(tmp_path, smoke):
    cfg = with_overrides(smoke, tasks="MLM", steps=2, warmup_steps=1)
    ckpt = load_checkpoint(PretrainWorkflow(cfg, tmp_path, []).run())
    assert ckpt.codebook is None
    assert "mlm_accuracy" in load_run(tmp_path).metrics["pretrain"]


@pytest.mark.slow
def test_resumed_pretraining_matches_straight_run(tmp_path, smoke):
    cfg = with_overrides(smoke, checkpoint_every=3, probe_size=0)
    straight = load_checkpoint(PretrainWorkflow(cfg, tmp_path / "straight", []).run())
    intermediate = tmp_path / "straight" / "checkpoint_step3.bin"
    assert load_checkpoint(intermediate).step == 3
    resumed = load_checkpoint(PretrainWorkflow(cfg, tmp_path / "resumed", []).run(resume=intermediate))
    assert resumed.step == straight.step
    for name, value in straight.params.items():
        np.testing.assert_allclose(resumed.params[name], value, rtol=1e-6, atol=1e-7)


# Finetuning and evaluation


def test_finetune_then_eval_agree(pretrained, smoke, tmp_path):
    _, checkpoint = pretrained
    report = FinetuneWorkflow(smoke, tmp_path / "ft", []).run(task="vqa", checkpoint=checkpoint)
    assert set(report.metrics) == {"accuracy"}
    finetuned = load_checkpoint(tmp_path / "ft" / CHECKPOINT_FILE)
    assert "cls.weight" in finetuned.heads and finetuned.codebook is not None
    assert (tmp_path / "ft" / "eval_vqa.tsv").is_file()

    again = EvalWorkflow(smoke, tmp_path / "eval", []).run(target="vqa", checkpoint=tmp_path / "ft" / CHECKPOINT_FILE)
    assert again.metrics["accuracy"] == pytest.approx(report.metrics["accuracy"])


def test_finetune_from_scratch_retrieval(smoke, tmp_path):
    report = FinetuneWorkflow(smoke, tmp_path, []).run(task="retrieval")
    assert {"ir_recall@1", "tr_recall@1"} <= set(report.metrics)
    assert load_run(tmp_path).metrics["retrieval"] == report.metrics


def test_eval_pretrain(pretrained, smoke, tmp_path):
    _, checkpoint = pretrained
    report = EvalWorkflow(smoke, tmp_path, []).run(target="pretrain", checkpoint=checkpoint)
    assert "probe_gap" in report.metrics
    text = (tmp_path / "eval_pretrain.tsv").read_text(encoding="utf-8")
    assert "probe_gap" in text


def test_failed_run_is_recorded(smoke, tmp_path):
    with pytest.raises(FormatError):
        FinetuneWorkflow(smoke, tmp_path, []).run(task="nlvr", checkpoint=tmp_path / "absent.bin")
    record = load_run(tmp_path)
    assert record.status == RunStatus.FAILED
    assert "absent.bin" in record.error_message


@pytest.mark.slow
def test_ablation_single_row(smoke, tmp_path):
    cfg = with_overrides(smoke, probe_size=0)
    table = AblationWorkflow(cfg, tmp_path, []).run(rows=["standard_mvlm"])
    assert isinstance(table, pd.DataFrame)
    assert table["name"].tolist() == ["standard_mvlm"]
    assert {"nlvr_accuracy", "retrieval_ir_recall@1"} <= set(table.columns)
    stored = pd.read_csv(tmp_path / "ablation_summary.tsv", sep="\t")
    assert stored["backbone"].tolist() == ["standard"]
    assert load_run(tmp_path / "standard_mvlm" / "pretrain").status == RunStatus.COMPLETED


# Desk-scale quality (minutes of CPU each)

DESK = Path(__file__).parent / "configs" / "desk.cfg"


@pytest.fixture(scope="module")
def desk_pretrained(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    return out, PretrainWorkflow(load_config(DESK), out, []).run()


@pytest.mark.slow
def test_desk_pretraining_opens_a_cross_modal_gap(desk_pretrained):
    out, _ = desk_pretrained
    assert load_run(out).metrics["pretrain"]["probe_gap"] >= 0.10


@pytest.mark.slow
def test_desk_vqa_accuracy(desk_pretrained, tmp_path):
    _, checkpoint = desk_pretrained
    report = FinetuneWorkflow(load_config(DESK), tmp_path, []).run(task="vqa", checkpoint=checkpoint)
    assert report.metrics["accuracy"] >= 0.9


@pytest.mark.slow
def test_desk_retrieval_recall_both_directions(desk_pretrained, tmp_path):
    _, checkpoint = desk_pretrained
    report = FinetuneWorkflow(load_config(DESK), tmp_path, []).run(task="retrieval", checkpoint=checkpoint)
    assert report.metrics["ir_recall@1"] >= 0.9
    assert report.metrics["tr_recall@1"] >= 0.9


@pytest.mark.slow
def test_desk_image_classification_beats_random_init(desk_pretrained, tmp_path):
    _, checkpoint = desk_pretrained
    cfg = load_config(DESK)
    pretrained = FinetuneWorkflow(cfg, tmp_path / "pretrained", []).run(task="imgcls", checkpoint=checkpoint)
    scratch = FinetuneWorkflow(cfg, tmp_path / "scratch", []).run(task="imgcls")
    assert pretrained.metrics["accuracy"] >= 0.9
    assert pretrained.metrics["accuracy"] > scratch.metrics["accuracy"]
