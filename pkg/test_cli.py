#!/usr/bin/env python3
"""
Tests for the command-line entry point: argument errors, exit codes and
the checkpoint inspector.
"""

from pathlib import Path

import numpy as np
import pytest

from backbone.model import MoMEModel
from main import build_parser, main, parameter_groups
from models.configs import MoMEConfig
from models.schemas import RunStatus
from pipeline.text import build_vocab
from training.checkpoint import save_checkpoint
from utils.run_manager import load_run

SMOKE = str(Path(__file__).parent / "configs" / "smoke.cfg")


def test_usage_errors_exit_one(tmp_path):
    assert main(["pretrain", "--no-such-flag"]) == 1
    assert main(["compress"]) == 1
    assert main([]) == 1
    assert main(["finetune", "captioning"]) == 1
    assert main(["eval", "vqa"]) == 1  # --checkpoint is required


def test_help_exits_zero():
    assert main(["--help"]) == 0


def test_configuration_errors_exit_one(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    assert main(["gen-data", "--override", "no_such_key=1", "--out", str(tmp_path)]) == 1


def test_gen_data(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", SMOKE, "--task", "vqa", "-n", "4", "--seed", "3", "--out", str(out)]) == 0
    assert (out / "vqa.tsv").is_file()
    record = load_run(out)
    assert record.status == RunStatus.COMPLETED and record.seed == 3


def test_parser_defaults():
    args = build_parser().parse_args(["grad-check"])
    assert args.tol == 1e-3 and args.max_entries == 12 and args.override == []


def test_parameter_groups():
    counts = parameter_groups(
        {
            "embed.word": np.zeros((5, 2)),
            "blocks.0.attn.q.weight": np.zeros((2, 2)),
            "blocks.0.ffn.vision.w1": np.zeros((2, 4)),
            "blocks.1.ffn.vision.b1": np.zeros(4),
        }
    )
    assert counts == {"blocks": 4, "embed": 10, "ffn.vision": 12}


def test_inspect_checkpoint(tmp_path, capsys):
    cfg = MoMEConfig(depth=1, width=16, heads=2, ffn_mult=2, max_text_len=8, text_vocab_size=build_vocab().size, visual_vocab_size=8)
    model = MoMEModel.create(cfg, seed=0)
    path = save_checkpoint(tmp_path / "ckpt.bin", model.state_arrays(), heads={"cls.weight": np.zeros((16, 12))})
    assert main(["inspect-checkpoint", str(path)]) == 0
    out = capsys.readouterr().out
    assert f"parameters\t{model.num_parameters()}" in out
    assert "params/ffn.language" in out and "params/ffn.vision" in out
    assert "heads/cls.weight\t16x12" in out


def test_inspect_corrupted_checkpoint_fails(tmp_path):
    path = tmp_path / "broken.bin"
    path.write_bytes(b"VLBT\x01\x00")
    assert main(["inspect-checkpoint", str(path)]) == 2


@pytest.mark.slow
def test_grad_check_command(tmp_path, capsys):
    assert main(["grad-check", "--max-entries", "2", "--out", str(tmp_path)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert (tmp_path / "grad_check.txt").is_file()
