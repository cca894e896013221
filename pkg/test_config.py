#!/usr/bin/env python3
"""
Tests for the flat ``key = value`` experiment configuration and its
conversion into the typed configs of each stage.
"""

from pathlib import Path

import pytest
from loguru import logger

from core.config import ExperimentConfig, echo_config, load_config, parse_config_lines, with_overrides
from core.errors import ConfigurationError
from models.configs import ExpertSet, FinetuneTaskName, PretrainTask


def write(tmp_path, text: str):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


def test_empty_file_gives_defaults(tmp_path):
    assert load_config(write(tmp_path, "")) == ExperimentConfig()
    assert load_config(None) == ExperimentConfig()


def test_comments_and_scientific_notation(tmp_path):
    cfg = load_config(write(tmp_path, "# desk run\npeak_lr = 2e-3   # peak\n\nsteps=10\n"))
    assert cfg.peak_lr == pytest.approx(0.002)
    assert cfg.steps == 10


def test_duplicate_key_warns_and_last_wins(tmp_path):
    messages = []
    sink = logger.add(messages.append, level="WARNING")
    try:
        cfg = load_config(write(tmp_path, "steps = 5\nsteps = 7\n"), ["steps=9"])
    finally:
        logger.remove(sink)
    assert cfg.steps == 9
    assert len(messages) == 2
    assert "line 1" in messages[0] and "override #1" in messages[1]


def test_unknown_key_names_the_line(tmp_path):
    with pytest.raises(ConfigurationError, match="line 2.*learning_rate"):
        load_config(write(tmp_path, "steps = 5\nlearning_rate = 1\n"))
    with pytest.raises(ConfigurationError, match="override #1"):
        load_config(None, ["bogus=1"])


def test_bad_value_and_missing_equals(tmp_path):
    with pytest.raises(ConfigurationError, match="line 1"):
        load_config(write(tmp_path, "steps = many\n"))
    with pytest.raises(ConfigurationError, match="line 1"):
        load_config(write(tmp_path, "steps 5\n"))
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.cfg")


def test_task_lists(tmp_path):
    cfg = load_config(write(tmp_path, "tasks = mvlm+MIM\n"))
    assert cfg.task_set == frozenset({PretrainTask.MVLM, PretrainTask.MIM})
    assert cfg.tasks == "MIM,MVLM"
    with pytest.raises(ConfigurationError):
        load_config(None, ["tasks=ITC"])
    with pytest.raises(ConfigurationError):
        load_config(None, ["tasks=,"])


def test_echo_round_trips(tmp_path):
    cfg = load_config(None, ["backbone=standard", "mvlm_text_actions=false", "peak_lr=5e-4", "tasks=MLM"])
    text = echo_config(cfg)
    assert "backbone = standard" in text and "mvlm_text_actions = false" in text
    assert load_config(write(tmp_path, text)) == cfg
    assert len(parse_config_lines(text.splitlines())) == len(ExperimentConfig.model_fields)


def test_default_task_list_is_canonical(tmp_path):
    assert ExperimentConfig().tasks == "MLM,MIM,MVLM"
    assert load_config(None) == load_config(None, ["tasks=MVLM,MLM,MIM"])
    defaults = load_config(None)
    assert load_config(write(tmp_path, echo_config(defaults))) == defaults


@pytest.mark.parametrize("name", ["desk.cfg", "smoke.cfg"])
def test_shipped_configs_echo_byte_stable(tmp_path, name):
    cfg = load_config(Path(__file__).parent / "configs" / name)
    text = echo_config(cfg)
    again = load_config(write(tmp_path, text))
    assert again == cfg
    assert echo_config(again) == text


def test_stage_configs():
    cfg = load_config(None, ["backbone=standard", "codebook_size=16", "finetune_steps=3", "finetune_warmup=1"])
    mome = cfg.mome_config(300)
    assert mome.expert_set == ExpertSet.STANDARD and mome.visual_vocab_size == 16 and mome.text_vocab_size == 300
    train = cfg.train_config()
    assert train.tasks == frozenset(PretrainTask) and train.masking.mlm_ratio == 0.15
    ft = cfg.finetune_config("retrieval")
    assert ft.task == FinetuneTaskName.RETRIEVAL and ft.steps == 3


def test_stage_validation_becomes_configuration_error():
    with pytest.raises(ConfigurationError):
        load_config(None, ["width=30", "heads=4"]).mome_config(300)
    with pytest.raises(ConfigurationError):
        load_config(None, ["warmup_steps=20", "steps=10"]).train_config()
    with pytest.raises(ConfigurationError):
        load_config(None, ["mask_prob=0.9", "random_prob=0.2"]).masking_config()
    with pytest.raises(ConfigurationError):
        ExperimentConfig().finetune_config("captioning")


def test_with_overrides():
    cfg = with_overrides(ExperimentConfig(), steps=3, warmup_steps=1)
    assert cfg.steps == 3
    with pytest.raises(ConfigurationError):
        with_overrides(cfg, steps="x")
