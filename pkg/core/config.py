"""Configuration for the masked vision-language pretraining stack.

Two layers of configuration live here.

- ``Settings`` (pydantic-settings) holds process-level knobs read from the
  environment or a ``.env`` file. Every variable carries the ``VLBT_`` prefix:
  ``VLBT_THREADS`` caps the worker pool, ``VLBT_LOG_LEVEL`` and ``VLBT_LOG_FILE``
  configure loguru, ``VLBT_OUTPUT_ROOT`` is the default parent of run directories.
  Priority: environment > ``.env`` > defaults.

- ``ExperimentConfig`` is the full, flat record of a run. It is read from a
  line-based ``key = value`` file by ``load_config``; ``--override key=value``
  items are applied afterwards, in order, so later values win. Unknown keys are
  rejected and every effective value can be echoed back with ``echo_config``.

Example config file::

    # desk-scale pretraining, MVLM only
    tasks = MVLM
    peak_lr = 2e-3
    steps = 2000

How to use in code:
- from core.config import settings, load_config
- cfg = load_config(Path("configs/desk.cfg"), ["steps=10"])
- cfg.mome_config(vocab.size), cfg.train_config(), cfg.finetune_config("vqa")
"""

import os
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.errors import ConfigurationError
from models.configs import (
    ExpertSet,
    FinetuneConfig,
    FinetuneTaskName,
    MaskingConfig,
    MoMEConfig,
    PretrainTask,
    TrainConfig,
)

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_prefix="VLBT_", env_file=".env", env_file_encoding="utf-8", extra="ignore")

    app_name: str = "maskpredict"
    app_version: str = "0.1.0"

    # Worker pool
    threads: int = Field(default_factory=lambda: min(8, os.cpu_count() or 1), ge=1)

    # Logging Settings
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Output
    output_root: Path = Path("runs")


# Global settings instance
settings = Settings()


def parse_task_list(value: str) -> FrozenSet[PretrainTask]:
    """Parse ``MVLM,MIM`` / ``MVLM+MIM`` into a task set."""
    names = [part.strip().upper() for part in value.replace("+", ",").split(",") if part.strip()]
    try:
        return frozenset(PretrainTask(name) for name in names)
    except ValueError as e:
        raise ValueError(f"unknown pretraining task in '{value}'") from e


class ExperimentConfig(BaseModel):
    """Every tunable of a run, flat so it can round-trip through ``key = value`` text."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0

    # Backbone
    depth: int = 2
    width: int = 64
    heads: int = 4
    ffn_mult: int = 4
    backbone: ExpertSet = ExpertSet.MOME
    drop_path_rate: float = 0.1
    ln_eps: float = 1e-6
    init_std: float = 0.02
    separate_pair_text_pos: bool = False

    # Inputs
    image_size: int = 32
    patch_size: int = 8
    max_text_len: int = 16

    # Visual tokenizer
    codebook_size: int = 32
    codebook_iters: int = 20
    codebook_images: int = 256

    # Pretraining
    tasks: str = Field(default="MLM,MIM,MVLM", validate_default=True)
    steps: int = 2000
    warmup_steps: int = 100
    peak_lr: float = 2e-3
    weight_decay: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_images: int = 8
    batch_texts: int = 8
    batch_pairs: int = 8
    pretrain_pool: int = 1024
    mlm_weight: float = 1.0
    mim_weight: float = 1.0
    mvlm_weight: float = 1.0
    mvlm_text_weight: float = 1.0
    mvlm_image_weight: float = 1.0
    log_every: int = 10
    checkpoint_every: int = 0
    probe_size: int = 128

    # Masking
    mlm_ratio: float = 0.15
    mvlm_text_ratio: float = 0.5
    image_mask_ratio: float = 0.4
    mask_prob: float = 0.8
    random_prob: float = 0.1
    mvlm_text_actions: bool = True
    block_min_area: int = 4
    block_min_aspect: float = 0.3

    # Finetuning
    finetune_steps: int = 500
    finetune_batch: int = 16
    finetune_lr: float = 1e-3
    finetune_warmup: int = 50
    finetune_weight_decay: float = 0.05
    finetune_train_size: int = 512
    finetune_eval_size: int = 128
    retrieval_eval_size: int = 64
    rerank_k: int = 8
    embed_dim: int = 64
    itc_temperature: float = 0.07

    @field_validator("tasks")
    @classmethod
    def _normalize_tasks(cls, value: str) -> str:
        tasks = parse_task_list(value)
        if not tasks:
            raise ValueError("at least one pretraining task must be enabled")
        return ",".join(task.value for task in PretrainTask if task in tasks)

    @property
    def task_set(self) -> FrozenSet[PretrainTask]:
        return parse_task_list(self.tasks)

    def mome_config(self, text_vocab_size: int) -> MoMEConfig:
        """Backbone architecture for a text vocabulary of the given size."""
        try:
            return MoMEConfig(
                depth=self.depth,
                width=self.width,
                heads=self.heads,
                ffn_mult=self.ffn_mult,
                expert_set=self.backbone,
                drop_path_rate=self.drop_path_rate,
                ln_eps=self.ln_eps,
                init_std=self.init_std,
                image_size=self.image_size,
                patch_size=self.patch_size,
                max_text_len=self.max_text_len,
                separate_pair_text_pos=self.separate_pair_text_pos,
                text_vocab_size=text_vocab_size,
                visual_vocab_size=self.codebook_size,
            )
        except ValidationError as e:
            raise ConfigurationError(f"invalid backbone configuration: {e}") from e

    def masking_config(self) -> MaskingConfig:
        try:
            return MaskingConfig(
                mlm_ratio=self.mlm_ratio,
                mvlm_text_ratio=self.mvlm_text_ratio,
                image_mask_ratio=self.image_mask_ratio,
                mask_prob=self.mask_prob,
                random_prob=self.random_prob,
                mvlm_text_actions=self.mvlm_text_actions,
                block_min_area=self.block_min_area,
                block_min_aspect=self.block_min_aspect,
            )
        except ValidationError as e:
            raise ConfigurationError(f"invalid masking configuration: {e}") from e

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                steps=self.steps,
                batch_images=self.batch_images,
                batch_texts=self.batch_texts,
                batch_pairs=self.batch_pairs,
                peak_lr=self.peak_lr,
                warmup_steps=self.warmup_steps,
                weight_decay=self.weight_decay,
                beta1=self.adam_beta1,
                beta2=self.adam_beta2,
                eps=self.adam_eps,
                seed=self.seed,
                tasks=self.task_set,
                mlm_weight=self.mlm_weight,
                mim_weight=self.mim_weight,
                mvlm_weight=self.mvlm_weight,
                mvlm_text_weight=self.mvlm_text_weight,
                mvlm_image_weight=self.mvlm_image_weight,
                masking=self.masking_config(),
            )
        except ValidationError as e:
            raise ConfigurationError(f"invalid training configuration: {e}") from e

    def finetune_config(self, task: str) -> FinetuneConfig:
        try:
            return FinetuneConfig(
                task=FinetuneTaskName(task),
                steps=self.finetune_steps,
                batch_size=self.finetune_batch,
                peak_lr=self.finetune_lr,
                warmup_steps=self.finetune_warmup,
                weight_decay=self.finetune_weight_decay,
                beta1=self.adam_beta1,
                beta2=self.adam_beta2,
                eps=self.adam_eps,
                seed=self.seed,
                train_size=self.finetune_train_size,
                eval_size=self.finetune_eval_size,
                retrieval_eval_size=self.retrieval_eval_size,
                rerank_k=self.rerank_k,
                embed_dim=self.embed_dim,
                init_temperature=self.itc_temperature,
            )
        except (ValidationError, ValueError) as e:
            raise ConfigurationError(f"invalid finetuning configuration for '{task}': {e}") from e


def _split_assignment(text: str, where: str) -> Tuple[str, str]:
    if "=" not in text:
        raise ConfigurationError(f"{where}: expected 'key = value', got '{text}'")
    key, value = text.split("=", 1)
    key, value = key.strip(), value.strip()
    if not key:
        raise ConfigurationError(f"{where}: missing key in '{text}'")
    if key not in ExperimentConfig.model_fields:
        raise ConfigurationError(f"{where}: unknown configuration key '{key}'")
    return key, value


def parse_config_lines(lines: Iterable[str], source: str = "<config>") -> List[Tuple[str, str, str]]:
    """Parse ``key = value`` lines into ``(key, value, location)`` triples."""
    entries: List[Tuple[str, str, str]] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = _split_assignment(line, f"{source} line {lineno}")
        entries.append((key, value, f"{source} line {lineno}"))
    return entries


def load_config(path: Optional[Path], overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read a flat config file, apply overrides, and validate."""
    entries: List[Tuple[str, str, str]] = []
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        entries.extend(parse_config_lines(path.read_text(encoding="utf-8").splitlines(), str(path)))

    for i, item in enumerate(overrides, start=1):
        key, value = _split_assignment(item, f"override #{i}")
        entries.append((key, value, f"override #{i}"))

    values: Dict[str, str] = {}
    origin: Dict[str, str] = {}
    for key, value, where in entries:
        if key in values:
            logger.warning(f"Configuration key '{key}' set again at {where} (previously {origin[key]}); last value wins")
        values[key] = value
        origin[key] = where

    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])} ({origin.get(str(err['loc'][0]), 'default')}): {err['msg']}"
            for err in e.errors()
        )
        raise ConfigurationError(f"invalid configuration: {problems}") from e


def with_overrides(cfg: ExperimentConfig, **changes: object) -> ExperimentConfig:
    """Return a validated copy of ``cfg`` with some fields replaced."""
    try:
        return ExperimentConfig.model_validate({**cfg.model_dump(), **changes})
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


def echo_config(cfg: ExperimentConfig) -> str:
    """Render every effective value in the ``key = value`` format ``load_config`` reads."""
    lines = []
    for name in ExperimentConfig.model_fields:
        value = getattr(cfg, name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif hasattr(value, "value"):
            text = str(value.value)
        else:
            text = str(value)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"
