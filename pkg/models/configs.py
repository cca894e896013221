"""Pydantic records for the backbone, pretraining and finetuning hyperparameters."""

from enum import Enum
from typing import FrozenSet

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ExpertSet(str, Enum):
    """Which feed-forward experts every block carries."""

    MOME = "mome"  # one vision FFN and one language FFN, routed by modality tag
    STANDARD = "standard"  # a single FFN shared by every token


class PretrainTask(str, Enum):
    """The three masked-prediction objectives."""

    MLM = "MLM"
    MIM = "MIM"
    MVLM = "MVLM"


class FinetuneTaskName(str, Enum):
    """Downstream tasks supported by the finetuning pipeline."""

    VQA = "vqa"
    NLVR = "nlvr"
    RETRIEVAL = "retrieval"
    IMGCLS = "imgcls"


class MoMEConfig(BaseModel):
    """Architecture of the shared Transformer and its embedding tables."""

    model_config = ConfigDict(frozen=True, use_enum_values=False)

    depth: int = Field(default=2, ge=1)
    width: int = Field(default=64, ge=1)
    heads: int = Field(default=4, ge=1)
    ffn_mult: int = Field(default=4, ge=1)
    expert_set: ExpertSet = ExpertSet.MOME
    drop_path_rate: float = 0.1
    ln_eps: float = Field(default=1e-6, gt=0)
    init_std: float = Field(default=0.02, gt=0)

    image_size: int = Field(default=32, ge=1)
    patch_size: int = Field(default=8, ge=1)
    channels: int = 3
    max_text_len: int = Field(default=16, ge=2)
    separate_pair_text_pos: bool = False

    text_vocab_size: int = Field(default=260, ge=5)
    visual_vocab_size: int = Field(default=32, ge=2)

    @model_validator(mode="after")
    def _check_geometry(self) -> "MoMEConfig":
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError(f"drop_path_rate must lie in [0, 1), got {self.drop_path_rate}")
        if self.image_size % self.patch_size != 0:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.channels != 3:
            raise ValueError("only 3-channel images are supported")
        return self

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def image_positions(self) -> int:
        """Rows of the image position table: one per patch plus I_CLS."""
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def ffn_width(self) -> int:
        return self.width * self.ffn_mult


class MaskingConfig(BaseModel):
    """Mask ratios and corruption actions for the three objectives."""

    model_config = ConfigDict(frozen=True)

    mlm_ratio: float = Field(default=0.15, gt=0, lt=1)
    mvlm_text_ratio: float = Field(default=0.5, gt=0, lt=1)
    image_mask_ratio: float = Field(default=0.4, ge=0, lt=1)
    mask_prob: float = Field(default=0.8, ge=0, le=1)
    random_prob: float = Field(default=0.1, ge=0, le=1)
    mvlm_text_actions: bool = True
    block_min_area: int = Field(default=4, ge=1)
    block_min_aspect: float = Field(default=0.3, gt=0, le=1)

    @model_validator(mode="after")
    def _check_actions(self) -> "MaskingConfig":
        if self.mask_prob + self.random_prob > 1.0 + 1e-12:
            raise ValueError("mask_prob + random_prob must not exceed 1")
        return self


class TrainConfig(BaseModel):
    """Optimisation recipe and batch composition for pretraining."""

    model_config = ConfigDict(frozen=True)

    steps: int = Field(default=2000, ge=1)
    batch_images: int = Field(default=8, ge=0)
    batch_texts: int = Field(default=8, ge=0)
    batch_pairs: int = Field(default=8, ge=0)
    peak_lr: float = Field(default=2e-3, gt=0)
    warmup_steps: int = Field(default=100, ge=0)
    weight_decay: float = Field(default=0.05, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    seed: int = 0
    tasks: FrozenSet[PretrainTask] = frozenset(PretrainTask)
    mlm_weight: float = 1.0
    mim_weight: float = 1.0
    mvlm_weight: float = 1.0
    mvlm_text_weight: float = 1.0
    mvlm_image_weight: float = 1.0
    masking: MaskingConfig = MaskingConfig()

    @field_validator("tasks")
    @classmethod
    def _at_least_one_task(cls, value: FrozenSet[PretrainTask]) -> FrozenSet[PretrainTask]:
        if not value:
            raise ValueError("at least one pretraining task must be enabled")
        return value

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.warmup_steps > self.steps:
            raise ValueError(f"warmup_steps {self.warmup_steps} exceeds steps {self.steps}")
        return self


class FinetuneConfig(BaseModel):
    """Optimisation recipe and head sizes for one downstream task."""

    model_config = ConfigDict(frozen=True)

    task: FinetuneTaskName = FinetuneTaskName.VQA
    steps: int = Field(default=500, ge=1)
    batch_size: int = Field(default=16, ge=1)
    peak_lr: float = Field(default=1e-3, gt=0)
    warmup_steps: int = Field(default=50, ge=0)
    weight_decay: float = Field(default=0.05, ge=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    seed: int = 0
    train_size: int = Field(default=512, ge=2)
    eval_size: int = Field(default=128, ge=1)
    retrieval_eval_size: int = Field(default=64, ge=2)
    rerank_k: int = Field(default=8, ge=1)
    embed_dim: int = Field(default=64, ge=1)
    init_temperature: float = Field(default=0.07, gt=0)
    n_answers: int = Field(default=12, ge=2)
    n_classes: int = Field(default=9, ge=2)

    @model_validator(mode="after")
    def _check_schedule(self) -> "FinetuneConfig":
        if self.warmup_steps > self.steps:
            raise ValueError(f"warmup_steps {self.warmup_steps} exceeds steps {self.steps}")
        return self
