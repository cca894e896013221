"""Optimisation, checkpoints and the pretraining / finetuning loops."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .finetuner import FinetuneTrainer
from .optim import AdamState, adam_step, decays, lr_at_step
from .pretrainer import PretrainData, Pretrainer, cross_modal_probe, evaluate_pretraining, sample_batch, train_step

__all__ = [
    "AdamState",
    "Checkpoint",
    "FinetuneTrainer",
    "PretrainData",
    "Pretrainer",
    "adam_step",
    "cross_modal_probe",
    "decays",
    "evaluate_pretraining",
    "load_checkpoint",
    "lr_at_step",
    "sample_batch",
    "save_checkpoint",
    "train_step",
]
