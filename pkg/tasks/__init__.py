"""Pretraining objectives and downstream tasks."""

from .base_task import BaseTask, accuracy
from .downstream import (
    ClassificationTask,
    DownstreamTask,
    FinetuneExample,
    ImgClsTask,
    NLVRTask,
    RetrievalTask,
    VQATask,
    prepare_examples,
)
from .pretraining import MIMTask, MLMTask, MVLMTask, PretrainBatch, mim_loss, mlm_loss, mvlm_loss
from .task_factory import TaskFactory

__all__ = [
    "BaseTask",
    "ClassificationTask",
    "DownstreamTask",
    "FinetuneExample",
    "ImgClsTask",
    "MIMTask",
    "MLMTask",
    "MVLMTask",
    "NLVRTask",
    "PretrainBatch",
    "RetrievalTask",
    "TaskFactory",
    "VQATask",
    "accuracy",
    "mim_loss",
    "mlm_loss",
    "mvlm_loss",
    "prepare_examples",
]
