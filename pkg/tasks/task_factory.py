"""Task factory for creating and caching pretraining and finetuning tasks."""

from typing import Dict, Union

from core.errors import ConfigurationError
from models.configs import FinetuneTaskName, PretrainTask, TrainConfig

from .base_task import BaseTask
from .downstream import DownstreamTask, ImgClsTask, NLVRTask, RetrievalTask, VQATask
from .pretraining import MIMTask, MLMTask, MVLMTask


class TaskFactory:
    """Factory class for creating and managing task objects."""

    def __init__(self, mvlm_text_weight: float = 1.0, mvlm_image_weight: float = 1.0):
        self._tasks: Dict[str, BaseTask] = {}
        self.mvlm_text_weight = mvlm_text_weight
        self.mvlm_image_weight = mvlm_image_weight

    @classmethod
    def for_training(cls, cfg: TrainConfig) -> "TaskFactory":
        return cls(cfg.mvlm_text_weight, cfg.mvlm_image_weight)

    def get_mlm_task(self) -> MLMTask:
        """Get or create the MLM task."""
        if "MLM" not in self._tasks:
            self._tasks["MLM"] = MLMTask()
        return self._tasks["MLM"]  # type: ignore[return-value]

    def get_mim_task(self) -> MIMTask:
        """Get or create the MIM task."""
        if "MIM" not in self._tasks:
            self._tasks["MIM"] = MIMTask()
        return self._tasks["MIM"]  # type: ignore[return-value]

    def get_mvlm_task(self) -> MVLMTask:
        """Get or create the MVLM task."""
        if "MVLM" not in self._tasks:
            self._tasks["MVLM"] = MVLMTask(self.mvlm_text_weight, self.mvlm_image_weight)
        return self._tasks["MVLM"]  # type: ignore[return-value]

    def get_pretrain_task(self, task: Union[str, PretrainTask]) -> BaseTask:
        getters = {
            PretrainTask.MLM: self.get_mlm_task,
            PretrainTask.MIM: self.get_mim_task,
            PretrainTask.MVLM: self.get_mvlm_task,
        }
        return getters[PretrainTask(task)]()

    def get_finetune_task(self, task: Union[str, FinetuneTaskName]) -> DownstreamTask:
        """Get or create a downstream task by name."""
        try:
            name = FinetuneTaskName(task)
        except ValueError as e:
            choices = ", ".join(t.value for t in FinetuneTaskName)
            raise ConfigurationError(f"unknown finetuning task '{task}' (choose from {choices})") from e
        classes = {
            FinetuneTaskName.VQA: VQATask,
            FinetuneTaskName.NLVR: NLVRTask,
            FinetuneTaskName.RETRIEVAL: RetrievalTask,
            FinetuneTaskName.IMGCLS: ImgClsTask,
        }
        if name.value not in self._tasks:
            self._tasks[name.value] = classes[name]()
        return self._tasks[name.value]  # type: ignore[return-value]

    def reset_tasks(self) -> None:
        """Reset all tasks (create new instances)."""
        self._tasks.clear()
