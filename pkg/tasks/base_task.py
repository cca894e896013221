"""Base class for pretraining objectives and downstream tasks."""

from abc import ABC, abstractmethod
from typing import Any, Optional, Tuple

import numpy as np
from loguru import logger

from autograd.tensor import Tensor
from models.schemas import TaskStats


class BaseTask(ABC):
    """One trainable objective: builds a scalar loss and its stats from a batch."""

    def __init__(self, name: str, description: str):
        self.name = name
        self.description = description
        self.logger = logger.bind(task=name)

    @abstractmethod
    def compute(self, *args: Any, **kwargs: Any) -> Tuple[Tensor, TaskStats]:
        """Return the (possibly taped) loss and its statistics."""

    def log_execution_start(self, task_description: str) -> None:
        """Log the start of task execution."""
        self.logger.info(f"Starting task: {task_description}")

    def log_execution_end(self, success: bool, details: Optional[str] = None) -> None:
        """Log the end of task execution."""
        status = "completed successfully" if success else "failed"
        message = f"Task {status}"
        if details:
            message += f": {details}"

        if success:
            self.logger.info(message)
        else:
            self.logger.error(message)


def accuracy(logits: Tensor, targets: Any) -> float:
    """Fraction of rows whose argmax equals the target."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits.data, axis=1) == targets))
