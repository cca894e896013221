"""Finetuning loop shared by every downstream task.

Backbone and head parameters are optimised together with the pretraining
optimizer and schedule. Step ``s`` samples its batch from
``(seed, s, FINETUNE_STREAM)``.
"""

from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from autograd.tensor import Tape, Tensor, backward, zero_grad
from backbone.model import MoMEModel
from core.errors import ContractError, NumericError
from core.logging import metrics_logger
from finetune.heads import init_heads
from models.configs import FinetuneConfig
from models.schemas import EvalReport, StepReport
from tasks.downstream import DownstreamTask, FinetuneExample
from tokenizer.codebook import Codebook

from .checkpoint import save_checkpoint
from .optim import AdamState, adam_step, lr_at_step

FINETUNE_STREAM = 10
HEAD_PREFIX = "heads/"


class FinetuneTrainer:
    """Trains one downstream task on top of a (pretrained or fresh) backbone."""

    def __init__(
        self,
        model: MoMEModel,
        task: DownstreamTask,
        cfg: FinetuneConfig,
        heads: Optional[Dict[str, Tensor]] = None,
        codebook: Optional[Codebook] = None,
    ):
        self.model = model
        self.task = task
        self.cfg = cfg
        self.codebook = codebook
        self.heads = heads if heads is not None else init_heads(model.cfg, cfg, np.random.default_rng([cfg.seed, 0x68656164]))
        self.opt = AdamState()
        self.logger = logger.bind(component="finetune", task=task.name)
        self.metrics = metrics_logger()

    def parameters(self) -> Dict[str, Tensor]:
        """Backbone and head parameters under one namespace (heads prefixed)."""
        named = dict(self.model.params)
        named.update({f"{HEAD_PREFIX}{name}": p for name, p in self.heads.items()})
        return named

    def train_step(self, examples: Sequence[FinetuneExample], step: int) -> StepReport:
        rng = np.random.default_rng([self.cfg.seed, step, FINETUNE_STREAM])
        size = min(self.cfg.batch_size, len(examples))
        picks = rng.choice(len(examples), size=size, replace=False)
        batch = [examples[int(i)] for i in np.sort(picks)]

        params = self.parameters()
        zero_grad(params.values())
        with Tape():
            loss, stats = self.task.compute(batch, self.model, self.heads, rng, self.cfg)
            if not np.isfinite(loss.data).all():
                raise NumericError(f"{self.task.name} loss is not finite at step {step}")
            backward(loss)
        lr = lr_at_step(step, self.cfg.steps, self.cfg.warmup_steps, self.cfg.peak_lr)
        adam_step(params, self.opt, lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.weight_decay)
        return StepReport(step=step, lr=lr, total_loss=stats.loss, tasks={self.task.name: stats})

    def run(
        self,
        examples: Sequence[FinetuneExample],
        log_every: int = 10,
        on_step: Optional[Callable[[StepReport], None]] = None,
    ) -> List[StepReport]:
        if len(examples) < 2:
            raise ContractError("finetuning needs at least two training examples")
        self.log_start(len(examples))
        reports = []
        while self.opt.step < self.cfg.steps:
            step = self.opt.step
            report = self.train_step(examples, step)
            for line in report.metric_lines():
                self.metrics.info(line)
            if log_every and (step % log_every == 0 or step == self.cfg.steps - 1):
                stats = report.tasks[self.task.name]
                self.logger.info(f"step {step} lr={report.lr:.2e} loss={stats.loss:.4f} acc={stats.accuracy:.3f}")
            if on_step is not None:
                on_step(report)
            reports.append(report)
        self.task.log_execution_end(True, f"{self.cfg.steps} steps")
        return reports

    def log_start(self, n_examples: int) -> None:
        self.task.log_execution_start(f"finetuning {self.task.description} on {n_examples} examples")

    def evaluate(self, examples: Sequence[FinetuneExample]) -> EvalReport:
        metrics = self.task.evaluate(examples, self.model, self.heads, self.cfg)
        self.logger.info("Evaluation: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
        return EvalReport(name=self.task.name, metrics=metrics)

    def save(self, path: Path) -> None:
        heads = {name: p.data for name, p in self.heads.items()}
        save_checkpoint(path, self.model.state_arrays(), None, self.codebook, heads)
