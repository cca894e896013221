"""Joint pretraining: MLM on texts, MIM on images and MVLM on image-text pairs.

Step ``s`` (0-based) trains at ``lr_at_step(s)``. All of a step's randomness
comes from generators seeded with ``(seed, s, stream)``: stream 0 samples the
batch and streams 1, 2, 3 drive the MLM, MIM and MVLM objectives. A run
resumed from a checkpoint taken after step ``s`` therefore continues exactly
as the uninterrupted run would.
"""

from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from autograd import functional as F
from autograd.tensor import Tape, Tensor, backward, no_grad, zero_grad
from backbone.model import MoMEModel
from core.errors import ContractError, NumericError
from core.logging import metrics_logger
from models.configs import MaskingConfig, PretrainTask, TrainConfig
from models.schemas import EvalReport, StepReport, TaskStats
from pipeline.images import PatchGrid
from pipeline.synthetic import SyntheticExample, noise_image
from pipeline.text import TextTokens, Vocabulary, tokenize
from tasks.pretraining import PretrainBatch, mim_loss, mlm_loss, mvlm_loss
from tasks.task_factory import TaskFactory
from tokenizer.codebook import Codebook

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step, lr_at_step

BATCH_STREAM = 0
TASK_STREAMS: Dict[PretrainTask, int] = {PretrainTask.MLM: 1, PretrainTask.MIM: 2, PretrainTask.MVLM: 3}
PROBE_STREAM = 4
EVAL_BATCH = 64

T = TypeVar("T")


class PretrainData(BaseModel):
    """Tokenized and patchified pools the batches are sampled from."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    texts: Tuple[TextTokens, ...] = ()
    images: Tuple[PatchGrid, ...] = ()
    pairs: Tuple[Tuple[TextTokens, PatchGrid], ...] = ()

    @classmethod
    def from_examples(
        cls,
        texts: Sequence[SyntheticExample],
        images: Sequence[SyntheticExample],
        pairs: Sequence[SyntheticExample],
        model: MoMEModel,
        vocab: Vocabulary,
    ) -> "PretrainData":
        return cls(
            texts=tuple(model.clip(tokenize(e.text, vocab)) for e in texts),
            images=tuple(model.patchify(e.images[0]) for e in images),
            pairs=tuple((model.clip(tokenize(e.text, vocab)), model.patchify(e.images[0])) for e in pairs),
        )


def step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, stream])


def sample_batch(data: PretrainData, step: int, cfg: TrainConfig) -> PretrainBatch:
    """Draw the step's texts, images and pairs with replacement.

    All three index draws happen regardless of which tasks are enabled, so
    ablation runs see the same data stream.
    """
    rng = step_rng(cfg.seed, step, BATCH_STREAM)
    draws = {}
    for name, pool, size in (
        ("texts", data.texts, cfg.batch_texts),
        ("images", data.images, cfg.batch_images),
        ("pairs", data.pairs, cfg.batch_pairs),
    ):
        if pool and size:
            draws[name] = tuple(pool[int(i)] for i in rng.integers(0, len(pool), size=size))
        else:
            draws[name] = ()
    return PretrainBatch(**draws)


def task_weight(cfg: TrainConfig, task: PretrainTask) -> float:
    return {PretrainTask.MLM: cfg.mlm_weight, PretrainTask.MIM: cfg.mim_weight, PretrainTask.MVLM: cfg.mvlm_weight}[task]


def _check_data(batch: PretrainBatch, cfg: TrainConfig) -> None:
    needs = {PretrainTask.MLM: batch.texts, PretrainTask.MIM: batch.images, PretrainTask.MVLM: batch.pairs}
    for task in cfg.tasks:
        if not needs[task]:
            raise ContractError(f"{task.value} is enabled but the step has no data for it")


def train_step(
    batch: PretrainBatch,
    model: MoMEModel,
    opt: AdamState,
    step: int,
    cfg: TrainConfig,
    codebook: Optional[Codebook] = None,
    factory: Optional[TaskFactory] = None,
) -> StepReport:
    """One joint update: weighted sum of the enabled task losses, one backward, one Adam step."""
    _check_data(batch, cfg)
    factory = factory or TaskFactory.for_training(cfg)
    params = model.params
    zero_grad(params.values())

    stats: Dict[str, TaskStats] = {}
    total: Optional[Tensor] = None
    with Tape():
        for task in PretrainTask:
            if task not in cfg.tasks:
                continue
            rng = step_rng(cfg.seed, step, TASK_STREAMS[task])
            loss, task_stats = factory.get_pretrain_task(task).compute(batch, model, codebook, rng, cfg.masking)
            if not np.isfinite(loss.data).all():
                raise NumericError(f"{task.value} loss is not finite at step {step} ({float(loss.item())})")
            stats[task.value] = task_stats
            weight = task_weight(cfg, task)
            term = loss if weight == 1.0 else F.mul(loss, weight)
            total = term if total is None else F.add(total, term)
        assert total is not None
        backward(total)

    lr = lr_at_step(step, cfg.steps, cfg.warmup_steps, cfg.peak_lr)
    adam_step(params, opt, lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    return StepReport(step=step, lr=lr, total_loss=float(total.item()), tasks=stats)


class Pretrainer:
    """Owns the model, codebook and optimizer state of a pretraining run."""

    def __init__(self, model: MoMEModel, cfg: TrainConfig, data: PretrainData, codebook: Optional[Codebook] = None):
        self.model = model
        self.cfg = cfg
        self.data = data
        self.codebook = codebook
        self.opt = AdamState()
        self.factory = TaskFactory.for_training(cfg)
        self.logger = logger.bind(component="pretrainer")
        self.metrics = metrics_logger()

    @property
    def step(self) -> int:
        """Index of the next step to run (equals completed updates)."""
        return self.opt.step

    def run(
        self,
        until: Optional[int] = None,
        log_every: int = 10,
        on_step: Optional[Callable[[StepReport], None]] = None,
    ) -> List[StepReport]:
        """Train from the current step up to ``until`` (default: ``cfg.steps``)."""
        until = self.cfg.steps if until is None else min(until, self.cfg.steps)
        tasks = ",".join(t.value for t in PretrainTask if t in self.cfg.tasks)
        self.logger.info(f"Pretraining steps {self.step}..{until - 1} with tasks {tasks}")
        reports: List[StepReport] = []
        while self.step < until:
            step = self.step
            batch = sample_batch(self.data, step, self.cfg)
            report = train_step(batch, self.model, self.opt, step, self.cfg, self.codebook, self.factory)
            for line in report.metric_lines():
                self.metrics.info(line)
            if log_every and (step % log_every == 0 or step == until - 1):
                summary = " ".join(f"{name}={s.loss:.4f}/{s.accuracy:.3f}" for name, s in report.tasks.items())
                self.logger.info(f"step {step} lr={report.lr:.2e} total={report.total_loss:.4f} {summary}")
            if on_step is not None:
                on_step(report)
            reports.append(report)
        return reports

    def save(self, path: Path) -> None:
        save_checkpoint(path, self.model.state_arrays(), self.opt, self.codebook)

    def restore(self, ckpt: Checkpoint) -> None:
        """Take parameters, codebook and optimizer state from a checkpoint."""
        self.model = MoMEModel.from_arrays(self.model.cfg, ckpt.params, np.dtype(np.float32))
        if ckpt.codebook is not None:
            self.codebook = ckpt.codebook
        self.opt = ckpt.optimizer or AdamState()
        self.opt.check_shapes(self.model.params)
        self.logger.info(f"Resumed at step {self.step}")

    def resume(self, path: Path) -> None:
        self.restore(load_checkpoint(path))


def _weighted_accuracy(parts: Sequence[Tuple[float, int]]) -> float:
    total = sum(n for _, n in parts)
    return sum(a * n for a, n in parts) / total if total else float("nan")


def _batched(items: Sequence[T], size: int = EVAL_BATCH) -> Iterator[Sequence[T]]:
    for start in range(0, len(items), size):
        yield items[start : start + size]


def cross_modal_probe(
    pairs: Sequence[Tuple[TextTokens, PatchGrid]],
    model: MoMEModel,
    seed: int,
    cfg: Optional[MaskingConfig] = None,
) -> Tuple[float, float]:
    """Masked-word accuracy with the true image and with a noise image.

    Only text is masked, and both variants see identical text plans.
    """
    cfg = (cfg or MaskingConfig()).model_copy(update={"image_mask_ratio": 0.0})
    size = model.cfg.image_size
    noise_rng = np.random.default_rng([seed, PROBE_STREAM, 1])
    noisy = [(tokens, model.patchify(noise_image(noise_rng, size))) for tokens, _ in pairs]

    results = []
    for variant in (list(pairs), noisy):
        rng = np.random.default_rng([seed, PROBE_STREAM, 0])
        parts = []
        with no_grad():
            for chunk in _batched(variant):
                _, stats = mvlm_loss(chunk, model, None, rng, cfg, training=False)
                text = stats.parts["text"]
                parts.append((text.accuracy, text.n_targets))
        results.append(_weighted_accuracy(parts))
    return results[0], results[1]


def evaluate_pretraining(
    data: PretrainData, model: MoMEModel, codebook: Optional[Codebook], cfg: TrainConfig, seed: int
) -> EvalReport:
    """Held-out masked-prediction accuracies and the cross-modal probe."""
    metrics: Dict[str, float] = {}
    with no_grad():
        if data.texts:
            rng = np.random.default_rng([seed, TASK_STREAMS[PretrainTask.MLM]])
            parts = []
            for chunk in _batched(data.texts):
                _, stats = mlm_loss(chunk, model, rng, cfg.masking, training=False)
                parts.append((stats.accuracy, stats.n_targets))
            metrics["mlm_accuracy"] = _weighted_accuracy(parts)
        if data.images and codebook is not None:
            rng = np.random.default_rng([seed, TASK_STREAMS[PretrainTask.MIM]])
            parts = []
            for chunk in _batched(data.images):
                _, stats = mim_loss(chunk, model, codebook, rng, cfg.masking, training=False)
                parts.append((stats.accuracy, stats.n_targets))
            metrics["mim_accuracy"] = _weighted_accuracy(parts)
        if data.pairs and (codebook is not None or cfg.masking.image_mask_ratio == 0):
            rng = np.random.default_rng([seed, TASK_STREAMS[PretrainTask.MVLM]])
            text_parts, image_parts = [], []
            for chunk in _batched(data.pairs):
                _, stats = mvlm_loss(chunk, model, codebook, rng, cfg.masking, training=False)
                if "text" in stats.parts:
                    text_parts.append((stats.parts["text"].accuracy, stats.parts["text"].n_targets))
                if "image" in stats.parts:
                    image_parts.append((stats.parts["image"].accuracy, stats.parts["image"].n_targets))
            metrics["mvlm_text_accuracy"] = _weighted_accuracy(text_parts)
            if image_parts:
                metrics["mvlm_image_accuracy"] = _weighted_accuracy(image_parts)
    if data.pairs:
        true_acc, noise_acc = cross_modal_probe(data.pairs, model, seed, cfg.masking)
        metrics["probe_true_image"] = true_acc
        metrics["probe_noise_image"] = noise_acc
        metrics["probe_gap"] = true_acc - noise_acc
    return EvalReport(name="pretrain", metrics=metrics)
