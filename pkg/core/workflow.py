"""Run workflows behind the command line: data, tokenizer, pretraining, finetuning, evaluation, ablation."""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from autograd.gradcheck import grad_check
from autograd.tensor import numeric_mode
from backbone.model import MoMEModel
from core.config import ExperimentConfig, with_overrides
from core.errors import ConfigurationError
from core.workflow_executor import DataGenerationService
from finetune.heads import head_shapes, heads_from_arrays
from models.configs import ExpertSet, FinetuneTaskName, MoMEConfig, PretrainTask
from models.schemas import EvalReport, GradCheckReport, RunStatus, StepReport
from pipeline.images import patchify
from pipeline.synthetic import DataTask, SyntheticExample, gen_synthetic, parse_task
from pipeline.text import Vocabulary, build_vocab, tokenize
from tasks.downstream import prepare_examples
from tasks.pretraining import mvlm_loss
from tasks.task_factory import TaskFactory
from tokenizer.codebook import Codebook, train_codebook
from training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from training.finetuner import FinetuneTrainer
from training.pretrainer import PretrainData, Pretrainer, evaluate_pretraining
from utils.file_handlers import write_dataset, write_report, write_summary
from utils.run_manager import RunManager

CHECKPOINT_FILE = "checkpoint.bin"
CODEBOOK_FILE = "codebook.bin"

# (name, tasks, backbone): pretraining-task rows on the MoME backbone, then backbone rows.
ABLATION_ROWS: Tuple[Tuple[str, str, ExpertSet], ...] = (
    ("mome_mvlm", "MVLM", ExpertSet.MOME),
    ("mome_mvlm_mim", "MVLM,MIM", ExpertSet.MOME),
    ("mome_mvlm_mim_mlm", "MVLM,MIM,MLM", ExpertSet.MOME),
    ("mome_mim_mlm", "MIM,MLM", ExpertSet.MOME),
    ("standard_mvlm", "MVLM", ExpertSet.STANDARD),
    ("standard_mvlm_mim_mlm", "MVLM,MIM,MLM", ExpertSet.STANDARD),
)
ABLATION_FINETUNE = (FinetuneTaskName.NLVR, FinetuneTaskName.RETRIEVAL)


class Workflow:
    """One run in one output directory, with its status tracked in ``run.json``."""

    command = "run"
    writes_metrics = True

    def __init__(
        self,
        cfg: ExperimentConfig,
        output_dir: Path,
        argv: Optional[Sequence[str]] = None,
        service: Optional[DataGenerationService] = None,
    ) -> None:
        self.cfg = cfg
        self.output_dir = Path(output_dir)
        self.argv = argv
        self.run_manager = RunManager(self.output_dir)
        self.service = service
        self.vocab: Vocabulary = build_vocab()
        self.logger = logger.bind(component="workflow", command=self.command)

    @property
    def mome(self) -> MoMEConfig:
        return self.cfg.mome_config(self.vocab.size)

    def generate(self, task: DataTask, n: int, start: int = 0) -> List[SyntheticExample]:
        if self.service is None:
            return gen_synthetic(self.cfg.seed, n, task, self.cfg.image_size, start)
        return self.service.generate(self.cfg.seed, n, task, self.cfg.image_size, start)

    def run(self, **kwargs: Any) -> Any:
        """Create the run directory, execute, and record the outcome."""
        self.run_manager.create_run(self.command, self.cfg.seed, self.cfg, self.argv, metrics=self.writes_metrics)
        self.run_manager.update_status(RunStatus.RUNNING)
        try:
            result = self.execute(**kwargs)
        except Exception as e:
            self._handle_failure(str(e))
            raise
        finally:
            self.run_manager.close()
        self.run_manager.update_status(RunStatus.COMPLETED)
        self.logger.info(f"{self.command} completed in {self.output_dir}")
        return result

    def execute(self, **kwargs: Any) -> Any:
        raise NotImplementedError

    def _handle_failure(self, reason: str) -> None:
        """Handle run failure."""
        self.run_manager.update_status(RunStatus.FAILED, error_message=reason)
        self.logger.error(f"{self.command} failed: {reason}")

    # Shared loading helpers

    def load_model(self, ckpt: Optional[Checkpoint]) -> MoMEModel:
        if ckpt is None:
            return MoMEModel.create(self.mome, self.cfg.seed)
        return MoMEModel.from_arrays(self.mome, ckpt.params, np.dtype(np.float32))

    def train_codebook(self) -> Codebook:
        images = self.generate(DataTask.IMAGES, self.cfg.codebook_images)
        patches = np.concatenate([patchify(e.images[0], self.cfg.patch_size).patches for e in images])
        return train_codebook(patches, self.cfg.codebook_size, self.cfg.codebook_iters, self.cfg.seed)


class GenerateDataWorkflow(Workflow):
    command = "gen-data"
    writes_metrics = False

    def execute(self, task: str = "pairs", n: int = 100) -> Path:  # type: ignore[override]
        data_task = parse_task(task)
        examples = self.generate(data_task, n)
        path = write_dataset(self.output_dir / f"{data_task.value}.tsv", examples)
        self.run_manager.add_artifact("dataset", path)
        return path


class TokenizerWorkflow(Workflow):
    command = "train-tokenizer"
    writes_metrics = False

    def execute(self) -> Codebook:  # type: ignore[override]
        codebook = self.train_codebook()
        path = save_checkpoint(self.output_dir / CODEBOOK_FILE, {}, None, codebook)
        self.run_manager.add_artifact("codebook", path)
        self.run_manager.set_metrics(
            "tokenizer", {"K": codebook.K, "initial_error": codebook.errors[0], "final_error": codebook.errors[-1]}
        )
        return codebook


class PretrainWorkflow(Workflow):
    command = "pretrain"

    def build_data(self, model: MoMEModel, n: int, start: int = 0) -> PretrainData:
        return PretrainData.from_examples(
            self.generate(DataTask.TEXTS, n, start),
            self.generate(DataTask.IMAGES, n, start),
            self.generate(DataTask.PAIRS, n, start),
            model,
            self.vocab,
        )

    def execute(self, resume: Optional[Path] = None, codebook_path: Optional[Path] = None) -> Path:  # type: ignore[override]
        train_cfg = self.cfg.train_config()
        model = MoMEModel.create(self.mome, self.cfg.seed)
        data = self.build_data(model, self.cfg.pretrain_pool)
        pretrainer = Pretrainer(model, train_cfg, data)

        if resume is not None:
            pretrainer.resume(resume)
        elif codebook_path is not None:
            pretrainer.codebook = load_checkpoint(codebook_path).codebook
            if pretrainer.codebook is None:
                raise ConfigurationError(f"{codebook_path} holds no codebook")
        elif train_cfg.tasks & {PretrainTask.MIM, PretrainTask.MVLM}:
            pretrainer.codebook = self.train_codebook()

        def on_step(report: StepReport) -> None:
            done = report.step + 1
            if self.cfg.log_every and done % self.cfg.log_every == 0:
                self.run_manager.update_status(RunStatus.RUNNING, current_step=done)
            if self.cfg.checkpoint_every and done % self.cfg.checkpoint_every == 0 and done < train_cfg.steps:
                pretrainer.save(self.output_dir / f"checkpoint_step{done}.bin")

        reports = pretrainer.run(log_every=self.cfg.log_every, on_step=on_step)
        path = self.output_dir / CHECKPOINT_FILE
        pretrainer.save(path)
        self.run_manager.add_artifact("checkpoint", path)
        self.run_manager.update_status(RunStatus.RUNNING, current_step=pretrainer.step)

        final: Dict[str, Any] = {"steps": pretrainer.step}
        if reports:
            final["final_total_loss"] = reports[-1].total_loss
            final.update({f"final_{k}_loss": s.loss for k, s in reports[-1].tasks.items()})
        if self.cfg.probe_size:
            held_out = self.build_data(pretrainer.model, self.cfg.probe_size, start=self.cfg.pretrain_pool)
            report = evaluate_pretraining(held_out, pretrainer.model, pretrainer.codebook, train_cfg, self.cfg.seed)
            write_report(self.output_dir / "pretrain_eval.tsv", report, pretrainer.step)
            final.update(report.metrics)
        self.run_manager.set_metrics("pretrain", final)
        return path


class FinetuneWorkflow(Workflow):
    command = "finetune"

    def split(self, task: FinetuneTaskName) -> Tuple[List[SyntheticExample], List[SyntheticExample]]:
        ft = self.cfg.finetune_config(task.value)
        eval_size = ft.retrieval_eval_size if task == FinetuneTaskName.RETRIEVAL else ft.eval_size
        data_task = DataTask(task.value)
        return self.generate(data_task, ft.train_size), self.generate(data_task, eval_size, start=ft.train_size)

    def execute(self, task: str = "vqa", checkpoint: Optional[Path] = None) -> EvalReport:  # type: ignore[override]
        ft = self.cfg.finetune_config(task)
        ckpt = load_checkpoint(checkpoint) if checkpoint is not None else None
        model = self.load_model(ckpt)
        heads = None
        if ckpt is not None and all(name in ckpt.heads for name, _ in head_shapes(model.cfg, ft)):
            heads = heads_from_arrays(model.cfg, ft, ckpt.heads)
            self.logger.info(f"Continuing from stored {ft.task.value} heads")

        train, held_out = self.split(ft.task)
        trainer = FinetuneTrainer(
            model, TaskFactory().get_finetune_task(ft.task), ft, heads, ckpt.codebook if ckpt is not None else None
        )
        trainer.run(prepare_examples(train, model, self.vocab), log_every=self.cfg.log_every)
        report = trainer.evaluate(prepare_examples(held_out, model, self.vocab))

        path = self.output_dir / CHECKPOINT_FILE
        trainer.save(path)
        self.run_manager.add_artifact("checkpoint", path)
        write_report(self.output_dir / f"eval_{ft.task.value}.tsv", report, ft.steps)
        self.run_manager.set_metrics(ft.task.value, report.metrics)
        return report


class EvalWorkflow(Workflow):
    """``eval pretrain`` or ``eval <task>`` on held-out data from a checkpoint."""

    command = "eval"
    writes_metrics = False

    def execute(self, target: str, checkpoint: Path) -> EvalReport:  # type: ignore[override]
        ckpt = load_checkpoint(checkpoint)
        model = self.load_model(ckpt)
        if target == "pretrain":
            data = PretrainWorkflow(self.cfg, self.output_dir).build_data(
                model, self.cfg.probe_size, start=self.cfg.pretrain_pool
            )
            report = evaluate_pretraining(data, model, ckpt.codebook, self.cfg.train_config(), self.cfg.seed)
        else:
            ft = self.cfg.finetune_config(target)
            heads = heads_from_arrays(model.cfg, ft, ckpt.heads)
            _, held_out = FinetuneWorkflow(self.cfg, self.output_dir).split(ft.task)
            task = TaskFactory().get_finetune_task(ft.task)
            metrics = task.evaluate(prepare_examples(held_out, model, self.vocab), model, heads, ft)
            report = EvalReport(name=ft.task.value, metrics=metrics)
        path = write_report(self.output_dir / f"eval_{report.name}.tsv", report, ckpt.step)
        self.run_manager.add_artifact("report", path)
        self.run_manager.set_metrics(report.name, report.metrics)
        return report


GRAD_CHECK_MODEL = {"depth": 2, "width": 16, "heads": 2, "ffn_mult": 2, "max_text_len": 8, "codebook_size": 8}


class GradCheckWorkflow(Workflow):
    """Finite-difference check of the MVLM loss on a tiny float64 MoME model."""

    command = "grad-check"
    writes_metrics = False

    def execute(self, tol: float = 1e-3, h: float = 1e-3, max_entries: Optional[int] = 12) -> GradCheckReport:  # type: ignore[override]
        cfg = with_overrides(self.cfg, **GRAD_CHECK_MODEL)
        mome = cfg.mome_config(self.vocab.size)
        masking = cfg.masking_config()
        examples = gen_synthetic(cfg.seed, 2, DataTask.PAIRS, cfg.image_size)
        with numeric_mode(np.float64):
            model = MoMEModel.create(mome, cfg.seed)
            # Noise patches give K distinct centroids; the codebook only supplies targets here.
            noise = np.random.default_rng([cfg.seed, 0x6362]).random((8 * mome.visual_vocab_size, mome.patch_dim))
            codebook = train_codebook(noise, mome.visual_vocab_size, 5, cfg.seed)
            pairs = [(model.clip(tokenize(e.text, self.vocab)), model.patchify(e.images[0])) for e in examples]

            def loss() -> Any:
                rng = np.random.default_rng([cfg.seed, 0x6763])
                value, _ = mvlm_loss(pairs, model, codebook, rng, masking, training=False)
                return value

            report = grad_check(loss, model.params, h=h, tol=tol, max_entries=max_entries, seed=cfg.seed)
        (self.output_dir / "grad_check.txt").write_text(report.table() + "\n", encoding="utf-8")
        self.run_manager.set_metrics("grad_check", {"max_rel_error": report.max_rel_error, "passed": report.passed})
        return report


class AblationWorkflow(Workflow):
    """Pretrain every ablation row, finetune each on NLVR and retrieval, and tabulate."""

    command = "ablation"
    writes_metrics = False

    def execute(self, rows: Optional[Sequence[str]] = None) -> Any:  # type: ignore[override]
        selected = [r for r in ABLATION_ROWS if rows is None or r[0] in rows]
        if not selected:
            raise ConfigurationError(f"no ablation rows match {list(rows or [])}")
        summary: List[Dict[str, Any]] = []
        for name, tasks, backbone in selected:
            self.logger.info(f"Ablation row {name}: tasks={tasks} backbone={backbone.value}")
            cfg = with_overrides(self.cfg, tasks=tasks, backbone=backbone)
            row_dir = self.output_dir / name
            checkpoint = PretrainWorkflow(cfg, row_dir / "pretrain", self.argv, self.service).run()
            row: Dict[str, Any] = {"name": name, "tasks": cfg.tasks, "backbone": backbone.value}
            for task in ABLATION_FINETUNE:
                report = FinetuneWorkflow(cfg, row_dir / task.value, self.argv, self.service).run(
                    task=task.value, checkpoint=checkpoint
                )
                row.update({f"{task.value}_{k}": v for k, v in report.metrics.items()})
            summary.append(row)
            self.run_manager.set_metrics(name, row)
        table = write_summary(self.output_dir / "ablation_summary.tsv", summary)
        self.logger.info("Ablation summary:\n" + table.to_string(index=False))
        return table
