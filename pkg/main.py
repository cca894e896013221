"""Command-line entry point for the masked vision-language pretraining stack.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a run fails.
"""

import argparse
import sys
from collections import Counter
from pathlib import Path
from typing import Dict, List, Mapping, NoReturn, Optional, Sequence

import numpy as np
from loguru import logger

from core.config import ExperimentConfig, load_config, settings, with_overrides
from core.errors import ConfigurationError, UsageError
from core.logging import setup_logging
from core.workflow import (
    ABLATION_ROWS,
    AblationWorkflow,
    EvalWorkflow,
    FinetuneWorkflow,
    GenerateDataWorkflow,
    GradCheckWorkflow,
    PretrainWorkflow,
    TokenizerWorkflow,
)
from core.workflow_executor import DataGenerationService
from models.configs import FinetuneTaskName
from pipeline.synthetic import DataTask
from training.checkpoint import load_checkpoint
from utils.run_manager import CONFIG_FILE

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

FINETUNE_TASKS = [t.value for t in FinetuneTaskName]


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so ``main`` owns the exit code."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat 'key = value' configuration file")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    parser.add_argument("--out", type=Path, help="run directory (default: <output_root>/<command>)")
    parser.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE", help="configuration override, repeatable"
    )


def build_parser() -> CliParser:
    parser = CliParser(prog="maskpredict", description="Masked vision-language pretraining on a MoME Transformer")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset as TSV")
    _common(p)
    p.add_argument("--task", default=DataTask.PAIRS.value, choices=[t.value for t in DataTask])
    p.add_argument("-n", type=int, default=100, help="number of examples")

    p = sub.add_parser("train-tokenizer", help="fit the k-means visual codebook")
    _common(p)

    p = sub.add_parser("pretrain", help="joint MLM / MIM / MVLM pretraining")
    _common(p)
    p.add_argument("--resume", type=Path, help="continue from this checkpoint")
    p.add_argument("--codebook", type=Path, help="use the codebook stored in this file")

    p = sub.add_parser("finetune", help="finetune and evaluate a downstream task")
    _common(p)
    p.add_argument("task", choices=FINETUNE_TASKS)
    p.add_argument("--checkpoint", type=Path, help="pretrained checkpoint (default: random init)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out data")
    _common(p)
    p.add_argument("target", choices=["pretrain"] + FINETUNE_TASKS)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("grad-check", help="finite-difference check of the MVLM gradients")
    _common(p)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-entries", type=int, default=12, help="entries checked per parameter (0 = all)")

    p = sub.add_parser("inspect-checkpoint", help="summarize a checkpoint file")
    p.add_argument("path", type=Path)

    p = sub.add_parser("ablation", help="pretraining-task and backbone ablation rows")
    _common(p)
    p.add_argument("--rows", nargs="*", choices=[r[0] for r in ABLATION_ROWS], help="subset of rows (default: all)")

    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, else the checkpoint's recorded config, then overrides and ``--seed``."""
    path: Optional[Path] = args.config
    checkpoint = getattr(args, "checkpoint", None) or getattr(args, "resume", None)
    if path is None and checkpoint is not None:
        recorded = Path(checkpoint).parent / CONFIG_FILE
        if recorded.is_file():
            logger.info(f"Using recorded configuration {recorded}")
            path = recorded
    cfg = load_config(path, args.override)
    if args.seed is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    return cfg


def parameter_groups(params: Mapping[str, np.ndarray]) -> Dict[str, int]:
    """Scalar counts per top-level group, with block experts broken out (``ffn.<expert>``)."""
    counts: Counter = Counter()
    for name, array in params.items():
        parts = name.split(".")
        group = f"ffn.{parts[3]}" if parts[0] == "blocks" and parts[2] == "ffn" else parts[0]
        counts[group] += int(array.size)
    return dict(sorted(counts.items()))


def inspect_checkpoint(path: Path) -> None:
    ckpt = load_checkpoint(path)
    print(f"checkpoint\t{path}")
    print(f"step\t{ckpt.step}")
    print(f"parameters\t{sum(a.size for a in ckpt.params.values())}")
    for group, count in parameter_groups(ckpt.params).items():
        print(f"params/{group}\t{count}")
    if ckpt.codebook is not None:
        print(f"codebook\tK={ckpt.codebook.K} dim={ckpt.codebook.dim} fingerprint={ckpt.codebook.fingerprint}")
    for name, array in sorted(ckpt.heads.items()):
        print(f"heads/{name}\t{'x'.join(str(d) for d in array.shape)}")


def dispatch(args: argparse.Namespace, argv: Sequence[str]) -> int:
    if args.command == "inspect-checkpoint":
        inspect_checkpoint(args.path)
        return EXIT_OK

    cfg = resolve_config(args)
    out = args.out or settings.output_root / args.command
    with DataGenerationService() as service:
        if args.command == "gen-data":
            GenerateDataWorkflow(cfg, out, argv, service).run(task=args.task, n=args.n)
        elif args.command == "train-tokenizer":
            TokenizerWorkflow(cfg, out, argv, service).run()
        elif args.command == "pretrain":
            PretrainWorkflow(cfg, out, argv, service).run(resume=args.resume, codebook_path=args.codebook)
        elif args.command == "finetune":
            FinetuneWorkflow(cfg, out, argv, service).run(task=args.task, checkpoint=args.checkpoint)
        elif args.command == "eval":
            report = EvalWorkflow(cfg, out, argv, service).run(target=args.target, checkpoint=args.checkpoint)
            print("\n".join(report.lines()))
        elif args.command == "grad-check":
            result = GradCheckWorkflow(cfg, out, argv).run(tol=args.tol, max_entries=args.max_entries or None)
            print(result.table())
            return EXIT_OK if result.passed else EXIT_FAILURE
        elif args.command == "ablation":
            table = AblationWorkflow(cfg, out, argv, service).run(rows=args.rows)
            print(table.to_string(index=False))
        else:  # pragma: no cover - argparse restricts the choices
            raise UsageError(f"unknown command {args.command}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    try:
        return dispatch(args, argv)
    except (UsageError, ConfigurationError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"{args.command} failed: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
