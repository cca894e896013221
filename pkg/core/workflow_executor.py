"""
Data generation service - builds synthetic datasets in a process pool.

Every example is a pure function of ``(seed, task, index)``, so the index range
is split into contiguous chunks, generated in worker processes and
concatenated in index order. The result is identical to serial generation.
"""

import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Tuple

from loguru import logger

from core.config import settings
from pipeline.synthetic import DataTask, SyntheticExample, gen_synthetic, parse_task

# Below this many examples per worker the pool costs more than it saves.
MIN_CHUNK = 64


class DataGenerationService:
    """Generates synthetic datasets with up to ``settings.threads`` worker processes."""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max(1, max_workers or settings.threads)
        self.executor: Optional[ProcessPoolExecutor] = None
        self.logger = logger.bind(component="workflow_executor")

    def _initialize_executor(self) -> ProcessPoolExecutor:
        """Initialize the ProcessPoolExecutor lazily."""
        if self.executor is None:
            method = "spawn" if sys.platform.startswith("win") else "fork"
            self.executor = ProcessPoolExecutor(
                max_workers=self.max_workers,
                mp_context=multiprocessing.get_context(method),
                initializer=_init_worker_process,
                initargs=(settings.log_level,),
            )
            self.logger.info(f"Initialized ProcessPoolExecutor with {self.max_workers} workers")
        return self.executor

    def chunks(self, n: int, start: int = 0) -> List[Tuple[int, int]]:
        """Contiguous ``(start, count)`` ranges, one per worker, in index order."""
        workers = min(self.max_workers, max(1, n // MIN_CHUNK))
        base, extra = divmod(n, workers)
        ranges, cursor = [], start
        for w in range(workers):
            count = base + (1 if w < extra else 0)
            if count:
                ranges.append((cursor, count))
            cursor += count
        return ranges

    def generate(self, seed: int, n: int, task: Any, image_size: int = 32, start: int = 0) -> List[SyntheticExample]:
        """Examples ``start .. start+n-1`` of ``task``."""
        task = parse_task(task)
        ranges = self.chunks(n, start)
        if len(ranges) <= 1:
            return gen_synthetic(seed, n, task, image_size, start)

        executor = self._initialize_executor()
        futures = [
            executor.submit(_generate_chunk, {"seed": seed, "task": task.value, "start": s, "n": c, "image_size": image_size})
            for s, c in ranges
        ]
        examples: List[SyntheticExample] = []
        for future in futures:
            examples.extend(future.result())
        self.logger.info(f"Generated {len(examples)} {task.value} examples in {len(ranges)} chunks")
        return examples

    def get_status(self) -> Dict[str, Any]:
        return {"max_workers": self.max_workers, "started": self.executor is not None}

    def shutdown(self) -> None:
        """Shutdown the executor gracefully."""
        if self.executor is not None:
            self.logger.info("Shutting down ProcessPoolExecutor...")
            self.executor.shutdown(wait=True)
            self.executor = None

    def __enter__(self) -> "DataGenerationService":
        return self

    def __exit__(self, *exc: object) -> None:
        self.shutdown()


def _init_worker_process(level: str = "INFO") -> None:
    """Initialize each worker process with necessary setup."""
    # Set up logging for worker process
    logger.remove()  # Remove default handler
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>worker {extra[process]}</cyan> | "
        "<level>{message}</level>",
        level=level,
        colorize=True,
    )
    logger.configure(extra={"process": os.getpid()})
    logger.debug(f"Worker process {os.getpid()} initialized")


def _generate_chunk(args: Dict[str, Any]) -> List[SyntheticExample]:
    """Worker entry point: one contiguous index range."""
    process_logger = logger.bind(process=os.getpid())
    task = DataTask(args["task"])
    process_logger.debug(f"Generating {task.value} examples {args['start']}..{args['start'] + args['n'] - 1}")
    return gen_synthetic(args["seed"], args["n"], task, args["image_size"], args["start"])
