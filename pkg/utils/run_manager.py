"""Run directory management: status record, seed record, effective config and metrics sink."""

import json
import platform
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from threading import Lock
from typing import Any, Dict, Optional, Sequence
from uuid import uuid4

from loguru import logger

from core.config import ExperimentConfig, echo_config
from core.logging import add_metrics_sink
from models.schemas import RunRecord, RunStatus

RUN_FILE = "run.json"
SEED_FILE = "seed.json"
CONFIG_FILE = "effective_config.cfg"
METRICS_FILE = "metrics.tsv"

_TRACKED_PACKAGES = ("numpy", "scipy", "scikit-learn", "pandas", "pydantic", "pydantic-settings", "loguru")


def library_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in _TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


class RunManager:
    """Owns one run directory and keeps ``run.json`` current through the run lifecycle."""

    def __init__(self, output_dir: Path) -> None:
        self.output_dir = Path(output_dir)
        self._lock = Lock()
        self._record: Optional[RunRecord] = None
        self._metrics_sink: Optional[int] = None

    @property
    def record(self) -> RunRecord:
        if self._record is None:
            raise RuntimeError("run has not been created yet")
        return self._record

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def _save(self) -> None:
        """Save the run record to persistent storage."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.path(RUN_FILE).write_text(self.record.model_dump_json(indent=2), encoding="utf-8")

    def create_run(
        self, command: str, seed: int, cfg: ExperimentConfig, argv: Optional[Sequence[str]] = None, metrics: bool = True
    ) -> RunRecord:
        """Create the directory, write the reproducibility records and start the metrics sink."""
        with self._lock:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self._record = RunRecord(run_id=str(uuid4()), command=command, output_dir=self.output_dir, seed=seed)
            self.path(CONFIG_FILE).write_text(echo_config(cfg), encoding="utf-8")
            seed_record: Dict[str, Any] = {
                "seed": seed,
                "command": command,
                "argv": list(argv if argv is not None else sys.argv[1:]),
                "versions": library_versions(),
            }
            self.path(SEED_FILE).write_text(json.dumps(seed_record, indent=2), encoding="utf-8")
            self._record.artifacts.update({"config": CONFIG_FILE, "seed": SEED_FILE})
            if metrics:
                self._metrics_sink = add_metrics_sink(self.path(METRICS_FILE))
                self._record.artifacts["metrics"] = METRICS_FILE
            self._save()
            logger.info(f"Created {command} run {self._record.run_id} in {self.output_dir}")
            return self._record

    def update_status(
        self,
        status: RunStatus,
        current_step: Optional[int] = None,
        error_message: Optional[str] = None,
    ) -> RunRecord:
        """Update run status and progress."""
        with self._lock:
            record = self.record
            record.status = status
            record.updated_at = datetime.now(timezone.utc)
            if current_step is not None:
                record.current_step = current_step
            if error_message is not None:
                record.error_message = error_message
            if status in (RunStatus.COMPLETED, RunStatus.FAILED):
                record.completed_at = record.updated_at
            self._save()
            logger.debug(f"Run {record.run_id} status {status.value}")
            return record

    def add_artifact(self, key: str, path: Path) -> None:
        with self._lock:
            target = Path(path)
            try:
                target = target.relative_to(self.output_dir)
            except ValueError:
                pass
            self.record.artifacts[key] = str(target)
            self._save()

    def set_metrics(self, name: str, metrics: Dict[str, Any]) -> None:
        with self._lock:
            self.record.metrics[name] = metrics
            self._save()

    def close(self) -> None:
        """Detach the metrics sink."""
        if self._metrics_sink is not None:
            logger.remove(self._metrics_sink)
            self._metrics_sink = None


def load_run(output_dir: Path) -> RunRecord:
    """Read ``run.json`` back from a run directory."""
    return RunRecord.model_validate_json((Path(output_dir) / RUN_FILE).read_text(encoding="utf-8"))
