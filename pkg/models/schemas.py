"""Pydantic models for run records, step reports and evaluation summaries."""

from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class BaseModelWithConfig(BaseModel):
    """Base model with JSON serialization configuration."""

    model_config = ConfigDict(use_enum_values=True)


class RunStatus(str, Enum):
    """Lifecycle of a run directory."""

    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class TaskStats(BaseModel):
    """Loss and masked-prediction accuracy of one objective in one step."""

    task: str
    loss: float
    accuracy: float
    n_targets: int = 0
    # Per-modality breakdown of a joint objective, e.g. MVLM text and image terms.
    parts: Dict[str, "TaskStats"] = Field(default_factory=dict)


class StepReport(BaseModel):
    """Everything ``train_step`` reports about one optimizer step."""

    step: int
    lr: float
    total_loss: float
    tasks: Dict[str, TaskStats] = Field(default_factory=dict)

    def metric_lines(self) -> List[str]:
        """``step<TAB>task<TAB>loss<TAB>acc`` lines, the total first."""
        lines = [f"{self.step}\ttotal\t{self.total_loss:.6f}\tnan"]
        for name, stats in self.tasks.items():
            lines.append(f"{self.step}\t{name}\t{stats.loss:.6f}\t{stats.accuracy:.6f}")
            for part, sub in stats.parts.items():
                lines.append(f"{self.step}\t{name}.{part}\t{sub.loss:.6f}\t{sub.accuracy:.6f}")
        return lines


class ParamCheck(BaseModel):
    """Finite-difference comparison for one parameter tensor."""

    name: str
    shape: Tuple[int, ...]
    checked_entries: int
    max_rel_error: float
    passed: bool


class GradCheckReport(BaseModel):
    """Per-parameter agreement between tape gradients and central differences."""

    h: float
    tol: float
    params: List[ParamCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    def table(self) -> str:
        """Plain-text table, one parameter per line."""
        width = max([len(p.name) for p in self.params] + [9])
        lines = [f"{'parameter':<{width}}  {'shape':<16}  {'entries':>7}  {'max_rel_err':>12}  ok"]
        for p in self.params:
            shape = "x".join(str(s) for s in p.shape) or "scalar"
            lines.append(
                f"{p.name:<{width}}  {shape:<16}  {p.checked_entries:>7}  {p.max_rel_error:>12.3e}  {'yes' if p.passed else 'NO'}"
            )
        lines.append(f"max relative error {self.max_rel_error:.3e} (tol {self.tol:g}): {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


class EvalReport(BaseModel):
    """Named metrics of one evaluation, rendered as ``metric<TAB>value`` lines."""

    name: str
    metrics: Dict[str, float] = Field(default_factory=dict)

    def lines(self) -> List[str]:
        return [f"{key}\t{value:.6f}" for key, value in self.metrics.items()]

    def summary_lines(self, step: int) -> List[str]:
        """The same metrics in the step-metrics layout: ``step<TAB>name<TAB>value<TAB>nan``."""
        return [f"{step}\t{self.name}/{key}\t{value:.6f}\tnan" for key, value in self.metrics.items()]


class RunRecord(BaseModelWithConfig):
    """Persisted status of one run directory (``run.json``)."""

    run_id: str
    command: str
    output_dir: Path
    status: RunStatus = RunStatus.PENDING
    seed: int = 0
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    updated_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    completed_at: Optional[datetime] = None
    current_step: Optional[int] = None
    error_message: Optional[str] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)
    metrics: Dict[str, Any] = Field(default_factory=dict)
