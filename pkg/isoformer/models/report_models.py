"""
Report models for IsoFormer.

Metrics, training history, ablation tables and run manifests, validated
with pydantic so they serialise consistently to TSV, CSV and JSON.
"""

from datetime import datetime
from typing import Any, Optional

from pydantic import BaseModel, Field


class TissueMetrics(BaseModel):
    """R² and Spearman of one tissue; None when undefined."""

    tissue: str
    r2: Optional[float] = None
    spearman: Optional[float] = Field(default=None, ge=-1.0, le=1.0)


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=1)
    train_loss: float
    val_loss: float
    improved: bool = False


class MetricsReport(BaseModel):
    """
    Per-tissue metrics with macro averages over defined tissues.

    ``loss_curve`` carries the epoch history when the report comes from a
    training run.
    """

    tissues: list[TissueMetrics]
    r2: Optional[float] = None
    spearman: Optional[float] = None
    num_samples: int = 0
    loss_curve: list[EpochRecord] = Field(default_factory=list)


class AblationRun(BaseModel):
    condition: str
    seed: int
    report: MetricsReport


class AblationRow(BaseModel):
    """Mean and population std of the headline metrics across seeds."""

    condition: str
    num_seeds: int
    r2_mean: float
    r2_std: float
    spearman_mean: float
    spearman_std: float


class AblationTable(BaseModel):
    rows: list[AblationRow]
    runs: list[AblationRun]

    def row(self, condition: str) -> AblationRow:
        for row in self.rows:
            if row.condition == condition:
                return row
        raise KeyError(condition)


class RunManifest(BaseModel):
    """
    Everything needed to reproduce one command invocation.

    Written into the output directory before the command does any work.
    """

    command: str
    argv: list[str]
    config: dict[str, dict[str, str]] = Field(default_factory=dict)
    seed: Optional[int] = None
    inputs: dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    started_at: datetime
    finished_at: Optional[datetime] = None
    status: str = "running"
    exit_code: Optional[int] = None
    version: str = "0.1.0"
    extra: dict[str, Any] = Field(default_factory=dict)
