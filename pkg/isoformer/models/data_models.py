"""
Dataset models for IsoFormer.

This module contains the pydantic models that flow through the data
pipeline: triplet records, manifest rows, normalisation statistics, splits,
skip reports, region intervals and gene-sum reports.
"""

import math
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

TargetScale = Literal["tpm", "log", "normalized"]
NORMALIZATION_EPSILON = 1e-8


class TranscriptRecord(BaseModel):
    """
    One (DNA, RNA, protein) triplet with per-tissue targets.

    ``protein_seq`` is None exactly for non-coding transcripts.
    """

    transcript_id: str = Field(..., min_length=1)
    gene_id: str = Field(..., min_length=1)
    dna_window: str = Field(..., min_length=1)
    rna_seq: str = Field(..., min_length=1)
    protein_seq: Optional[str] = Field(default=None)
    targets: list[float] = Field(..., min_length=1)
    strand: Literal["+", "-"] = "+"
    target_scale: TargetScale = "tpm"

    @field_validator("protein_seq")
    @classmethod
    def _empty_protein_is_absent(cls, value: Optional[str]) -> Optional[str]:
        return value or None

    @field_validator("targets")
    @classmethod
    def _finite_targets(cls, value: list[float]) -> list[float]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("targets must be finite")
        return value

    @property
    def is_coding(self) -> bool:
        return self.protein_seq is not None

    @property
    def num_tissues(self) -> int:
        return len(self.targets)


class ManifestEntry(BaseModel):
    """A row of the transcript manifest; ``tss`` is 0-based."""

    transcript_id: str = Field(..., min_length=1)
    gene_id: str = Field(..., min_length=1)
    protein_id: Optional[str] = None
    chromosome: str = Field(..., min_length=1)
    tss: int = Field(..., ge=0)
    strand: Literal["+", "-"]

    @field_validator("protein_id")
    @classmethod
    def _empty_protein_is_absent(cls, value: Optional[str]) -> Optional[str]:
        return value or None


class NormalizationStats(BaseModel):
    """Per-tissue mean and std of log-scale targets, from the train split."""

    tissues: list[str]
    mean: list[float]
    std: list[float]

    @model_validator(mode="after")
    def _check(self) -> "NormalizationStats":
        if not len(self.tissues) == len(self.mean) == len(self.std):
            raise ValueError("tissues, mean and std must have equal lengths")
        if any(s < NORMALIZATION_EPSILON for s in self.std):
            raise ValueError(f"std values must be at least {NORMALIZATION_EPSILON}")
        return self


class DatasetSplit(BaseModel):
    """Gene-level partition of transcript ids."""

    train: list[str]
    validation: list[str]
    test: list[str]
    train_genes: list[str]
    validation_genes: list[str]
    test_genes: list[str]
    seed: int
    test_seed: int

    def partition_of(self) -> dict[str, str]:
        """Map each transcript id to its partition name."""
        mapping = {tid: "train" for tid in self.train}
        mapping.update({tid: "validation" for tid in self.validation})
        mapping.update({tid: "test" for tid in self.test})
        return mapping


class SkippedRecord(BaseModel):
    transcript_id: str
    reason: str


class SkipReport(BaseModel):
    """Records dropped while assembling triplets, with reasons."""

    skipped: list[SkippedRecord] = Field(default_factory=list)

    def add(self, transcript_id: str, reason: str) -> None:
        self.skipped.append(SkippedRecord(transcript_id=transcript_id, reason=reason))

    @property
    def counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self.skipped:
            counts[entry.reason] = counts.get(entry.reason, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self.skipped)


class RegionInterval(BaseModel):
    """Half-open character interval of a named region on an RNA sequence."""

    transcript_id: str
    region_name: str
    start: int = Field(..., ge=0)
    end: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _ordered(self) -> "RegionInterval":
        if self.end < self.start:
            raise ValueError(f"end {self.end} precedes start {self.start}")
        return self


class GeneSum(BaseModel):
    """Gene-level expression as the per-tissue sum over its transcripts."""

    gene_id: str
    transcript_ids: list[str]
    totals: list[float]
    residuals: Optional[list[float]] = None


class TranscriptFeatures(BaseModel):
    """True explanatory features of one synthetic transcript."""

    dna_motif_count: int = Field(..., ge=0)
    rna_motif_present: bool
    protein_fraction: float = Field(..., ge=0.0, le=1.0)


class GroundTruth(BaseModel):
    """
    Everything the synthetic generator planted.

    Targets satisfy ``a[t] * dna_motif_count * rna_motif_present
    + b[t] * protein_fraction + noise * N(0, 1)`` per tissue ``t``.
    """

    seed: int
    dna_motif: str
    rna_motif: str
    protein_length_cap: int
    noise: float
    tissues: list[str]
    a: list[float]
    b: list[float]
    features: dict[str, TranscriptFeatures] = Field(default_factory=dict)
    gene_totals: dict[str, list[float]] = Field(default_factory=dict)
    regions: dict[str, list[RegionInterval]] = Field(default_factory=dict)
