"""
Data models for IsoFormer.

This package contains the pydantic models used for configuration, dataset
records and reports.
"""

from .config_models import (
    AggregationConfig,
    AnalysisConfig,
    DataConfig,
    EncoderConfig,
    ExperimentConfig,
    IsoFormerConfig,
    SyntheticConfig,
    TrainConfig,
    WarmupConfig,
)
from .data_models import (
    DatasetSplit,
    GeneSum,
    GroundTruth,
    ManifestEntry,
    NormalizationStats,
    RegionInterval,
    SkipReport,
    TranscriptFeatures,
    TranscriptRecord,
)
from .report_models import (
    AblationRow,
    AblationRun,
    AblationTable,
    EpochRecord,
    MetricsReport,
    RunManifest,
    TissueMetrics,
)

__all__ = [
    'AblationRow',
    'AblationRun',
    'AblationTable',
    'AggregationConfig',
    'AnalysisConfig',
    'DataConfig',
    'DatasetSplit',
    'EncoderConfig',
    'EpochRecord',
    'ExperimentConfig',
    'GeneSum',
    'GroundTruth',
    'IsoFormerConfig',
    'ManifestEntry',
    'MetricsReport',
    'NormalizationStats',
    'RegionInterval',
    'RunManifest',
    'SkipReport',
    'SyntheticConfig',
    'TissueMetrics',
    'TrainConfig',
    'TranscriptFeatures',
    'TranscriptRecord',
    'WarmupConfig',
]
