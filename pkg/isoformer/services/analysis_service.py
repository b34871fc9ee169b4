"""
Attention analysis service for IsoFormer.

Loads two fine-tuned checkpoints, runs the attention-ratio comparison over a
dataset (or one partition of it) and writes the per-layer/head table.
"""

from pathlib import Path
from typing import Optional, Union

from ..analysis import (
    AttentionAnalysis,
    analyze_attention,
    read_region_table,
    write_analysis_tsv,
    write_reported_matrices,
)
from ..checkpoint import load_checkpoint
from ..config import Settings, get_settings
from ..data import read_dataset, read_split
from ..exceptions import EmptyDataset
from ..models.config_models import AnalysisConfig, DataConfig
from ..utils.error_handlers import ErrorHandler

PathLike = Union[str, Path]

ANALYSIS_FILE = "attention.tsv"


class AnalysisService:
    """
    Service comparing the attention of two models.

    The first checkpoint is the model under study (typically multi-modal),
    the second the reference (typically RNA-only).
    """

    def __init__(self, settings: Optional[Settings] = None):
        """
        Initialize the analysis service.

        Args:
            settings: Runtime settings; the cached environment settings by default
        """
        self.settings = settings or get_settings()
        self.error_handler = ErrorHandler("isoformer.services")

    def analyze(self,
                checkpoint_a: PathLike,
                checkpoint_b: PathLike,
                dataset: PathLike,
                regions: PathLike,
                config: AnalysisConfig,
                out_dir: PathLike,
                data_config: Optional[DataConfig] = None,
                split: Optional[PathLike] = None,
                partition: str = "test",
                dump_matrices: bool = False) -> AttentionAnalysis:
        """
        Compare attention ratios and write ``attention.tsv``.

        Args:
            checkpoint_a: Model under study
            checkpoint_b: Reference model
            dataset: Processed dataset
            regions: Region table of RNA intervals
            config: Threshold, significance level, regions and modality
            out_dir: Output directory
            data_config: Character limits used for tokenization
            split: Optional split file restricting records to ``partition``
            partition: Partition analysed when a split is given
            dump_matrices: Also write one reported-delta matrix per region

        Returns:
            AttentionAnalysis: Delta maps per region
        """
        model_a = load_checkpoint(checkpoint_a)
        model_b = load_checkpoint(checkpoint_b)
        records = read_dataset(dataset)
        if split is not None:
            partitions = read_split(split)
            records = [r for r in records if partitions.get(r.transcript_id) == partition]
        if not records:
            raise EmptyDataset("No records to analyse")

        analysis = analyze_attention(model_a, model_b, records, read_region_table(regions), config, data_config)
        out_dir = Path(out_dir)
        write_analysis_tsv(analysis, out_dir / ANALYSIS_FILE)
        if dump_matrices:
            write_reported_matrices(analysis, out_dir)
        self.error_handler.log_info(
            "Attention analysis finished",
            samples=len(analysis.transcript_ids),
            significant={region: int(m.selected.sum()) for region, m in analysis.maps.items()},
        )
        return analysis
