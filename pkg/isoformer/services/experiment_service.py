"""
Experiment service for IsoFormer.

This service sits between the command-line entry point and the domain
modules: it reads inputs, runs dataset builds, synthesis, training,
evaluation and ablations, and writes every output file of a run directory.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import torch

from ..checkpoint import load_checkpoint, save_checkpoint
from ..config import Settings, get_settings
from ..data import (
    build_triplets,
    check_window_lengths,
    covered_records,
    expression_summary,
    normalize_records,
    read_dataset,
    read_split,
    read_stats,
    read_tissue_names,
    write_dataset,
    write_region_table,
    write_skip_report,
    write_split,
    write_stats,
)
from ..dataset import RecordTokenizer
from ..exceptions import EmptyDataset, InvalidConfig
from ..models.config_models import DataConfig, ExperimentConfig, SyntheticConfig
from ..models.data_models import GroundTruth, TranscriptRecord
from ..models.report_models import AblationTable, MetricsReport
from ..synthetic import generate_synthetic, write_ground_truth
from ..training import (
    ExperimentResult,
    evaluate,
    run_ablation,
    run_experiment,
    write_ablation_tsv,
    write_history_csv,
    write_metrics_tsv,
)
from ..utils.error_handlers import ErrorHandler

PathLike = Union[str, Path]

DATASET_FILE = "dataset.tsv"
STATS_FILE = "stats.tsv"
SKIPPED_FILE = "skipped.tsv"
SPLIT_FILE = "split.tsv"
CHECKPOINT_FILE = "checkpoint.isof"
HISTORY_FILE = "history.csv"
METRICS_FILE = "metrics.tsv"
ABLATION_FILE = "ablation.tsv"
GROUND_TRUTH_FILE = "ground_truth.yaml"
REGIONS_FILE = "regions.tsv"


def apply_runtime_settings(settings: Settings) -> None:
    """Thread count and deterministic kernels for torch."""
    torch.set_num_threads(settings.num_threads)
    torch.use_deterministic_algorithms(settings.deterministic, warn_only=True)


@dataclass
class BuildSummary:
    records: int
    skipped: int


class ExperimentService:
    """
    Service running IsoFormer experiments end to end.

    Every method takes an output directory and writes its files there; the
    caller is responsible for the run manifest.
    """

    def __init__(self, settings: Optional[Settings] = None):
        """
        Initialize the experiment service.

        Args:
            settings: Runtime settings; the cached environment settings by default
        """
        self.settings = settings or get_settings()
        self.error_handler = ErrorHandler("isoformer.services")
        apply_runtime_settings(self.settings)

    def build_dataset(self,
                      expression: PathLike,
                      genome_fasta: PathLike,
                      rna_fasta: PathLike,
                      protein_fasta: PathLike,
                      manifest: PathLike,
                      window: int,
                      out_dir: PathLike) -> BuildSummary:
        """
        Assemble triplets and write the dataset, stats sidecar and skip report.

        Args:
            expression: Averaged expression table
            genome_fasta: Reference genome
            rna_fasta: Transcript sequences
            protein_fasta: Protein sequences
            manifest: Transcript manifest
            window: DNA window length
            out_dir: Output directory

        Returns:
            BuildSummary: Written and skipped record counts
        """
        out_dir = Path(out_dir)
        records, skips = build_triplets(expression, genome_fasta, rna_fasta, protein_fasta, manifest, window)
        write_dataset(records, out_dir / DATASET_FILE)
        write_skip_report(skips, out_dir / SKIPPED_FILE)
        if records:
            write_stats(expression_summary(records, read_tissue_names(expression)), out_dir / STATS_FILE)
        self.error_handler.log_info("Dataset built", records=len(records), skipped=skips.counts)
        return BuildSummary(records=len(records), skipped=len(skips))

    def generate_synthetic(self, config: SyntheticConfig, seed: int, out_dir: PathLike) -> GroundTruth:
        """
        Write a planted-signal dataset, its ground truth and region table.

        Returns:
            GroundTruth: What the generator planted
        """
        out_dir = Path(out_dir)
        records, truth = generate_synthetic(config, seed)
        write_dataset(records, out_dir / DATASET_FILE)
        write_ground_truth(truth, out_dir / GROUND_TRUTH_FILE)
        write_region_table(truth.regions, out_dir / REGIONS_FILE)
        self.error_handler.log_info("Synthetic dataset written", records=len(records), seed=seed)
        return truth

    def load_records(self, dataset: PathLike, window: Optional[int] = None) -> list[TranscriptRecord]:
        records = read_dataset(dataset)
        if not records:
            raise EmptyDataset(f"{dataset} holds no records")
        if window is not None:
            check_window_lengths(records, window)
        return records

    def train(self,
              dataset: PathLike,
              config: ExperimentConfig,
              seed: int,
              out_dir: PathLike,
              condition: str = "train") -> ExperimentResult:
        """
        One full run; writes checkpoint, history, test metrics, stats and split.

        Returns:
            ExperimentResult: The run's model, reports and artefacts
        """
        out_dir = Path(out_dir)
        records = self.load_records(dataset)
        config = self._with_sidecar_tissues(dataset, config, records[0].num_tissues)
        result = run_experiment(records, config, seed)

        save_checkpoint(result.model, out_dir / CHECKPOINT_FILE)
        write_history_csv(result.history, out_dir / HISTORY_FILE)
        write_metrics_tsv([(condition, seed, result.report)], out_dir / METRICS_FILE)
        write_stats(result.stats, out_dir / STATS_FILE)
        write_split(result.split, records, out_dir / SPLIT_FILE)
        self.error_handler.log_info(
            "Training finished",
            epochs=len(result.history),
            test_r2=result.report.r2,
            test_spearman=result.report.spearman,
        )
        return result

    def evaluate(self,
                 checkpoint: PathLike,
                 dataset: PathLike,
                 out_dir: PathLike,
                 data_config: Optional[DataConfig] = None,
                 stats: Optional[PathLike] = None,
                 split: Optional[PathLike] = None,
                 partition: Optional[str] = None,
                 seed: int = 0) -> MetricsReport:
        """
        Metrics of a checkpoint on a dataset (optionally one split partition).

        Targets are normalised with the training statistics when ``stats`` is
        given, otherwise with statistics of the evaluated records themselves.
        """
        model = load_checkpoint(checkpoint)
        records = self.load_records(dataset)
        if split is not None:
            partitions = read_split(split)
            if partition is not None:
                records = [r for r in records if partitions.get(r.transcript_id) == partition]
        elif partition is not None:
            raise InvalidConfig("--partition needs --split")
        records = covered_records(records, model.modalities)
        if not records:
            raise EmptyDataset("No records left to evaluate")

        tissues = model.tissue_names
        if records[0].num_tissues != len(tissues):
            raise InvalidConfig(f"Dataset has {records[0].num_tissues} tissues, model predicts {len(tissues)}")
        train_stats = read_stats(stats) if stats is not None else None
        if train_stats is None:
            self.error_handler.log_warning("No training statistics given; normalising with the evaluated records")
        normalized, _ = normalize_records(records, tissues, train_stats)

        encoded = RecordTokenizer(model.config, data_config).encode_all(normalized)
        report = evaluate(model, encoded, tissues)
        write_metrics_tsv([(partition or "all", seed, report)], Path(out_dir) / METRICS_FILE)
        self.error_handler.log_info("Evaluation finished", samples=report.num_samples, r2=report.r2)
        return report

    def ablate(self,
               dataset: PathLike,
               config: ExperimentConfig,
               conditions: Union[str, Sequence[str]],
               seeds: Sequence[int],
               out_dir: PathLike) -> AblationTable:
        """
        Run an ablation grid; writes per-run metrics and the aggregate table.
        """
        out_dir = Path(out_dir)
        records = self.load_records(dataset)
        table = run_ablation(records, config, conditions, seeds)
        write_metrics_tsv([(run.condition, run.seed, run.report) for run in table.runs], out_dir / METRICS_FILE)
        write_ablation_tsv(table, out_dir / ABLATION_FILE)
        for row in table.rows:
            self.error_handler.log_info(
                f"Ablation {row.condition}",
                r2=f"{row.r2_mean:.4f} +- {row.r2_std:.4f}",
                spearman=f"{row.spearman_mean:.4f} +- {row.spearman_std:.4f}",
            )
        return table

    def _with_sidecar_tissues(self, dataset: PathLike, config: ExperimentConfig, num_tissues: int) -> ExperimentConfig:
        """Take tissue names from the dataset's stats sidecar unless set explicitly."""
        sidecar = Path(dataset).with_name(STATS_FILE)
        generated = [f"tissue_{index + 1}" for index in range(len(config.model.tissue_names))]
        if not sidecar.exists() or config.model.tissue_names != generated:
            return config
        tissues = read_stats(sidecar).tissues
        if len(tissues) != num_tissues:
            return config
        model = config.model.model_copy(update={"num_tissues": num_tissues, "tissue_names": tissues})
        return config.model_copy(update={"model": model})
