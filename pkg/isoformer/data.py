"""
Dataset assembly, normalisation, splitting and file formats.

Triplets are assembled from an expression table (TSV), a transcript manifest
(TSV) and three FASTA sources: the reference genome keyed by chromosome, RNA
transcripts keyed by transcript id, and proteins keyed by protein id. DNA
windows span [TSS - W/2, TSS + W/2) and are reverse-complemented on the
minus strand.

Records that cannot be assembled are skipped and reported with a reason
instead of aborting the build.
"""

import csv
import logging
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from Bio import SeqIO
from Bio.Seq import reverse_complement
from pydantic import ValidationError

from .exceptions import (
    InvalidConfig,
    IoFailure,
    MissingSequence,
    NegativeExpression,
    ParseError,
    TooFewGenes,
    WindowOutOfBounds,
)
from .models.data_models import (
    NORMALIZATION_EPSILON,
    DatasetSplit,
    GeneSum,
    ManifestEntry,
    NormalizationStats,
    RegionInterval,
    SkipReport,
    TranscriptRecord,
)
from .utils.seeding import numpy_rng
from .utils.validation_utils import validate_fraction

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_COLUMNS = ["transcript_id", "gene_id", "protein_id", "chromosome", "tss", "strand"]
REGION_COLUMNS = ["transcript_id", "region_name", "start", "end"]
GTEX_TISSUE_COUNT = 30

_PANDAS_LINE = re.compile(r"line (\d+)")


def _read_tsv(path: PathLike, **kwargs) -> pd.DataFrame:
    """pandas TSV reader mapping failures onto IoFailure / ParseError."""
    try:
        return pd.read_csv(path, sep="\t", quoting=csv.QUOTE_NONE, **kwargs)
    except FileNotFoundError as exc:
        raise IoFailure(f"Cannot read {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(str(path), 1, "file is empty") from exc
    except pd.errors.ParserError as exc:
        match = _PANDAS_LINE.search(str(exc))
        raise ParseError(str(path), int(match.group(1)) if match else None, str(exc)) from exc
    except OSError as exc:
        raise IoFailure(f"Cannot read {path}: {exc}") from exc


def _ensure_parent(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"Cannot create directory for {path}: {exc}") from exc
    return path


def _write_text(path: PathLike, text: str) -> None:
    path = _ensure_parent(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc


# Expression tables

@dataclass
class ExpressionTable:
    """Per-transcript mean TPM per tissue, indexed by transcript id."""

    frame: pd.DataFrame
    scale: str = "tpm"

    def __post_init__(self) -> None:
        values = self.frame.to_numpy(dtype=np.float64)
        if self.scale == "tpm" and values.size and values.min() < 0:
            row, column = np.argwhere(values < 0)[0]
            raise NegativeExpression(
                f"Negative expression {values[row, column]} for {self.frame.index[row]} "
                f"in {self.frame.columns[column]}"
            )

    @property
    def tissues(self) -> list[str]:
        return [str(column) for column in self.frame.columns]

    @property
    def transcript_ids(self) -> list[str]:
        return [str(index) for index in self.frame.index]

    @property
    def values(self) -> np.ndarray:
        return self.frame.to_numpy(dtype=np.float64)

    def row(self, transcript_id: str) -> list[float]:
        return [float(v) for v in self.frame.loc[transcript_id].to_numpy(dtype=np.float64)]


def _numeric_frame(frame: pd.DataFrame, path: PathLike, header_lines: int = 1) -> pd.DataFrame:
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna()
    if bad.to_numpy().any():
        row, column = np.argwhere(bad.to_numpy())[0]
        raise ParseError(
            str(path), int(row) + header_lines + 1,
            f"non-numeric value {frame.iat[row, column]!r} in column {frame.columns[column]}"
        )
    return numeric.astype(np.float64)


def read_expression_table(path: PathLike) -> ExpressionTable:
    """
    Read ``transcript_id<TAB>tissue_1...tissue_N`` with decimal TPM values.

    Raises:
        ParseError: For a bad header, duplicate ids or non-numeric values
        NegativeExpression: For negative TPM values
    """
    frame = _read_tsv(path, dtype=str, keep_default_na=False, na_values=[""])
    if frame.columns.empty or frame.columns[0] != "transcript_id":
        raise ParseError(str(path), 1, "header must start with transcript_id")
    if len(frame.columns) < 2:
        raise ParseError(str(path), 1, "no tissue columns")
    duplicated = frame["transcript_id"].duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise ParseError(str(path), row + 2, f"duplicate transcript_id {frame['transcript_id'].iat[row]}")
    values = _numeric_frame(frame.iloc[:, 1:], path)
    values.index = frame["transcript_id"].astype(str)
    values.index.name = "transcript_id"
    return ExpressionTable(values)


def read_tissue_names(path: PathLike) -> list[str]:
    """Tissue columns of an expression table header."""
    frame = _read_tsv(path, nrows=0)
    return [str(column) for column in frame.columns[1:]]


def write_expression_table(table: ExpressionTable, path: PathLike) -> None:
    frame = table.frame.copy()
    frame.index.name = "transcript_id"
    _write_text(path, frame.to_csv(sep="\t", float_format="%.17g"))


def average_expression(tpm_path: PathLike,
                       attributes_path: PathLike,
                       tissues: Optional[Sequence[str]] = None,
                       chunksize: int = 20000) -> ExpressionTable:
    """
    Average per-sample TPMs across individuals for each tissue.

    Args:
        tpm_path: Sample-level table: GCT 1.2 (``#1.2`` and dimension lines
            before the header) or plain TSV; first column is the transcript id,
            remaining non-sample columns such as gene ids are ignored
        attributes_path: Sample attributes TSV with SAMPID and SMTSD columns
        tissues: Optional tissue subset and order; defaults to all tissues
            with samples, sorted
        chunksize: Rows read per chunk

    Returns:
        ExpressionTable: Mean TPM per transcript and tissue

    Raises:
        ParseError: For missing attribute columns or no matching samples
    """
    attributes = _read_tsv(attributes_path, dtype=str, keep_default_na=False)
    for column in ("SAMPID", "SMTSD"):
        if column not in attributes.columns:
            raise ParseError(str(attributes_path), 1, f"missing column {column}")
    sample_tissue = dict(zip(attributes["SAMPID"], attributes["SMTSD"]))

    try:
        with open(tpm_path, "r", encoding="utf-8") as handle:
            first = handle.readline()
    except OSError as exc:
        raise IoFailure(f"Cannot read {tpm_path}: {exc}") from exc
    skip = 2 if first.startswith("#1.") else 0

    reader = _read_tsv(tpm_path, skiprows=skip, chunksize=chunksize)
    averaged = []
    groups: Optional[dict[str, list[str]]] = None
    for chunk in reader:
        if groups is None:
            by_tissue: dict[str, list[str]] = defaultdict(list)
            for column in chunk.columns[1:]:
                if column in sample_tissue:
                    by_tissue[sample_tissue[column]].append(column)
            order = list(tissues) if tissues is not None else sorted(by_tissue)
            missing = [tissue for tissue in order if not by_tissue.get(tissue)]
            if missing or not order:
                raise ParseError(str(tpm_path), skip + 1, f"no samples for tissues {missing or 'any'}")
            groups = {tissue: by_tissue[tissue] for tissue in order}
        ids = chunk.iloc[:, 0].astype(str)
        means = pd.DataFrame(
            {tissue: chunk[columns].astype(np.float64).mean(axis=1) for tissue, columns in groups.items()}
        )
        means.index = ids
        averaged.append(means)

    if not averaged:
        raise ParseError(str(tpm_path), skip + 1, "no expression rows")
    frame = pd.concat(averaged)
    frame.index.name = "transcript_id"
    if len(frame.columns) != GTEX_TISSUE_COUNT:
        logger.warning("Averaged expression covers %d tissues; GTEx transcript tables have %d",
                       len(frame.columns), GTEX_TISSUE_COUNT)
    return ExpressionTable(frame)


# Manifest and sequences

def read_manifest(path: PathLike) -> list[ManifestEntry]:
    """
    Read the transcript manifest TSV.

    Raises:
        ParseError: For missing columns or invalid rows (line numbers 1-based)
    """
    frame = _read_tsv(path, dtype=str, keep_default_na=False)
    missing = [column for column in MANIFEST_COLUMNS if column not in frame.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing columns {', '.join(missing)}")
    entries = []
    for row, values in enumerate(frame[MANIFEST_COLUMNS].to_dict(orient="records")):
        try:
            entries.append(ManifestEntry.model_validate(values))
        except ValidationError as exc:
            raise ParseError(str(path), row + 2, str(exc.errors()[0]["msg"])) from exc
    return entries


def extract_window(chromosome: str, tss: int, window: int, strand: str = "+") -> str:
    """
    Reference bases [tss - window/2, tss + window/2), reverse-complemented
    for the minus strand.

    Raises:
        WindowOutOfBounds: If the window leaves the chromosome
    """
    half = window // 2
    start, end = tss - half, tss + half
    if start < 0 or end > len(chromosome):
        raise WindowOutOfBounds(
            f"window [{start}, {end}) outside chromosome of length {len(chromosome)}"
        )
    bases = chromosome[start:end].upper()
    return reverse_complement(bases) if strand == "-" else bases


class _FastaLookup:
    """Indexed FASTA access tolerating version suffixes on ids."""

    def __init__(self, path: PathLike):
        try:
            self.index = SeqIO.index(str(path), "fasta")
        except OSError as exc:
            raise IoFailure(f"Cannot read FASTA {path}: {exc}") from exc
        except ValueError as exc:
            raise ParseError(str(path), None, str(exc)) from exc
        self.path = str(path)
        self._unversioned = {key.split(".")[0]: key for key in self.index}

    def __contains__(self, key: str) -> bool:
        return self._resolve(key) is not None

    def _resolve(self, key: str) -> Optional[str]:
        if key in self.index:
            return key
        return self._unversioned.get(key.split(".")[0])

    def get(self, key: str) -> Optional[str]:
        resolved = self._resolve(key)
        if resolved is None:
            return None
        return str(self.index[resolved].seq).upper()

    def close(self) -> None:
        self.index.close()


def build_triplets(expression_path: PathLike,
                   genome_fasta: PathLike,
                   rna_fasta: PathLike,
                   protein_fasta: PathLike,
                   manifest_path: PathLike,
                   window: int) -> tuple[list[TranscriptRecord], SkipReport]:
    """
    Join expression, manifest and sequences into TranscriptRecords.

    Chromosomes are processed one at a time; records come back sorted by
    transcript id.

    Returns:
        tuple: Records and the report of skipped transcripts

    Raises:
        ParseError: For malformed inputs
        MissingSequence: If a manifest chromosome is absent from the genome
    """
    if window < 2 or window % 2:
        raise InvalidConfig(f"window must be a positive even number, got {window}")
    table = read_expression_table(expression_path)
    entries = read_manifest(manifest_path)
    expression_ids = set(table.transcript_ids)
    skips = SkipReport()

    by_chromosome: dict[str, list[ManifestEntry]] = defaultdict(list)
    for entry in entries:
        by_chromosome[entry.chromosome].append(entry)

    genome = _FastaLookup(genome_fasta)
    rna = _FastaLookup(rna_fasta)
    proteins = _FastaLookup(protein_fasta)
    records = []
    try:
        for chromosome in sorted(by_chromosome):
            if chromosome not in genome.index:
                raise MissingSequence(f"Chromosome {chromosome} not found in {genome_fasta}")
            sequence = str(genome.index[chromosome].seq)
            for entry in by_chromosome[chromosome]:
                record = _assemble(entry, sequence, window, table, expression_ids, rna, proteins, skips)
                if record is not None:
                    records.append(record)
    finally:
        genome.close()
        rna.close()
        proteins.close()

    for reason, count in sorted(skips.counts.items()):
        logger.warning("Skipped %d transcripts: %s", count, reason)
    records.sort(key=lambda record: record.transcript_id)
    logger.info("Assembled %d triplets from %d manifest rows", len(records), len(entries))
    return records, skips


def _assemble(entry: ManifestEntry,
              chromosome: str,
              window: int,
              table: ExpressionTable,
              expression_ids: set[str],
              rna: _FastaLookup,
              proteins: _FastaLookup,
              skips: SkipReport) -> Optional[TranscriptRecord]:
    tid = entry.transcript_id
    if tid not in expression_ids:
        skips.add(tid, "missing_expression")
        return None
    rna_seq = rna.get(tid)
    if not rna_seq:
        skips.add(tid, "missing_rna")
        return None
    protein_seq = None
    if entry.protein_id:
        protein_seq = proteins.get(entry.protein_id)
        if not protein_seq:
            skips.add(tid, "missing_protein")
            return None
        protein_seq = protein_seq.rstrip("*") or None
    try:
        dna = extract_window(chromosome, entry.tss, window, entry.strand)
    except WindowOutOfBounds as exc:
        logger.warning("Skipping %s: %s", tid, exc)
        skips.add(tid, "window_out_of_bounds")
        return None
    return TranscriptRecord(
        transcript_id=tid,
        gene_id=entry.gene_id,
        dna_window=dna,
        rna_seq=rna_seq,
        protein_seq=protein_seq,
        targets=table.row(tid),
        strand=entry.strand,
        target_scale="tpm",
    )


# Processed dataset files

def _format_float(value: float) -> str:
    return repr(float(value))


def write_dataset(records: Iterable[TranscriptRecord], path: PathLike) -> int:
    """Write one tab-separated record per line; returns the record count."""
    lines = []
    for record in records:
        fields = [
            record.transcript_id,
            record.gene_id,
            record.dna_window,
            record.rna_seq,
            record.protein_seq or "",
            ",".join(_format_float(v) for v in record.targets),
            record.strand,
            record.target_scale,
        ]
        lines.append("\t".join(fields) + "\n")
    _write_text(path, "".join(lines))
    return len(lines)


def read_dataset(path: PathLike) -> list[TranscriptRecord]:
    """
    Read a processed dataset.

    Raises:
        ParseError: For rows with the wrong field count or invalid values
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"Cannot read dataset {path}: {exc}") from exc

    records = []
    num_tissues = None
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise ParseError(str(path), line_number, f"expected 8 fields, got {len(fields)}")
        try:
            targets = [float(v) for v in fields[5].split(",")]
            record = TranscriptRecord(
                transcript_id=fields[0],
                gene_id=fields[1],
                dna_window=fields[2],
                rna_seq=fields[3],
                protein_seq=fields[4] or None,
                targets=targets,
                strand=fields[6],
                target_scale=fields[7],
            )
        except (ValueError, ValidationError) as exc:
            raise ParseError(str(path), line_number, str(exc).splitlines()[0]) from exc
        if num_tissues is None:
            num_tissues = record.num_tissues
        elif record.num_tissues != num_tissues:
            raise ParseError(str(path), line_number, f"{record.num_tissues} targets, expected {num_tissues}")
        records.append(record)
    return records


def check_window_lengths(records: Iterable[TranscriptRecord], window: int) -> None:
    for record in records:
        if len(record.dna_window) != window:
            raise InvalidConfig(
                f"{record.transcript_id} has a {len(record.dna_window)} bp window, expected {window}"
            )


def write_stats(stats: NormalizationStats, path: PathLike) -> None:
    lines = [
        f"{tissue}\t{_format_float(mean)}\t{_format_float(std)}\n"
        for tissue, mean, std in zip(stats.tissues, stats.mean, stats.std)
    ]
    _write_text(path, "".join(lines))


def read_stats(path: PathLike) -> NormalizationStats:
    frame = _read_tsv(path, header=None, dtype={"tissue": str}, names=["tissue", "mean", "std"])
    numeric = _numeric_frame(frame[["mean", "std"]], path, header_lines=0)
    try:
        return NormalizationStats(
            tissues=frame["tissue"].astype(str).tolist(),
            mean=numeric["mean"].tolist(),
            std=numeric["std"].tolist(),
        )
    except ValidationError as exc:
        raise ParseError(str(path), None, str(exc)) from exc


def write_skip_report(report: SkipReport, path: PathLike) -> None:
    lines = ["transcript_id\treason\n"]
    lines.extend(f"{entry.transcript_id}\t{entry.reason}\n" for entry in report.skipped)
    _write_text(path, "".join(lines))


def write_split(split: DatasetSplit, records: Sequence[TranscriptRecord], path: PathLike) -> None:
    partition = split.partition_of()
    lines = ["transcript_id\tgene_id\tpartition\n"]
    lines.extend(
        f"{record.transcript_id}\t{record.gene_id}\t{partition[record.transcript_id]}\n"
        for record in records if record.transcript_id in partition
    )
    _write_text(path, "".join(lines))


def read_split(path: PathLike) -> dict[str, str]:
    """Map transcript id -> partition from a split file."""
    frame = _read_tsv(path, dtype=str, keep_default_na=False)
    missing = [c for c in ("transcript_id", "partition") if c not in frame.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing columns {', '.join(missing)}")
    return dict(zip(frame["transcript_id"], frame["partition"]))


def read_region_table(path: PathLike) -> dict[str, list[RegionInterval]]:
    """
    Read ``transcript_id, region_name, start, end`` (0-based half-open).

    Raises:
        ParseError: For missing columns or invalid rows
    """
    frame = _read_tsv(path, dtype=str, keep_default_na=False)
    missing = [column for column in REGION_COLUMNS if column not in frame.columns]
    if missing:
        raise ParseError(str(path), 1, f"missing columns {', '.join(missing)}")
    regions: dict[str, list[RegionInterval]] = defaultdict(list)
    for row, values in enumerate(frame[REGION_COLUMNS].to_dict(orient="records")):
        try:
            interval = RegionInterval.model_validate(values)
        except ValidationError as exc:
            raise ParseError(str(path), row + 2, str(exc.errors()[0]["msg"])) from exc
        regions[interval.transcript_id].append(interval)
    return dict(regions)


def write_region_table(regions: Mapping[str, Sequence[RegionInterval]], path: PathLike) -> None:
    lines = ["\t".join(REGION_COLUMNS) + "\n"]
    for transcript_id in sorted(regions):
        lines.extend(
            f"{i.transcript_id}\t{i.region_name}\t{i.start}\t{i.end}\n" for i in regions[transcript_id]
        )
    _write_text(path, "".join(lines))


# Normalisation

def target_matrix(records: Sequence[TranscriptRecord]) -> np.ndarray:
    return np.asarray([record.targets for record in records], dtype=np.float64)


def to_log_scale(values: np.ndarray, scale: str) -> np.ndarray:
    """
    Bring raw targets to log scale: log(1 + v) for TPM, unchanged for log.

    Raises:
        NegativeExpression: If TPM values are negative
    """
    values = np.asarray(values, dtype=np.float64)
    if scale == "tpm":
        if values.size and values.min() < 0:
            raise NegativeExpression(f"Negative TPM value {values.min()}")
        return np.log1p(values)
    if scale == "log":
        return values
    raise InvalidConfig(f"Targets on scale {scale!r} cannot be log-transformed")


def compute_stats(log_values: np.ndarray, tissues: Sequence[str]) -> NormalizationStats:
    """Per-tissue mean and population std, floored at 1e-8."""
    mean = log_values.mean(axis=0)
    std = np.maximum(log_values.std(axis=0), NORMALIZATION_EPSILON)
    return NormalizationStats(tissues=list(tissues), mean=mean.tolist(), std=std.tolist())


def apply_stats(log_values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    mean = np.asarray(stats.mean, dtype=np.float64)
    std = np.maximum(np.asarray(stats.std, dtype=np.float64), NORMALIZATION_EPSILON)
    return (log_values - mean) / std


def normalize_targets(table: ExpressionTable,
                      stats: Optional[NormalizationStats] = None) -> tuple[ExpressionTable, NormalizationStats]:
    """
    log(1 + v), then per-tissue z-scores.

    Args:
        table: Raw TPM table
        stats: Train statistics to reuse; computed from ``table`` when omitted

    Returns:
        tuple: Normalised table (may hold negative values) and the stats used

    Raises:
        NegativeExpression: If any value is negative
    """
    log_values = to_log_scale(table.values, "tpm")
    if stats is None:
        stats = compute_stats(log_values, table.tissues)
    normalized = pd.DataFrame(apply_stats(log_values, stats), index=table.frame.index, columns=table.frame.columns)
    return ExpressionTable(normalized, scale="normalized"), stats


def normalize_records(records: Sequence[TranscriptRecord],
                      tissues: Sequence[str],
                      stats: Optional[NormalizationStats] = None) -> tuple[list[TranscriptRecord], NormalizationStats]:
    """
    Normalise record targets, reusing ``stats`` when given.

    Records already on the ``normalized`` scale pass through unchanged.

    Raises:
        NegativeExpression: For negative TPM targets
    """
    scales = {record.target_scale for record in records}
    if len(scales) > 1:
        raise InvalidConfig(f"Mixed target scales: {sorted(scales)}")
    scale = scales.pop() if scales else "tpm"
    if scale == "normalized":
        if stats is None:
            stats = NormalizationStats(tissues=list(tissues), mean=[0.0] * len(tissues), std=[1.0] * len(tissues))
        return list(records), stats

    log_values = to_log_scale(target_matrix(records), scale)
    if stats is None:
        stats = compute_stats(log_values, tissues)
    normalized = apply_stats(log_values, stats)
    updated = [
        record.model_copy(update={"targets": row.tolist(), "target_scale": "normalized"})
        for record, row in zip(records, normalized)
    ]
    return updated, stats


def expression_summary(records: Sequence[TranscriptRecord], tissues: Sequence[str]) -> NormalizationStats:
    """Descriptive per-tissue mean/std of log-scale targets over all records."""
    if not records:
        raise InvalidConfig("expression_summary needs at least one record")
    scale = records[0].target_scale
    values = target_matrix(records)
    log_values = values if scale == "normalized" else to_log_scale(values, scale)
    return compute_stats(log_values, tissues)


def covered_records(records: Sequence[TranscriptRecord], modalities: Sequence[str]) -> list[TranscriptRecord]:
    """
    Records carrying at least one of ``modalities``.

    Only protein can be missing, so this drops non-coding transcripts from
    protein-only runs; the drop count is logged.
    """
    kept = [r for r in records if any(m != "protein" or r.is_coding for m in modalities)]
    if len(kept) < len(records):
        logger.warning("Dropped %d records with none of %s", len(records) - len(kept), "+".join(modalities))
    return kept


# Splits and gene sums

def split_by_gene(records: Sequence[TranscriptRecord],
                  test_fraction: float,
                  val_fraction: float,
                  seed: int,
                  test_seed: Optional[int] = None) -> DatasetSplit:
    """
    Partition transcripts by gene into train, validation and test.

    The test genes come from ``test_seed`` (the run seed when None); the
    validation genes are drawn from the remaining train genes with ``seed``,
    so a fixed test set can be combined with a per-seed validation set.

    Raises:
        InvalidConfig: If a fraction is outside (0, 1) or they sum to 1 or more
        TooFewGenes: If any partition would be empty
    """
    validate_fraction("test_fraction", test_fraction)
    validate_fraction("val_fraction", val_fraction)
    if test_fraction + val_fraction >= 1.0:
        raise InvalidConfig("test_fraction + val_fraction must be below 1")
    test_seed = seed if test_seed is None else test_seed

    genes = sorted({record.gene_id for record in records})
    n_test = round(test_fraction * len(genes))
    shuffled = [str(g) for g in numpy_rng(test_seed, "split:test").permutation(np.asarray(genes, dtype=object))]
    test_genes = sorted(shuffled[:n_test])
    remaining = sorted(shuffled[n_test:])

    n_val = round(val_fraction * len(remaining))
    reshuffled = [str(g) for g in numpy_rng(seed, "split:validation").permutation(np.asarray(remaining, dtype=object))]
    validation_genes = sorted(reshuffled[:n_val])
    train_genes = sorted(reshuffled[n_val:])

    if not test_genes or not validation_genes or not train_genes:
        raise TooFewGenes(
            f"{len(genes)} genes give {len(train_genes)} train, {len(validation_genes)} validation "
            f"and {len(test_genes)} test genes"
        )

    partition_of_gene = {g: "train" for g in train_genes}
    partition_of_gene.update({g: "validation" for g in validation_genes})
    partition_of_gene.update({g: "test" for g in test_genes})
    members: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
    for record in records:
        members[partition_of_gene[record.gene_id]].append(record.transcript_id)

    return DatasetSplit(
        train=members["train"],
        validation=members["validation"],
        test=members["test"],
        train_genes=train_genes,
        validation_genes=validation_genes,
        test_genes=test_genes,
        seed=seed,
        test_seed=test_seed,
    )


def check_gene_sum(records: Sequence[TranscriptRecord],
                   gene_table: Optional[Mapping[str, Sequence[float]]] = None) -> list[GeneSum]:
    """
    Gene-level expression as the per-tissue sum of its transcripts.

    Args:
        records: Records with raw (tpm or log) targets
        gene_table: Optional gene-level values; residuals are table minus sum

    Returns:
        list[GeneSum]: One entry per gene, sorted by gene id
    """
    if any(record.target_scale == "normalized" for record in records):
        raise InvalidConfig("check_gene_sum needs un-normalised targets")
    grouped: dict[str, list[TranscriptRecord]] = defaultdict(list)
    for record in records:
        grouped[record.gene_id].append(record)

    report = []
    for gene_id in sorted(grouped):
        members = grouped[gene_id]
        totals = target_matrix(members).sum(axis=0)
        residuals = None
        if gene_table is not None and gene_id in gene_table:
            residuals = (np.asarray(gene_table[gene_id], dtype=np.float64) - totals).tolist()
        report.append(GeneSum(
            gene_id=gene_id,
            transcript_ids=[record.transcript_id for record in members],
            totals=totals.tolist(),
            residuals=residuals,
        ))
    return report
