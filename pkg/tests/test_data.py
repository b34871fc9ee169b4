"""
Tests for dataset assembly, file formats, normalisation and gene splits.
"""

import math
import random

import numpy as np
import pandas as pd
import pytest
from Bio.Seq import reverse_complement

from isoformer.data import (
    ExpressionTable,
    average_expression,
    build_triplets,
    check_gene_sum,
    covered_records,
    extract_window,
    normalize_records,
    normalize_targets,
    read_dataset,
    read_expression_table,
    read_manifest,
    read_region_table,
    read_split,
    read_stats,
    split_by_gene,
    to_log_scale,
    write_dataset,
    write_region_table,
    write_split,
    write_stats,
)
from isoformer.exceptions import (
    InvalidConfig,
    IoFailure,
    MissingSequence,
    NegativeExpression,
    ParseError,
    TooFewGenes,
    WindowOutOfBounds,
)
from isoformer.models.data_models import NormalizationStats, RegionInterval
from tests.helpers import make_records, random_bases, write_fasta

MANIFEST_HEADER = "transcript_id\tgene_id\tprotein_id\tchromosome\ttss\tstrand\n"


@pytest.fixture
def genome():
    rng = random.Random(1)
    return {"chr1": random_bases(rng, 200), "chr2": random_bases(rng, 120)}


@pytest.fixture
def inputs(tmp_path, genome):
    """Six manifest rows: two good, one per skip reason, one unknown transcript."""
    write_fasta(tmp_path / "genome.fa", genome)
    write_fasta(tmp_path / "rna.fa", {
        "T1.1": "ACGUACGUAA", "T2": "GGGCCCAAAT", "T3": "ACGT", "T5": "CCCCAAAA", "T6": "AAAATTTT",
    })
    write_fasta(tmp_path / "protein.fa", {"P1": "MKV*", "P6": "MAA"})
    (tmp_path / "expression.tsv").write_text(
        "transcript_id\tliver\tlung\n"
        "T1\t1.5\t0\n"
        "T2\t3\t4\n"
        "T4\t1\t1\n"
        "T5\t2\t2\n"
        "T6\t5\t5\n"
    )
    (tmp_path / "manifest.tsv").write_text(
        MANIFEST_HEADER
        + "T1\tG1\tP1\tchr1\t100\t+\n"
        + "T2\tG1\t\tchr2\t60\t-\n"
        + "T3\tG2\t\tchr1\t50\t+\n"
        + "T4\tG2\t\tchr1\t50\t+\n"
        + "T5\tG3\tP9\tchr1\t50\t+\n"
        + "T6\tG3\tP6\tchr2\t3\t+\n"
    )
    return tmp_path


class TestWindows:
    """Test TSS-centred window extraction."""

    def test_plus_strand(self, genome):
        """A plus-strand window is the genome slice around the TSS."""
        assert extract_window(genome["chr1"], 100, 10, "+") == genome["chr1"][95:105]

    def test_minus_strand_is_reverse_complement(self, genome):
        """A minus-strand window is reverse-complemented."""
        assert extract_window(genome["chr1"], 100, 10, "-") == reverse_complement(genome["chr1"][95:105])

    def test_out_of_bounds(self, genome):
        """Windows running off either chromosome end are rejected."""
        with pytest.raises(WindowOutOfBounds):
            extract_window(genome["chr1"], 3, 10)
        with pytest.raises(WindowOutOfBounds):
            extract_window(genome["chr1"], 196, 10)


class TestBuildTriplets:
    """Test joining expression, manifest and FASTA sources."""

    def test_records_and_skips(self, inputs, genome):
        """Good rows become records; every other row is skipped with its reason."""
        records, skips = build_triplets(
            inputs / "expression.tsv", inputs / "genome.fa", inputs / "rna.fa",
            inputs / "protein.fa", inputs / "manifest.tsv", window=10,
        )
        assert [r.transcript_id for r in records] == ["T1", "T2"]
        t1, t2 = records
        assert t1.protein_seq == "MKV"
        assert t1.rna_seq == "ACGUACGUAA"
        assert t1.dna_window == genome["chr1"][95:105]
        assert t1.targets == [1.5, 0.0]
        assert t2.protein_seq is None
        assert t2.dna_window == reverse_complement(genome["chr2"][55:65])
        assert skips.counts == {
            "missing_expression": 1,
            "missing_rna": 1,
            "missing_protein": 1,
            "window_out_of_bounds": 1,
        }

    def test_missing_chromosome(self, inputs):
        """A manifest chromosome absent from the genome is an error."""
        with open(inputs / "manifest.tsv", "a") as handle:
            handle.write("T7\tG4\t\tchrX\t50\t+\n")
        with pytest.raises(MissingSequence):
            build_triplets(inputs / "expression.tsv", inputs / "genome.fa", inputs / "rna.fa",
                           inputs / "protein.fa", inputs / "manifest.tsv", window=10)

    def test_odd_window(self, inputs):
        """The window must be even."""
        with pytest.raises(InvalidConfig):
            build_triplets(inputs / "expression.tsv", inputs / "genome.fa", inputs / "rna.fa",
                           inputs / "protein.fa", inputs / "manifest.tsv", window=9)

    def test_bad_manifest_row(self, tmp_path):
        """A malformed manifest row names its line."""
        path = tmp_path / "manifest.tsv"
        path.write_text(MANIFEST_HEADER + "T1\tG1\t\tchr1\t10\t+\nT2\tG1\t\tchr1\t-5\t+\n")
        with pytest.raises(ParseError) as info:
            read_manifest(path)
        assert info.value.line == 3


class TestExpressionTables:
    """Test expression table parsing and averaging."""

    def test_read(self, inputs):
        """Tissues, ids and rows come back from the header and body."""
        table = read_expression_table(inputs / "expression.tsv")
        assert table.tissues == ["liver", "lung"]
        assert table.transcript_ids[:2] == ["T1", "T2"]
        assert table.row("T2") == [3.0, 4.0]

    def test_non_numeric_line_number(self, tmp_path):
        """A non-numeric value names its line."""
        path = tmp_path / "expression.tsv"
        path.write_text("transcript_id\tliver\nT1\t1\nT2\tabc\n")
        with pytest.raises(ParseError) as info:
            read_expression_table(path)
        assert info.value.line == 3

    def test_negative(self, tmp_path):
        """Negative expression is rejected."""
        path = tmp_path / "expression.tsv"
        path.write_text("transcript_id\tliver\nT1\t-1\n")
        with pytest.raises(NegativeExpression):
            read_expression_table(path)

    def test_duplicate_ids(self, tmp_path):
        """Transcript ids must be unique."""
        path = tmp_path / "expression.tsv"
        path.write_text("transcript_id\tliver\nT1\t1\nT1\t2\n")
        with pytest.raises(ParseError):
            read_expression_table(path)

    def test_missing_file(self, tmp_path):
        """A missing table is an IO failure."""
        with pytest.raises(IoFailure):
            read_expression_table(tmp_path / "absent.tsv")

    def test_average_expression_gct(self, tmp_path):
        """GCT samples are averaged per tissue through the attribute table."""
        (tmp_path / "tpm.gct").write_text(
            "#1.2\n2\t4\n"
            "transcript_id\tgene_id\tS1\tS2\tS3\tS4\n"
            "T1\tG1\t1\t3\t10\t0\n"
            "T2\tG1\t2\t2\t4\t6\n"
        )
        (tmp_path / "attributes.tsv").write_text(
            "SAMPID\tSMTSD\nS1\tLiver\nS2\tLiver\nS3\tLung\nS4\tLung\n"
        )
        table = average_expression(tmp_path / "tpm.gct", tmp_path / "attributes.tsv")
        assert table.tissues == ["Liver", "Lung"]
        assert table.row("T1") == [2.0, 5.0]
        assert table.row("T2") == [2.0, 5.0]

    def test_average_expression_unknown_tissue(self, tmp_path):
        """Requesting a tissue without samples is an error."""
        (tmp_path / "tpm.tsv").write_text("transcript_id\tS1\nT1\t1\n")
        (tmp_path / "attributes.tsv").write_text("SAMPID\tSMTSD\nS1\tLiver\n")
        with pytest.raises(ParseError):
            average_expression(tmp_path / "tpm.tsv", tmp_path / "attributes.tsv", tissues=["Brain"])


class TestNormalisation:
    """Test log transform and per-tissue z-scores."""

    def test_log_values(self):
        """TPM values map to log(1 + x)."""
        np.testing.assert_allclose(to_log_scale(np.array([0.0, math.e - 1]), "tpm"), [0.0, 1.0])

    def test_log_rejects_negative(self):
        """Negative TPM cannot be log-transformed."""
        with pytest.raises(NegativeExpression):
            to_log_scale(np.array([-0.5]), "tpm")

    def test_normalize_targets_and_reuse(self):
        """Per-tissue stats from one table normalise another."""
        frame = pd.DataFrame({"liver": [0.0, math.e - 1, math.e ** 2 - 1], "lung": [5.0, 5.0, 5.0]},
                             index=["T1", "T2", "T3"])
        normalized, stats = normalize_targets(ExpressionTable(frame))
        assert normalized.scale == "normalized"
        np.testing.assert_allclose(stats.mean, [1.0, math.log(6.0)])
        np.testing.assert_allclose(normalized.values[:, 0], [-math.sqrt(1.5), 0.0, math.sqrt(1.5)])
        np.testing.assert_allclose(normalized.values[:, 1], [0.0, 0.0, 0.0])
        assert stats.std[1] == pytest.approx(1e-8)

        again, reused = normalize_targets(ExpressionTable(frame.iloc[:1]), stats)
        assert reused is stats
        assert again.values[0, 0] == pytest.approx(-math.sqrt(1.5))

    def test_normalize_records(self):
        """Normalised training targets have zero mean per tissue."""
        records = make_records(num_genes=5, isoforms=2)
        normalized, stats = normalize_records(records, ["a", "b", "c"])
        values = np.asarray([r.targets for r in normalized])
        np.testing.assert_allclose(values.mean(axis=0), 0.0, atol=1e-9)
        assert all(r.target_scale == "normalized" for r in normalized)
        unchanged, _ = normalize_records(normalized, ["a", "b", "c"], stats)
        assert unchanged == normalized

    def test_stats_round_trip(self, tmp_path):
        """Stats survive a write and read."""
        stats = NormalizationStats(tissues=["1", "lung"], mean=[0.25, 1.0], std=[1.5, 2.0])
        write_stats(stats, tmp_path / "stats.tsv")
        assert read_stats(tmp_path / "stats.tsv") == stats


class TestSplits:
    """Test gene-level partitioning."""

    def test_genes_never_straddle_partitions(self):
        """All isoforms of a gene land in one partition."""
        records = make_records(num_genes=40, isoforms=3)
        split = split_by_gene(records, test_fraction=0.1, val_fraction=0.05, seed=0)
        partition = split.partition_of()
        by_gene = {}
        for record in records:
            by_gene.setdefault(record.gene_id, set()).add(partition[record.transcript_id])
        assert all(len(parts) == 1 for parts in by_gene.values())
        assert len(split.test_genes) == 4
        assert len(split.validation_genes) == round(0.05 * 36)
        assert len(split.train) + len(split.validation) + len(split.test) == len(records)

    def test_deterministic(self):
        """A seed fixes the split."""
        records = make_records(num_genes=40)
        assert split_by_gene(records, 0.1, 0.1, seed=3) == split_by_gene(records, 0.1, 0.1, seed=3)

    def test_fixed_test_seed_keeps_test_genes(self):
        """A fixed test seed keeps the test genes across run seeds."""
        records = make_records(num_genes=40)
        a = split_by_gene(records, 0.2, 0.1, seed=1, test_seed=0)
        b = split_by_gene(records, 0.2, 0.1, seed=2, test_seed=0)
        assert a.test_genes == b.test_genes
        assert sorted(a.train_genes + a.validation_genes) == sorted(b.train_genes + b.validation_genes)

    def test_too_few_genes(self):
        """Every partition needs at least one gene."""
        with pytest.raises(TooFewGenes):
            split_by_gene(make_records(num_genes=3), 0.1, 0.05, seed=0)

    def test_fractions_checked(self):
        """Fractions must leave room for training."""
        with pytest.raises(InvalidConfig):
            split_by_gene(make_records(), 0.6, 0.5, seed=0)

    def test_split_file_round_trip(self, tmp_path):
        """The split file maps each transcript to its partition."""
        records = make_records(num_genes=20)
        split = split_by_gene(records, 0.2, 0.2, seed=0)
        write_split(split, records, tmp_path / "split.tsv")
        assert read_split(tmp_path / "split.tsv") == split.partition_of()

    def test_covered_records(self):
        """Only protein-only selections drop non-coding transcripts."""
        records = make_records(num_genes=4, isoforms=3)
        assert covered_records(records, ["dna", "protein"]) == records
        kept = covered_records(records, ["protein"])
        assert kept == [r for r in records if r.is_coding]
        assert len(kept) == 8


class TestGeneSums:
    """Test gene-level expression as transcript sums."""

    def test_totals_and_residuals(self):
        """Isoform sums are compared with gene totals."""
        records = make_records(num_genes=2, isoforms=2, num_tissues=2)
        gene = records[0].gene_id
        expected = np.add(records[0].targets, records[1].targets)
        report = check_gene_sum(records, {gene: expected.tolist()})
        assert report[0].gene_id == gene
        np.testing.assert_allclose(report[0].totals, expected)
        np.testing.assert_allclose(report[0].residuals, [0.0, 0.0], atol=1e-12)
        assert report[1].residuals is None

    def test_rejects_normalised_targets(self):
        """Gene sums need untransformed targets."""
        normalized, _ = normalize_records(make_records(), ["a", "b", "c"])
        with pytest.raises(InvalidConfig):
            check_gene_sum(normalized)


class TestDatasetFiles:
    """Test the processed dataset and region table formats."""

    def test_dataset_round_trip(self, tmp_path):
        """Records survive a write and read."""
        records = make_records(num_genes=3)
        write_dataset(records, tmp_path / "dataset.tsv")
        assert read_dataset(tmp_path / "dataset.tsv") == records

    def test_wrong_field_count(self, tmp_path):
        """A short dataset line names its line."""
        records = make_records(num_genes=1, isoforms=1)
        write_dataset(records, tmp_path / "dataset.tsv")
        with open(tmp_path / "dataset.tsv", "a") as handle:
            handle.write("T9\tG9\tACGT\n")
        with pytest.raises(ParseError) as info:
            read_dataset(tmp_path / "dataset.tsv")
        assert info.value.line == 2

    def test_region_table_round_trip(self, tmp_path):
        """Region intervals survive a write and read."""
        regions = {"T1": [RegionInterval(transcript_id="T1", region_name="CDS", start=3, end=9)]}
        write_region_table(regions, tmp_path / "regions.tsv")
        assert read_region_table(tmp_path / "regions.tsv") == regions
