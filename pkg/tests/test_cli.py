"""
End-to-end tests of the command-line entry point: exit codes, run
manifests and the files each command writes.
"""

import json
import random

import pandas as pd
import pytest

from isoformer.cli import MANIFEST_FILE, build_parser, main, parse_overrides
from isoformer.exceptions import EXIT_IO, EXIT_OK, EXIT_USAGE, UsageError
from tests.helpers import random_bases, write_fasta

SMALL_SYNTHETIC = ["--genes", "20", "--isoforms", "2", "--tissues", "3", "--window", "64", "--noise", "0"]
QUICK_TRAIN = ["--max-epochs", "1", "--batch-size", "8"]


def read_manifest(directory):
    return json.loads((directory / MANIFEST_FILE).read_text())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A synthetic dataset and one trained run shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    data_dir, train_dir = root / "data", root / "train"
    # all coding, so protein-only conditions keep every partition populated
    assert main(["gen-synthetic", "--out", str(data_dir), "--seed", "3", *SMALL_SYNTHETIC,
                 "--set", "synthetic.coding_fraction=1.0"]) == EXIT_OK
    assert main(["train", "--out", str(train_dir), "--dataset", str(data_dir / "dataset.tsv"),
                 "--seed", "0", *QUICK_TRAIN]) == EXIT_OK
    return root


class TestParser:
    """Test argument parsing and flag mapping."""

    def test_flags_map_to_config_keys(self):
        """Dedicated flags and --set pairs become dotted config keys."""
        args = build_parser().parse_args([
            "train", "--out", "o", "--dataset", "d", "--learning-rate", "0.01",
            "--freeze-encoders", "--set", "train.min_delta=0.1",
        ])
        assert parse_overrides(args) == {
            "train.learning_rate": 0.01,
            "train.freeze_encoders": True,
            "train.min_delta": "0.1",
        }

    def test_parser_errors_raise(self):
        """argparse failures raise instead of exiting."""
        with pytest.raises(UsageError):
            build_parser().parse_args(["train", "--out", "o"])

    def test_malformed_set(self):
        """A --set value without '=' is a usage error."""
        args = build_parser().parse_args(["dump-vocab", "--out", "o", "--kind", "nucleotide", "--set", "oops"])
        with pytest.raises(UsageError):
            parse_overrides(args)


class TestCommands:
    """Test commands end to end."""

    def test_synthetic_outputs(self, workspace):
        """gen-synthetic writes its files and a manifest with value sources."""
        data_dir = workspace / "data"
        for name in ("dataset.tsv", "ground_truth.yaml", "regions.tsv", MANIFEST_FILE):
            assert (data_dir / name).exists(), name
        manifest = read_manifest(data_dir)
        assert manifest["status"] == "ok"
        assert manifest["exit_code"] == 0
        assert manifest["config"]["synthetic.num_genes"] == {"value": "20", "source": "flag"}
        assert manifest["config"]["train.learning_rate"]["source"] == "default"

    def test_train_outputs(self, workspace):
        """train writes the checkpoint, history, metrics, stats and split."""
        train_dir = workspace / "train"
        for name in ("checkpoint.isof", "history.csv", "metrics.tsv", "stats.tsv", "split.tsv"):
            assert (train_dir / name).exists(), name
        metrics = pd.read_csv(train_dir / "metrics.tsv", sep="\t")
        assert metrics["tissue"].tolist() == ["tissue_1", "tissue_2", "tissue_3", "macro"]
        manifest = read_manifest(train_dir)
        assert str(workspace / "data" / "dataset.tsv") in manifest["inputs"]
        assert manifest["seed"] == 0

    def test_evaluate_test_partition(self, workspace):
        """Re-evaluating the test partition reproduces the training metrics."""
        train_dir, out = workspace / "train", workspace / "eval"
        code = main([
            "evaluate", "--out", str(out),
            "--checkpoint", str(train_dir / "checkpoint.isof"),
            "--dataset", str(workspace / "data" / "dataset.tsv"),
            "--stats", str(train_dir / "stats.tsv"),
            "--split", str(train_dir / "split.tsv"), "--partition", "test",
        ])
        assert code == EXIT_OK
        metrics = pd.read_csv(out / "metrics.tsv", sep="\t")
        assert set(metrics["condition"]) == {"test"}
        trained = pd.read_csv(train_dir / "metrics.tsv", sep="\t")
        assert metrics["r2"].tolist() == pytest.approx(trained["r2"].tolist(), abs=1e-4, nan_ok=True)

    def test_analyze_attention(self, workspace):
        """A checkpoint compared with itself selects no region cell."""
        checkpoint = str(workspace / "train" / "checkpoint.isof")
        out = workspace / "attention"
        code = main([
            "analyze-attention", "--out", str(out),
            "--checkpoint-a", checkpoint, "--checkpoint-b", checkpoint,
            "--dataset", str(workspace / "data" / "dataset.tsv"),
            "--regions", str(workspace / "data" / "regions.tsv"),
            "--max-samples", "4", "--dump-matrices",
        ])
        assert code == EXIT_OK
        frame = pd.read_csv(out / "attention.tsv", sep="\t")
        assert set(frame["region"]) == {"5UTR", "CDS", "3UTR"}
        assert not frame["selected"].any()
        assert (out / "delta_CDS.txt").exists()

    def test_ablate_modality_grid(self, workspace):
        """The numbered modality preset runs six conditions under every seed."""
        out = workspace / "ablate_modalities"
        code = main(["ablate", "--out", str(out), "--dataset", str(workspace / "data" / "dataset.tsv"),
                     "--conditions", "table2", "--seeds", "2", "--max-epochs", "1",
                     "--set", "train.batch_size=8"])
        assert code == EXIT_OK
        table = pd.read_csv(out / "ablation.tsv", sep="\t")
        assert table["condition"].tolist() == ["dna", "rna", "protein", "dna+protein", "dna+rna", "dna+rna+protein"]
        assert (table["num_seeds"] == 2).all()
        metrics = pd.read_csv(out / "metrics.tsv", sep="\t")
        runs = metrics[metrics["tissue"] == "macro"]
        assert len(runs) == 12
        assert read_manifest(out)["status"] == "ok"

    def test_ablate_warmup_grid(self, workspace):
        """The numbered warm-up preset lists the four pre-training toggles."""
        out = workspace / "ablate_warmup"
        code = main(["ablate", "--out", str(out), "--dataset", str(workspace / "data" / "dataset.tsv"),
                     "--conditions", "table5", "--seeds", "1", "--max-epochs", "1", "--warmup-steps", "2",
                     "--set", "train.batch_size=8", "--set", "warmup.batch_size=4"])
        assert code == EXIT_OK
        table = pd.read_csv(out / "ablation.tsv", sep="\t")
        assert table["condition"].tolist() == ["all_warmed", "dna_cold", "rna_cold", "all_cold"]
        assert (table["r2_std"] == 0.0).all()

    def test_train_is_reproducible(self, workspace, tmp_path):
        """Two runs with one seed write the same metrics and checkpoint bytes."""
        outputs = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert main(["train", "--out", str(out), "--dataset", str(workspace / "data" / "dataset.tsv"),
                         "--seed", "5", *QUICK_TRAIN]) == EXIT_OK
            outputs.append(out)
        first, second = outputs
        for name in ("metrics.tsv", "checkpoint.isof"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_dump_vocab_and_rerun(self, tmp_path):
        """rerun replays a recorded command."""
        out = tmp_path / "vocab"
        assert main(["dump-vocab", "--out", str(out), "--kind", "nucleotide", "--k", "6", "--mask"]) == EXIT_OK
        path = out / "vocab_nucleotide_k6.txt"
        assert len(path.read_text().splitlines()) == 4103
        path.unlink()
        assert main(["rerun", str(out / MANIFEST_FILE)]) == EXIT_OK
        assert path.exists()


class TestExitCodes:
    """Test failures map to exit codes and failed manifests."""

    def test_missing_required_flag(self, tmp_path):
        """A missing required flag exits with the usage code."""
        assert main(["train", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_command(self):
        """An unknown command exits with the usage code."""
        assert main(["fly"]) == EXIT_USAGE

    def test_unknown_config_key(self, tmp_path):
        """An unknown --set key exits with the usage code."""
        code = main(["dump-vocab", "--out", str(tmp_path), "--kind", "amino-acid", "--set", "train.lr=1"])
        assert code == EXIT_USAGE

    def test_missing_input_file(self, tmp_path):
        """A missing dataset exits with the IO code."""
        code = main(["train", "--out", str(tmp_path / "run"), "--dataset", str(tmp_path / "absent.tsv")])
        assert code == EXIT_IO

    def test_failed_command_records_error(self, workspace, tmp_path):
        """A failed command marks its manifest failed with the error."""
        out = tmp_path / "ablate"
        code = main(["ablate", "--out", str(out), "--dataset", str(workspace / "data" / "dataset.tsv"),
                     "--conditions", "rna", "--seeds", "0"])
        assert code == EXIT_USAGE
        manifest = read_manifest(out)
        assert manifest["status"] == "failed"
        assert manifest["exit_code"] == EXIT_USAGE
        assert manifest["extra"]["error"]["message"] == "--seeds must be at least 1"

    def test_invalid_amino_acid_k(self, tmp_path):
        """Amino-acid vocabularies only take k=1."""
        code = main(["dump-vocab", "--out", str(tmp_path), "--kind", "amino-acid", "--k", "2"])
        assert code == 2
        assert read_manifest(tmp_path)["status"] == "failed"


@pytest.fixture
def source_files(tmp_path):
    """Genome, transcript, protein and expression files for three transcripts."""
    rng = random.Random(4)
    write_fasta(tmp_path / "genome.fa", {"chr1": random_bases(rng, 200)})
    write_fasta(tmp_path / "rna.fa", {f"T{i}": random_bases(rng, 24) for i in (1, 2, 3)})
    write_fasta(tmp_path / "protein.fa", {"P1": "MKVL*", "P3": "MAGW"})
    (tmp_path / "expression.tsv").write_text(
        "transcript_id\tliver\tlung\n"
        "T1\t1.5\t0\n"
        "T2\t3\t4\n"
        "T3\t0.5\t2\n"
    )
    return tmp_path


def write_manifest(directory, third_tss: int) -> None:
    (directory / "manifest.tsv").write_text(
        "transcript_id\tgene_id\tprotein_id\tchromosome\ttss\tstrand\n"
        "T1\tG1\tP1\tchr1\t100\t+\n"
        "T2\tG1\t\tchr1\t60\t-\n"
        f"T3\tG2\tP3\tchr1\t{third_tss}\t+\n"
    )


def build_dataset_args(directory, out):
    return [
        "build-dataset", "--out", str(out),
        "--expression", str(directory / "expression.tsv"),
        "--genome-fasta", str(directory / "genome.fa"),
        "--rna-fasta", str(directory / "rna.fa"),
        "--protein-fasta", str(directory / "protein.fa"),
        "--manifest", str(directory / "manifest.tsv"),
        "--window", "10",
    ]


class TestBuildDataset:
    """Test the build-dataset command."""

    def test_one_line_per_transcript(self, source_files):
        """Three complete transcripts give three dataset lines and no skips."""
        write_manifest(source_files, third_tss=150)
        out = source_files / "built"
        assert main(build_dataset_args(source_files, out)) == EXIT_OK
        lines = (out / "dataset.tsv").read_text().splitlines()
        assert [line.split("\t")[0] for line in lines] == ["T1", "T2", "T3"]
        skipped = pd.read_csv(out / "skipped.tsv", sep="\t")
        assert skipped.empty

    def test_out_of_bounds_tss_is_reported(self, source_files):
        """A TSS too close to the chromosome start drops that transcript only."""
        write_manifest(source_files, third_tss=3)
        out = source_files / "built"
        assert main(build_dataset_args(source_files, out)) == EXIT_OK
        lines = (out / "dataset.tsv").read_text().splitlines()
        assert [line.split("\t")[0] for line in lines] == ["T1", "T2"]
        skipped = pd.read_csv(out / "skipped.tsv", sep="\t")
        assert skipped.to_dict("records") == [{"transcript_id": "T3", "reason": "window_out_of_bounds"}]
