"""
Command-line entry point for IsoFormer.

Every command writes ``manifest.json`` into its ``--out`` directory before
doing any work, resolves its configuration from defaults, an optional
``--config`` key=value file and flags (``--set key=value`` for any key), and
exits with the code of the error that stopped it:

    0 ok, 1 usage/config, 2 data/parse/checkpoint/grid, 3 IO,
    4 non-finite loss, 5 unexpected
"""

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

from pydantic import ValidationError

from .config import ResolvedConfig, configure_logging, flatten, format_value, get_settings, resolve_config
from .exceptions import EXIT_OK, InvalidConfig, IoFailure, UsageError
from .models.config_models import ExperimentConfig
from .models.report_models import RunManifest
from .services import AnalysisService, ExperimentService
from .tokenization import AlphabetKind, build_vocabulary, write_vocabulary
from .utils.error_handlers import ErrorHandler

MANIFEST_FILE = "manifest.json"

error_handler = ErrorHandler("isoformer.cli")


class IsoFormerArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors raise instead of exiting with 2."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _config_keys_epilog() -> str:
    flat = flatten(ExperimentConfig().model_dump(mode="json"))
    lines = ["configuration keys (--set key=value or --config file):"]
    lines.extend(f"  {key} (default: {format_value(flat[key])})" for key in sorted(flat))
    return "\n".join(lines)


# Flag -> dotted config key, per command
FLAG_KEYS = {
    "build-dataset": {"window": "data.window"},
    "gen-synthetic": {
        "genes": "synthetic.num_genes",
        "isoforms": "synthetic.isoforms_per_gene",
        "tissues": "synthetic.num_tissues",
        "window": "synthetic.window",
        "noise": "synthetic.noise",
        "seed": "train.seed",
    },
    "train": {
        "modalities": "model.modalities",
        "strategy": "model.aggregation.strategy",
        "learning_rate": "train.learning_rate",
        "batch_size": "train.batch_size",
        "max_epochs": "train.max_epochs",
        "patience": "train.early_stopping_patience",
        "freeze_encoders": "train.freeze_encoders",
        "warmup": "warmup.encoders",
        "seed": "train.seed",
    },
    "evaluate": {"seed": "train.seed"},
    "ablate": {
        "modalities": "model.modalities",
        "strategy": "model.aggregation.strategy",
        "max_epochs": "train.max_epochs",
        "warmup_steps": "warmup.steps",
    },
    "analyze-attention": {
        "mu": "analysis.mu",
        "alpha": "analysis.alpha",
        "modality": "analysis.modality",
        "max_samples": "analysis.max_samples",
    },
}


def build_parser() -> IsoFormerArgumentParser:
    parser = IsoFormerArgumentParser(
        prog="isoformer",
        description="Multi-modal transcript isoform expression modelling",
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=IsoFormerArgumentParser)
    commands.required = True

    def command(name: str, help_text: str) -> IsoFormerArgumentParser:
        sub = commands.add_parser(
            name, help=help_text, description=help_text,
            epilog=_config_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub.add_argument("--out", required=True, help="Output directory")
        sub.add_argument("--config", help="key=value configuration file")
        sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="Override one configuration key (repeatable)")
        return sub

    sub = command("build-dataset", "Assemble DNA/RNA/protein triplets with expression targets")
    sub.add_argument("--expression", required=True, help="Expression table TSV")
    sub.add_argument("--genome-fasta", required=True, help="Reference genome FASTA")
    sub.add_argument("--rna-fasta", required=True, help="Transcript FASTA")
    sub.add_argument("--protein-fasta", required=True, help="Protein FASTA")
    sub.add_argument("--manifest", required=True, help="Transcript manifest TSV")
    sub.add_argument("--window", required=True, type=int, help="DNA window centred on the TSS")

    sub = command("gen-synthetic", "Generate a planted-signal synthetic dataset")
    sub.add_argument("--genes", type=int, help="Number of genes")
    sub.add_argument("--isoforms", type=int, help="Isoforms per gene")
    sub.add_argument("--tissues", type=int, help="Number of tissues")
    sub.add_argument("--window", type=int, help="DNA window length")
    sub.add_argument("--noise", type=float, help="Target noise standard deviation")
    sub.add_argument("--seed", type=int, help="Run seed")

    sub = command("train", "Train a model and evaluate it on the held-out genes")
    sub.add_argument("--dataset", required=True, help="Processed dataset")
    sub.add_argument("--modalities", help="Comma-separated subset of dna,rna,protein")
    sub.add_argument("--strategy", help="Aggregation strategy")
    sub.add_argument("--learning-rate", type=float)
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--max-epochs", type=int)
    sub.add_argument("--patience", type=int)
    sub.add_argument("--freeze-encoders", action="store_const", const=True)
    sub.add_argument("--warmup", help="Comma-separated encoders to warm up with masked tokens")
    sub.add_argument("--seed", type=int, help="Run seed")

    sub = command("evaluate", "Evaluate a checkpoint")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--stats", help="Training normalisation statistics")
    sub.add_argument("--split", help="Split file from a training run")
    sub.add_argument("--partition", choices=["train", "validation", "test"])
    sub.add_argument("--seed", type=int, help="Seed recorded in the metrics table")

    sub = command("ablate", "Run an ablation grid over conditions and seeds")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--conditions", required=True,
                     help="Preset (modalities, kmer, strategies, warmup or table2..table5) or comma-separated condition names")
    sub.add_argument("--seeds", type=int, default=5, help="Number of seeds, 0..N-1")
    sub.add_argument("--modalities", help="Base modalities for non-modality conditions")
    sub.add_argument("--strategy", help="Base aggregation strategy")
    sub.add_argument("--max-epochs", type=int)
    sub.add_argument("--warmup-steps", type=int)

    sub = command("analyze-attention", "Compare attention ratios of two checkpoints")
    sub.add_argument("--checkpoint-a", required=True, help="Model under study (e.g. multi-modal)")
    sub.add_argument("--checkpoint-b", required=True, help="Reference model (e.g. RNA-only)")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--regions", required=True, help="Region table TSV")
    sub.add_argument("--split", help="Split file; restricts the analysis to --partition")
    sub.add_argument("--partition", default="test", choices=["train", "validation", "test"])
    sub.add_argument("--mu", type=float, help="Attention threshold")
    sub.add_argument("--alpha", type=float, help="Significance level")
    sub.add_argument("--modality", choices=["dna", "rna", "protein"])
    sub.add_argument("--max-samples", type=int)
    sub.add_argument("--dump-matrices", action="store_true", help="Write one delta matrix per region")

    sub = command("dump-vocab", "Write a token vocabulary")
    sub.add_argument("--kind", required=True, choices=[kind.value for kind in AlphabetKind])
    sub.add_argument("--k", type=int, default=1)
    sub.add_argument("--mask", action="store_true", help="Append the MASK token")

    sub = commands.add_parser("rerun", help="Re-execute the command recorded in a manifest")
    sub.add_argument("manifest", help="manifest.json of an earlier run")
    return parser


def parse_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Dotted-key overrides from command flags and ``--set``."""
    overrides: dict[str, Any] = {}
    for flag, key in FLAG_KEYS.get(args.command, {}).items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def hash_inputs(paths: Sequence[Optional[str]]) -> dict[str, str]:
    digests = {}
    for path in paths:
        if path is None:
            continue
        digest = hashlib.sha256()
        try:
            with open(path, "rb") as handle:
                for chunk in iter(lambda: handle.read(1 << 20), b""):
                    digest.update(chunk)
        except OSError as exc:
            raise IoFailure(f"Cannot read input {path}: {exc}") from exc
        digests[str(path)] = digest.hexdigest()
    return digests


def _now() -> datetime:
    return datetime.now(timezone.utc)


def write_manifest(manifest: RunManifest, out_dir: Path) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write manifest in {out_dir}: {exc}") from exc


INPUT_FLAGS = (
    "config", "expression", "genome_fasta", "rna_fasta", "protein_fasta", "manifest",
    "dataset", "checkpoint", "stats", "split", "checkpoint_a", "checkpoint_b", "regions",
)


# Commands

def cmd_build_dataset(args: argparse.Namespace, resolved: ResolvedConfig, out: Path) -> int:
    service = ExperimentService()
    service.build_dataset(args.expression, args.genome_fasta, args.rna_fasta, args.protein_fasta,
                          args.manifest, resolved.config.data.window, out)
    return EXIT_OK


def cmd_gen_synthetic(args: argparse.Namespace, resolved: ResolvedConfig, out: Path) -> int:
    service = ExperimentService()
    service.generate_synthetic(resolved.config.synthetic, resolved.config.train.seed, out)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, resolved: ResolvedConfig, out: Path) -> int:
    service = ExperimentService()
    service.train(args.dataset, resolved.config, resolved.config.train.seed, out)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, resolved: ResolvedConfig, out: Path) -> int:
    service = ExperimentService()
    service.evaluate(args.checkpoint, args.dataset, out, resolved.config.data,
                     stats=args.stats, split=args.split, partition=args.partition,
                     seed=resolved.config.train.seed)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, resolved: ResolvedConfig, out: Path) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    service = ExperimentService()
    service.ablate(args.dataset, resolved.config, args.conditions, list(range(args.seeds)), out)
    return EXIT_OK


def cmd_analyze_attention(args: argparse.Namespace, resolved: ResolvedConfig, out: Path) -> int:
    service = AnalysisService()
    service.analyze(args.checkpoint_a, args.checkpoint_b, args.dataset, args.regions,
                    resolved.config.analysis, out, resolved.config.data,
                    split=args.split, partition=args.partition, dump_matrices=args.dump_matrices)
    return EXIT_OK


def cmd_dump_vocab(args: argparse.Namespace, resolved: ResolvedConfig, out: Path) -> int:
    vocab = build_vocabulary(args.kind, args.k)
    if args.mask:
        vocab = vocab.with_mask()
    path = out / f"vocab_{args.kind}_k{args.k}.txt"
    write_vocabulary(vocab, path)
    error_handler.log_info("Vocabulary written", path=str(path), size=len(vocab))
    return EXIT_OK


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "analyze-attention": cmd_analyze_attention,
    "dump-vocab": cmd_dump_vocab,
}


def cmd_rerun(args: argparse.Namespace) -> int:
    try:
        payload = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"Cannot read manifest {args.manifest}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{args.manifest} is not a run manifest: {exc}") from exc
    try:
        manifest = RunManifest.model_validate(payload)
    except ValidationError as exc:
        raise InvalidConfig(f"{args.manifest} is not a run manifest: {exc}") from exc
    error_handler.log_info("Re-running recorded command", command=manifest.command)
    return run(manifest.argv)


def run(argv: Sequence[str]) -> int:
    """Parse ``argv`` and execute the command; returns the exit code."""
    argv = list(argv)
    args = build_parser().parse_args(argv)
    if args.command == "rerun":
        return cmd_rerun(args)

    out = Path(args.out)
    resolved = resolve_config(args.config, parse_overrides(args))
    inputs = hash_inputs([getattr(args, name, None) for name in INPUT_FLAGS])
    manifest = RunManifest(
        command=args.command,
        argv=argv,
        config=resolved.as_manifest(),
        seed=resolved.config.train.seed,
        inputs=inputs,
        started_at=_now(),
        version=get_settings().app_version,
    )
    write_manifest(manifest, out)

    try:
        code = COMMANDS[args.command](args, resolved, out)
    except Exception as exc:
        code = error_handler.handle(exc, args.command)
        manifest.extra["error"] = error_handler.create_error_report(code, str(exc))
        manifest.status = "failed"
    else:
        manifest.status = "ok"
    manifest.exit_code = code
    manifest.finished_at = _now()
    write_manifest(manifest, out)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the ``isoformer`` console script."""
    settings = get_settings()
    configure_logging(settings)
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return run(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except Exception as exc:
        return error_handler.handle(exc, argv[0] if argv else "isoformer")


if __name__ == "__main__":
    sys.exit(main())
