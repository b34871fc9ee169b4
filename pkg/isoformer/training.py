"""
Training, evaluation, masked-language-model warm-up and ablation sweeps.

The objective is the squared error summed over tissues, averaged over the
samples of a batch. Every source of randomness (initialisation, shuffling,
dropout, masking) comes from named streams of the run seed, so a run is
reproducible bit for bit on the same hardware.
"""

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from pydantic import ValidationError
from torch import nn
from torch.utils.data import DataLoader

from .aggregation import reset_linear_and_norm
from .data import covered_records, normalize_records, split_by_gene
from .dataset import EncodedRecord, IsoformDataset, RecordTokenizer, collate_records
from .encoder import SequenceEncoder
from .exceptions import (
    EmptyDataset,
    InvalidConfig,
    IoFailure,
    MissingMaskToken,
    NonFiniteLoss,
    ShapeMismatch,
)
from .metrics import metrics_report
from .models.config_models import ExperimentConfig, IsoFormerConfig, TrainConfig, WarmupConfig
from .models.data_models import DatasetSplit, NormalizationStats, TranscriptRecord
from .models.report_models import (
    AblationRow,
    AblationRun,
    AblationTable,
    EpochRecord,
    MetricsReport,
)
from .network import IsoFormer, build_model, predict
from .tokenization import PAD_ID, TokenSequence, Vocabulary
from .utils.seeding import seeded_torch, torch_generator

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# Objective

def expression_loss(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """
    Mean over samples of the per-sample sum of squared errors over tissues.

    Raises:
        ShapeMismatch: If the shapes differ
    """
    if predictions.shape != targets.shape:
        raise ShapeMismatch(f"predictions {tuple(predictions.shape)} vs targets {tuple(targets.shape)}")
    squared = (predictions - targets) ** 2
    if squared.dim() == 1:
        return squared.sum()
    return squared.sum(dim=-1).mean()


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """
    Loss value and its gradient with respect to ``pred``.

    For a single prediction vector the gradient is 2 (pred - target); for a
    (B, T) batch it carries the 1/B of the batch mean.

    Raises:
        ShapeMismatch: If the shapes differ
    """
    pred_t = torch.as_tensor(np.asarray(pred, dtype=np.float64)).requires_grad_(True)
    target_t = torch.as_tensor(np.asarray(target, dtype=np.float64))
    loss = expression_loss(pred_t, target_t)
    (grad,) = torch.autograd.grad(loss, pred_t)
    return float(loss), grad.numpy()


# Early stopping

class EarlyStopping:
    """
    Stop when the validation loss has not improved for ``patience`` epochs.

    An epoch improves only if it beats the best loss by more than
    ``min_delta``; the weights of the best epoch are kept for restoring.

    Attributes:
        counter: Consecutive epochs without improvement
        best_loss: Best validation loss seen
        best_epoch: Epoch of the best loss
        early_stop: Whether training should stop
    """

    def __init__(self, patience: int = 3, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.counter = 0
        self.best_loss: Optional[float] = None
        self.best_epoch = 0
        self.best_state: Optional[dict[str, torch.Tensor]] = None
        self.early_stop = False

    def __call__(self, val_loss: float, epoch: int, model: Optional[nn.Module] = None) -> bool:
        """Record an epoch; returns True when it is the new best."""
        if self.best_loss is None or self.best_loss - val_loss > self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.counter = 0
            if model is not None:
                self.best_state = copy.deepcopy(model.state_dict())
            return True
        self.counter += 1
        logger.debug("Early stopping counter %d of %d", self.counter, self.patience)
        if self.counter >= self.patience:
            self.early_stop = True
        return False


# Training and evaluation

def _check_finite(loss: torch.Tensor, where: str, transcript_ids: Sequence[str]) -> None:
    if not torch.isfinite(loss):
        shown = ", ".join(transcript_ids[:5])
        raise NonFiniteLoss(f"Non-finite loss {float(loss)} at {where} (batch starts with {shown})")


def validation_loss(model: IsoFormer, records: Sequence[EncodedRecord], batch_size: int) -> float:
    """Objective over ``records`` in eval mode, weighted by batch size."""
    was_training = model.training
    model.eval()
    total = 0.0
    try:
        with torch.no_grad():
            for start in range(0, len(records), batch_size):
                batch = collate_records(list(records[start:start + batch_size]))
                output = model(batch.ids, batch.masks, batch.presence)
                loss = expression_loss(output.predictions, batch.targets)
                _check_finite(loss, "validation", batch.transcript_ids)
                total += float(loss) * len(batch)
    finally:
        model.train(was_training)
    return total / len(records)


def evaluate(model: IsoFormer,
             records: Sequence[EncodedRecord],
             tissues: Optional[Sequence[str]] = None,
             batch_size: int = 64) -> MetricsReport:
    """
    Per-tissue metrics of the model on ``records``.

    Raises:
        EmptyDataset: If there are no records
    """
    if not records:
        raise EmptyDataset("Nothing to evaluate")
    tissues = list(tissues) if tissues is not None else model.tissue_names
    predictions = predict(model, records, batch_size)
    targets = np.stack([record.targets for record in records])
    return metrics_report(predictions, targets, tissues)


def train(model: IsoFormer,
          train_records: Sequence[EncodedRecord],
          val_records: Sequence[EncodedRecord],
          config: TrainConfig,
          tissues: Optional[Sequence[str]] = None) -> tuple[IsoFormer, MetricsReport, list[EpochRecord]]:
    """
    Fit the model with Adam and early stopping on the validation loss.

    Args:
        model: Model to train in place
        train_records: Tokenized training records
        val_records: Tokenized validation records
        config: Optimisation settings; ``config.seed`` drives shuffling and dropout
        tissues: Tissue names for the report; defaults to the model's

    Returns:
        tuple: The model with its best-validation weights restored, the
            validation metrics of those weights (with the loss curve) and
            the epoch history

    Raises:
        EmptyDataset: If either split is empty
        NonFiniteLoss: If a training or validation loss is NaN or infinite
    """
    if not train_records:
        raise EmptyDataset("Training split is empty")
    if not val_records:
        raise EmptyDataset("Validation split is empty")

    model.set_encoders_trainable(not config.freeze_encoders)
    parameters = [parameter for parameter in model.parameters() if parameter.requires_grad]
    optimizer = torch.optim.Adam(
        parameters,
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_epsilon,
    )
    loader = DataLoader(
        IsoformDataset(train_records),
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch_generator(config.seed, "shuffle"),
        collate_fn=collate_records,
    )
    stopper = EarlyStopping(config.early_stopping_patience, config.min_delta)
    history: list[EpochRecord] = []
    step = 0

    with seeded_torch(config.seed, "dropout"):
        for epoch in range(1, config.max_epochs + 1):
            model.train()
            total, seen = 0.0, 0
            for batch in loader:
                optimizer.zero_grad()
                output = model(batch.ids, batch.masks, batch.presence)
                loss = expression_loss(output.predictions, batch.targets)
                _check_finite(loss, f"epoch {epoch}, step {step + 1}", batch.transcript_ids)
                loss.backward()
                optimizer.step()
                total += float(loss) * len(batch)
                seen += len(batch)
                step += 1
                if config.max_steps is not None and step >= config.max_steps:
                    break

            val_loss = validation_loss(model, val_records, config.batch_size)
            improved = stopper(val_loss, epoch, model)
            history.append(EpochRecord(epoch=epoch, train_loss=total / seen, val_loss=val_loss, improved=improved))
            logger.info("Epoch %d: train loss %.6f, validation loss %.6f%s",
                        epoch, total / seen, val_loss, " (best)" if improved else "")
            if stopper.early_stop:
                logger.info("Early stopping after epoch %d; best epoch %d", epoch, stopper.best_epoch)
                break
            if config.max_steps is not None and step >= config.max_steps:
                break

    if stopper.best_state is not None:
        model.load_state_dict(stopper.best_state)
    model.eval()
    report = evaluate(model, val_records, tissues, config.batch_size)
    report.loss_curve = history
    return model, report, history


# Masked-language-model warm-up

@dataclass
class WarmupResult:
    encoder: SequenceEncoder
    losses: list[float] = field(default_factory=list)


def _pad(sequences: Sequence[TokenSequence]) -> torch.Tensor:
    length = max(len(sequence) for sequence in sequences)
    ids = torch.full((len(sequences), length), PAD_ID, dtype=torch.long)
    for row, sequence in enumerate(sequences):
        ids[row, : len(sequence)] = torch.tensor(sequence.ids, dtype=torch.long)
    return ids


def mlm_warmup(encoder: SequenceEncoder,
               sequences: Sequence[TokenSequence],
               vocabulary: Vocabulary,
               config: WarmupConfig,
               seed: int,
               stream: str = "warmup") -> WarmupResult:
    """
    Masked-token training of an encoder alone, emulating pre-training.

    Each real token is replaced by MASK with probability ``mask_fraction``
    (independently, so the masked count is binomial); a temporary linear
    head predicts the original ids at the masked positions.

    Args:
        encoder: Encoder to warm up; it is copied, not modified
        sequences: Token sequences of the encoder's modality
        vocabulary: Vocabulary of those sequences, including MASK
        config: Masking rate, steps and optimiser settings
        seed: Run seed
        stream: Stream prefix, so encoders warmed in one run draw differently

    Returns:
        WarmupResult: The warmed copy and the per-step losses

    Raises:
        MissingMaskToken: If the vocabulary has no MASK token
        EmptyDataset: If there are no sequences
        NonFiniteLoss: If the loss diverges
    """
    if vocabulary.mask_id is None:
        raise MissingMaskToken("Warm-up needs a vocabulary with a MASK token")
    if len(vocabulary) > encoder.config.vocab_size:
        raise InvalidConfig(
            f"Vocabulary of {len(vocabulary)} tokens exceeds encoder vocab_size {encoder.config.vocab_size}"
        )
    if not sequences:
        raise EmptyDataset("No sequences to warm up on")

    warmed = copy.deepcopy(encoder)
    warmed.requires_grad_(True)
    if config.steps == 0:
        return WarmupResult(warmed)

    with seeded_torch(seed, f"{stream}:head"):
        head = nn.Linear(warmed.embed_dim, warmed.config.vocab_size)
        reset_linear_and_norm(head)
    optimizer = torch.optim.Adam(list(warmed.parameters()) + list(head.parameters()), lr=config.learning_rate)
    sampler = torch_generator(seed, f"{stream}:batches")
    masker = torch_generator(seed, f"{stream}:mask")
    losses = []

    warmed.train()
    with seeded_torch(seed, f"{stream}:dropout"):
        for step in range(1, config.steps + 1):
            picks = torch.randint(len(sequences), (config.batch_size,), generator=sampler)
            ids = _pad([sequences[int(index)] for index in picks])
            real = ids != PAD_ID
            masked = (torch.rand(ids.shape, generator=masker) < config.mask_fraction) & real
            if not bool(masked.any()):
                masked[0, 0] = True
            inputs = ids.masked_fill(masked, vocabulary.mask_id)

            optimizer.zero_grad()
            hidden = warmed(inputs, real).hidden
            loss = F.cross_entropy(head(hidden[masked]), ids[masked])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"Non-finite warm-up loss at step {step}")
            loss.backward()
            optimizer.step()
            losses.append(float(loss))

    warmed.eval()
    logger.info("Warm-up (%s): %d steps, loss %.4f -> %.4f", stream, config.steps, losses[0], losses[-1])
    return WarmupResult(warmed, losses)


# Full runs

@dataclass
class ExperimentResult:
    """Everything one seeded run produces."""

    model: IsoFormer
    report: MetricsReport
    validation_report: MetricsReport
    history: list[EpochRecord]
    split: DatasetSplit
    stats: NormalizationStats
    tokenizer: RecordTokenizer
    warmup_losses: dict[str, list[float]] = field(default_factory=dict)


def model_config_for(records: Sequence[TranscriptRecord], config: ExperimentConfig) -> IsoFormerConfig:
    """
    Fit the model section to the dataset: tissue count from the targets,
    MASK tokens whenever a warm-up will run.
    """
    num_tissues = records[0].num_tissues
    names = config.model.tissue_names if len(config.model.tissue_names) == num_tissues else []
    warming = bool(config.warmup.encoders) and config.warmup.steps > 0
    return IsoFormerConfig.model_validate({
        **config.model.model_dump(),
        "num_tissues": num_tissues,
        "tissue_names": names,
        "add_mask_token": config.model.add_mask_token or warming,
    })


def run_experiment(records: Sequence[TranscriptRecord],
                   config: ExperimentConfig,
                   seed: int,
                   split: Optional[DatasetSplit] = None) -> ExperimentResult:
    """
    Split, normalise, tokenize, build, warm up, train and test one model.

    The test genes come from ``data.test_seed`` and stay fixed across run
    seeds; the validation genes and all model randomness follow ``seed``.

    Args:
        records: Full dataset with raw or log-scale targets
        config: Experiment configuration
        seed: Run seed
        split: Precomputed split to reuse instead of splitting again

    Returns:
        ExperimentResult: Trained model, test metrics and run artefacts

    Raises:
        EmptyDataset: If ``records`` is empty, or a partition has no record
            carrying an enabled modality
        TooFewGenes: If a partition would be empty
    """
    if not records:
        raise EmptyDataset("No records")
    model_config = model_config_for(records, config)
    tissues = model_config.tissue_names
    if split is None:
        split = split_by_gene(records, config.data.test_fraction, config.train.val_fraction,
                              seed, config.data.test_seed)

    by_id = {record.transcript_id: record for record in records}

    def partition(ids: Sequence[str]) -> list[TranscriptRecord]:
        return covered_records([by_id[tid] for tid in ids], model_config.modalities)

    parts = {name: partition(getattr(split, name)) for name in ("train", "validation", "test")}
    for name, part in parts.items():
        if not part:
            raise EmptyDataset(f"No {name} records carry any of {model_config.modalities}")
    train_norm, stats = normalize_records(parts["train"], tissues)
    val_norm, _ = normalize_records(parts["validation"], tissues, stats)
    test_norm, _ = normalize_records(parts["test"], tissues, stats)

    tokenizer = RecordTokenizer(model_config, config.data)
    train_encoded = tokenizer.encode_all(train_norm)
    val_encoded = tokenizer.encode_all(val_norm)
    test_encoded = tokenizer.encode_all(test_norm)

    model = build_model(model_config, seed)
    warmup_losses: dict[str, list[float]] = {}
    if config.warmup.steps > 0:
        for modality in config.warmup.encoders:
            if modality not in model.modalities:
                continue
            sequences = [r.tokens[modality] for r in train_encoded if r.tokens.get(modality) is not None]
            result = mlm_warmup(model.encoders[modality], sequences, tokenizer.vocabularies[modality],
                                config.warmup, seed, f"warmup:{modality}")
            model.encoders[modality].load_state_dict(result.encoder.state_dict())
            warmup_losses[modality] = result.losses

    train_config = config.train.model_copy(update={"seed": seed})
    model, validation_report, history = train(model, train_encoded, val_encoded, train_config, tissues)
    report = evaluate(model, test_encoded, tissues, train_config.batch_size)
    logger.info("Seed %d: test R2 %s, Spearman %s over %d transcripts",
                seed, _fmt(report.r2), _fmt(report.spearman), report.num_samples)
    return ExperimentResult(model, report, validation_report, history, split, stats, tokenizer, warmup_losses)


def _fmt(value: Optional[float]) -> str:
    return "NA" if value is None else f"{value:.4f}"


# Ablations

@dataclass(frozen=True)
class AblationCondition:
    """A named set of dotted-key overrides applied to the base config."""

    name: str
    overrides: tuple[tuple[str, Any], ...] = ()

    def apply(self, config: ExperimentConfig) -> ExperimentConfig:
        data = config.model_dump()
        for dotted, value in self.overrides:
            node = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                node = node[part]
            node[leaf] = value
        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as exc:
            raise InvalidConfig(f"Condition {self.name}: {exc}") from exc


MODALITY_CONDITIONS = ["dna", "rna", "protein", "dna+protein", "dna+rna", "dna+rna+protein"]
STRATEGY_CONDITIONS = [
    "cross_attention",
    "resampler_cross_attention",
    "linear_projection_resampler",
    "c_abstractor",
]
WARMUP_CONDITIONS = {
    "all_warmed": ["dna", "rna", "protein"],
    "dna_cold": ["rna", "protein"],
    "rna_cold": ["dna", "protein"],
    "all_cold": [],
}
PRESETS = {
    "modalities": MODALITY_CONDITIONS,
    "kmer": ["dna_k6", "dna_k1", "dna+rna+protein_k6", "dna+rna+protein_k1"],
    "strategies": STRATEGY_CONDITIONS,
    "warmup": list(WARMUP_CONDITIONS),
}
# numbered aliases
PRESETS.update({
    "table2": PRESETS["modalities"],
    "table3": PRESETS["kmer"],
    "table4": PRESETS["strategies"],
    "table5": PRESETS["warmup"],
})


def _modalities(name: str) -> Optional[list[str]]:
    parts = name.split("+")
    if all(part in ("dna", "rna", "protein") for part in parts) and len(set(parts)) == len(parts):
        return parts
    return None


def parse_condition(name: str) -> AblationCondition:
    """
    Resolve a condition name.

    Accepted forms: modality combinations (``dna+rna``), combinations with
    a DNA k-mer size (``dna_k1``), aggregation strategy names and warm-up
    toggles (``all_warmed``, ``dna_cold``, ``rna_cold``, ``all_cold``).

    Raises:
        InvalidConfig: For an unknown name
    """
    name = name.strip()
    modalities = _modalities(name)
    if modalities is not None:
        return AblationCondition(name, (("model.modalities", modalities),))
    if "_k" in name:
        prefix, _, k = name.rpartition("_k")
        modalities = _modalities(prefix)
        if modalities is not None and k.isdigit():
            return AblationCondition(name, (("model.modalities", modalities), ("model.dna_k", int(k))))
    if name in STRATEGY_CONDITIONS:
        return AblationCondition(name, (("model.aggregation.strategy", name),))
    if name in WARMUP_CONDITIONS:
        return AblationCondition(name, (
            ("model.modalities", ["dna", "rna", "protein"]),
            ("warmup.encoders", WARMUP_CONDITIONS[name]),
        ))
    raise InvalidConfig(f"Unknown ablation condition {name!r}")


def ablation_conditions(selection: Union[str, Sequence[str]]) -> list[AblationCondition]:
    """Expand a preset name or a comma-separated list of condition names."""
    names = selection.split(",") if isinstance(selection, str) else list(selection)
    expanded: list[str] = []
    for name in (n.strip() for n in names if n.strip()):
        expanded.extend(PRESETS.get(name, [name]))
    if not expanded:
        raise InvalidConfig("No ablation conditions given")
    return [parse_condition(name) for name in expanded]


def _mean_std(values: Sequence[Optional[float]]) -> tuple[float, float]:
    array = np.asarray([np.nan if v is None else v for v in values], dtype=np.float64)
    if np.all(np.isnan(array)):
        return float("nan"), float("nan")
    return float(np.nanmean(array)), float(np.nanstd(array))


def run_ablation(records: Sequence[TranscriptRecord],
                 base: ExperimentConfig,
                 conditions: Union[str, Sequence[str]],
                 seeds: Sequence[int]) -> AblationTable:
    """
    Train every condition under every seed.

    Warm-up conditions are compared with MASK tokens in every vocabulary so
    that warmed and cold models share shapes and initial weights.

    Returns:
        AblationTable: One run per (condition, seed) and one row per
            condition with mean and population std across seeds
    """
    if not seeds:
        raise InvalidConfig("At least one seed is required")
    resolved = ablation_conditions(conditions)
    if any(condition.name in WARMUP_CONDITIONS for condition in resolved):
        base = AblationCondition("mask", (("model.add_mask_token", True),)).apply(base)
        if base.warmup.steps == 0:
            logger.warning("Warm-up conditions requested with warmup.steps=0; all runs will be cold")

    runs: list[AblationRun] = []
    rows: list[AblationRow] = []
    for condition in resolved:
        config = condition.apply(base)
        reports = []
        for seed in seeds:
            logger.info("Ablation %s, seed %d", condition.name, seed)
            result = run_experiment(records, config, seed)
            runs.append(AblationRun(condition=condition.name, seed=seed, report=result.report))
            reports.append(result.report)
        r2_mean, r2_std = _mean_std([report.r2 for report in reports])
        rho_mean, rho_std = _mean_std([report.spearman for report in reports])
        rows.append(AblationRow(
            condition=condition.name,
            num_seeds=len(seeds),
            r2_mean=r2_mean,
            r2_std=r2_std,
            spearman_mean=rho_mean,
            spearman_std=rho_std,
        ))
    return AblationTable(rows=rows, runs=runs)


# Report files

def _write_frame(frame: pd.DataFrame, path: PathLike, sep: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, sep=sep, index=False, na_rep="NA", float_format="%.10g")
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc


def metrics_frame(runs: Sequence[tuple[str, int, MetricsReport]]) -> pd.DataFrame:
    """Rows of (condition, seed, tissue, r2, spearman), plus a macro row per run."""
    rows = []
    for condition, seed, report in runs:
        for tissue in report.tissues:
            rows.append((condition, seed, tissue.tissue, tissue.r2, tissue.spearman))
        rows.append((condition, seed, "macro", report.r2, report.spearman))
    return pd.DataFrame(rows, columns=["condition", "seed", "tissue", "r2", "spearman"])


def write_metrics_tsv(runs: Sequence[tuple[str, int, MetricsReport]], path: PathLike) -> None:
    _write_frame(metrics_frame(runs), path, "\t")


def write_history_csv(history: Sequence[EpochRecord], path: PathLike) -> None:
    frame = pd.DataFrame([record.model_dump() for record in history],
                         columns=["epoch", "train_loss", "val_loss", "improved"])
    _write_frame(frame, path, ",")


def write_ablation_tsv(table: AblationTable, path: PathLike) -> None:
    frame = pd.DataFrame([row.model_dump() for row in table.rows],
                         columns=list(AblationRow.model_fields))
    _write_frame(frame, path, "\t")
