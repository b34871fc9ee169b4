"""
Shared builders for IsoFormer tests: tiny configs, random records and
small input files.
"""

import random
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch

from isoformer.models.config_models import (
    AggregationConfig,
    EncoderConfig,
    ExperimentConfig,
    IsoFormerConfig,
    TrainConfig,
)
from isoformer.models.data_models import TranscriptRecord

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"


def tiny_encoder(**overrides) -> EncoderConfig:
    values = dict(vocab_size=6, embed_dim=8, num_layers=1, num_heads=2, ffn_dim=16, max_tokens=64)
    values.update(overrides)
    return EncoderConfig(**values)


def tiny_model_config(modalities: Sequence[str] = ("dna", "rna", "protein"),
                      strategy: str = "cross_attention",
                      num_tissues: int = 3,
                      k: int = 1,
                      **overrides) -> IsoFormerConfig:
    """Small model: 8-dim encoders, shared_dim 8, one layer each."""
    values = dict(
        modalities=list(modalities),
        dna_k=k,
        rna_k=k,
        dna_encoder=tiny_encoder(),
        rna_encoder=tiny_encoder(),
        protein_encoder=tiny_encoder(embed_dim=12, num_heads=3),
        aggregation=AggregationConfig(
            strategy=strategy, shared_dim=8, num_heads=2, ffn_multiplier=2, resampled_tokens=4
        ),
        num_tissues=num_tissues,
    )
    values.update(overrides)
    return IsoFormerConfig(**values)


def tiny_experiment_config(**model_overrides) -> ExperimentConfig:
    return ExperimentConfig(
        model=tiny_model_config(**model_overrides),
        train=TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=2, early_stopping_patience=1,
                          val_fraction=0.2),
    )


def random_bases(rng: random.Random, length: int) -> str:
    return "".join(rng.choice("ACGT") for _ in range(length))


def make_record(transcript_id: str,
                gene_id: str,
                rng: random.Random,
                num_tissues: int = 3,
                coding: bool = True,
                window: int = 20,
                targets: Optional[list[float]] = None) -> TranscriptRecord:
    protein = "M" + "".join(rng.choice(AMINO_ACIDS) for _ in range(rng.randint(3, 10))) if coding else None
    return TranscriptRecord(
        transcript_id=transcript_id,
        gene_id=gene_id,
        dna_window=random_bases(rng, window),
        rna_seq=random_bases(rng, rng.randint(10, 30)),
        protein_seq=protein,
        targets=targets if targets is not None else [rng.uniform(0.0, 50.0) for _ in range(num_tissues)],
    )


def make_records(num_genes: int = 10,
                 isoforms: int = 2,
                 num_tissues: int = 3,
                 seed: int = 0,
                 window: int = 20) -> list[TranscriptRecord]:
    """Random records; every third isoform is non-coding."""
    rng = random.Random(seed)
    records = []
    for gene in range(num_genes):
        for isoform in range(isoforms):
            records.append(make_record(
                f"T{gene:03d}_{isoform}", f"G{gene:03d}", rng, num_tissues,
                coding=(gene * isoforms + isoform) % 3 != 2, window=window,
            ))
    return records


def write_fasta(path: Path, entries: dict[str, str]) -> Path:
    path.write_text("".join(f">{name}\n{sequence}\n" for name, sequence in entries.items()))
    return path


def check_gradients(loss: Callable[[], torch.Tensor],
                    named_parameters: Iterable[tuple[str, torch.Tensor]],
                    eps: float = 1e-4,
                    per_tensor: int = 3,
                    rel: float = 1e-4,
                    atol: float = 1e-6,
                    seed: int = 0) -> None:
    """
    Compare autograd gradients of ``loss()`` with central differences at a
    few random entries of every tensor. Run in float64.
    """
    parameters = list(named_parameters)
    for _, parameter in parameters:
        parameter.grad = None
    loss().backward()
    rng = np.random.default_rng(seed)
    mismatches = []
    for name, parameter in parameters:
        flat = parameter.data.view(-1)
        grad = (parameter.grad if parameter.grad is not None else torch.zeros_like(parameter)).view(-1)
        for index in map(int, rng.choice(flat.numel(), size=min(per_tensor, flat.numel()), replace=False)):
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + eps
                plus = loss().item()
                flat[index] = original - eps
                minus = loss().item()
                flat[index] = original
            numeric = (plus - minus) / (2 * eps)
            analytic = grad[index].item()
            if abs(analytic - numeric) > rel * max(abs(analytic), abs(numeric)) + atol:
                mismatches.append(f"{name}[{index}]: analytic {analytic}, numeric {numeric}")
    assert not mismatches, "\n".join(mismatches)
