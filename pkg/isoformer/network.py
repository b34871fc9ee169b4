"""
End-to-end IsoFormer model.

Encoders for the enabled modalities, projection and aggregation into the
shared dimension, masked mean pooling over the concatenated multi-modal
embedding and a linear expression head with one output per tissue.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .aggregation import AggregationModule, MultiModalEmbedding, reset_linear_and_norm
from .dataset import EncodedRecord, collate_records
from .encoder import init_encoder
from .exceptions import NoModalityPresent
from .models.config_models import IsoFormerConfig
from .utils.seeding import seeded_torch

logger = logging.getLogger(__name__)


def masked_mean(hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over real rows only: (B, L, D), (B, L) -> (B, D)."""
    weights = mask[..., None].to(hidden.dtype)
    return (hidden * weights).sum(dim=1) / weights.sum(dim=1).clamp(min=1.0)


class ExpressionHead(nn.Module):
    """Pooled linear map shared_dim -> num_tissues, no hidden layer."""

    def __init__(self, shared_dim: int, num_tissues: int):
        super().__init__()
        self.linear = nn.Linear(shared_dim, num_tissues)

    def forward(self, hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.linear(masked_mean(hidden, mask))


@dataclass
class IsoFormerOutput:
    predictions: torch.Tensor
    multimodal: MultiModalEmbedding
    attention: dict[str, list[torch.Tensor]] = field(default_factory=dict)


class IsoFormer(nn.Module):
    """
    Multi-modal expression model.

    Args:
        config: Model description
        seed: Run seed; each component initialises from its own named stream
    """

    def __init__(self, config: IsoFormerConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        self.encoders = nn.ModuleDict({
            modality: init_encoder(config.encoder_config(modality), seed, f"init:{modality}")
            for modality in config.modalities
        })
        self.aggregation = AggregationModule(
            config.aggregation,
            {modality: encoder.embed_dim for modality, encoder in self.encoders.items()},
            seed,
        )
        with seeded_torch(seed, "init:head"):
            self.head = ExpressionHead(config.shared_dim, config.num_tissues)
            reset_linear_and_norm(self.head)

    @property
    def modalities(self) -> list[str]:
        return list(self.config.modalities)

    @property
    def tissue_names(self) -> list[str]:
        return list(self.config.tissue_names)

    def set_encoders_trainable(self, trainable: bool) -> None:
        for encoder in self.encoders.values():
            encoder.requires_grad_(trainable)

    def forward(self,
                ids: dict[str, Optional[torch.Tensor]],
                masks: Optional[dict[str, torch.Tensor]] = None,
                presence: Optional[dict[str, torch.Tensor]] = None,
                capture_attention: bool = False) -> IsoFormerOutput:
        """
        Predict expression for a padded batch.

        Args:
            ids: Modality -> (B, L_m) token ids, None or missing when absent
            masks: Modality -> (B, L_m) bool; derived from PAD when omitted
            presence: Modality -> (B,) bool per-sample availability
            capture_attention: Keep encoder self-attention weights

        Returns:
            IsoFormerOutput: (B, num_tissues) predictions and intermediates

        Raises:
            NoModalityPresent: If no enabled modality is present, or a sample has none
            SequenceTooLong: If a sequence exceeds its encoder's max_tokens
        """
        hidden: dict[str, Optional[torch.Tensor]] = {}
        token_masks: dict[str, torch.Tensor] = {}
        attention: dict[str, list[torch.Tensor]] = {}
        for modality, encoder in self.encoders.items():
            modality_ids = ids.get(modality)
            if modality_ids is None:
                hidden[modality] = None
                continue
            mask = masks.get(modality) if masks else None
            output = encoder(modality_ids, mask, capture_attention)
            hidden[modality] = output.hidden
            token_masks[modality] = output.mask
            if capture_attention:
                attention[modality] = output.attention

        if not token_masks:
            raise NoModalityPresent(f"None of {self.modalities} is present in the batch")

        flags = {
            m: (presence[m] if presence is not None and m in presence else token_masks[m].any(dim=1))
            for m in token_masks
        }
        covered = torch.stack(list(flags.values())).any(dim=0)
        if not bool(covered.all()):
            raise NoModalityPresent("A sample has none of the enabled modalities")

        multimodal = self.aggregation(hidden, token_masks, flags)
        predictions = self.head(multimodal.concatenated, multimodal.concatenated_mask)
        return IsoFormerOutput(predictions, multimodal, attention)


def build_model(config: IsoFormerConfig, seed: int = 0) -> IsoFormer:
    """Build an IsoFormer with deterministic, per-component initialisation."""
    model = IsoFormer(config, seed)
    logger.info("Built IsoFormer with %s modalities and %d parameters",
                "+".join(config.modalities), count_parameters(model)["total"])
    return model


def count_parameters(model: IsoFormer) -> dict[str, int]:
    """
    Exact parameter counts per component.

    Keys: ``<modality>_encoder``, ``<modality>_encoder.layers``,
    ``projections``, ``aggregation``, ``head`` and ``total``.
    """
    def size(module: nn.Module) -> int:
        return sum(parameter.numel() for parameter in module.parameters())

    counts: dict[str, int] = {}
    for modality, encoder in model.encoders.items():
        counts[f"{modality}_encoder"] = size(encoder)
        counts[f"{modality}_encoder.layers"] = size(encoder.layers)
    counts["projections"] = size(model.aggregation.projections)
    counts["aggregation"] = size(model.aggregation.blocks) + size(model.aggregation.compressors)
    counts["head"] = size(model.head)
    counts["total"] = sum(value for key, value in counts.items() if "." not in key)
    return counts


def forward_record(model: IsoFormer,
                   record: EncodedRecord,
                   train_mode: bool = False,
                   capture_attention: bool = False) -> IsoFormerOutput:
    """Run one tokenized record (an EncodedRecord) through the model."""
    batch = collate_records([record])
    was_training = model.training
    model.train(train_mode)
    try:
        with torch.set_grad_enabled(train_mode):
            return model(batch.ids, batch.masks, batch.presence, capture_attention)
    finally:
        model.train(was_training)


def predict(model: IsoFormer, records: Sequence[EncodedRecord], batch_size: int = 64) -> np.ndarray:
    """
    Predict every record in eval mode.

    Returns:
        np.ndarray: (N, num_tissues) float32 predictions in record order
    """
    was_training = model.training
    model.eval()
    outputs = []
    try:
        with torch.no_grad():
            for start in range(0, len(records), batch_size):
                batch = collate_records(list(records[start:start + batch_size]))
                outputs.append(model(batch.ids, batch.masks, batch.presence).predictions.cpu().numpy())
    finally:
        model.train(was_training)
    if not outputs:
        return np.zeros((0, model.config.num_tissues), dtype=np.float32)
    return np.concatenate(outputs).astype(np.float32, copy=False)
