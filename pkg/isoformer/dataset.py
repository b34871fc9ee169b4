"""
Tokenized records, torch datasets and batch collation.

``RecordTokenizer`` turns TranscriptRecords into per-modality token
sequences that fit each encoder: DNA windows are centre-cropped so the TSS
stays in the middle; RNA and protein keep their 5'/N-terminal prefix.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch.utils.data import Dataset

from .models.config_models import DataConfig, IsoFormerConfig
from .models.data_models import TranscriptRecord
from .tokenization import (
    PAD_ID,
    AlphabetKind,
    TokenSequence,
    Vocabulary,
    build_vocabulary,
    tokenize_nucleotide,
    tokenize_protein,
)

logger = logging.getLogger(__name__)


def centre_crop(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    start = (len(text) - limit) // 2
    return text[start:start + limit]


def _crop_tokens(tokens: TokenSequence, limit: int, centre: bool) -> TokenSequence:
    if len(tokens) <= limit:
        return tokens
    start = (len(tokens) - limit) // 2 if centre else 0
    return TokenSequence(tokens.ids[start:start + limit], tokens.modality, tokens.source_length)


@dataclass
class EncodedRecord:
    """A record's token sequences (None when absent or disabled) and targets."""

    transcript_id: str
    gene_id: str
    tokens: dict[str, Optional[TokenSequence]]
    targets: np.ndarray


class RecordTokenizer:
    """
    Tokenizes records for a model configuration.

    Args:
        config: Model config (modalities, k-mer sizes, mask token, max_tokens)
        data_config: Character limits applied before tokenization
    """

    def __init__(self, config: IsoFormerConfig, data_config: Optional[DataConfig] = None):
        self.config = config
        self.data_config = data_config or DataConfig()
        vocabularies = {
            "dna": build_vocabulary(AlphabetKind.NUCLEOTIDE, config.dna_k),
            "rna": build_vocabulary(AlphabetKind.NUCLEOTIDE, config.rna_k),
            "protein": build_vocabulary(AlphabetKind.AMINO_ACID, 1),
        }
        if config.add_mask_token:
            vocabularies = {m: v.with_mask() for m, v in vocabularies.items()}
        self.vocabularies: dict[str, Vocabulary] = vocabularies

    def encode_sequence(self, modality: str, sequence: str) -> TokenSequence:
        limit = self.config.encoder_config(modality).max_tokens
        vocab = self.vocabularies[modality]
        if modality == "dna":
            tokens = tokenize_nucleotide(centre_crop(sequence, self.data_config.dna_max_chars), vocab)
            return _crop_tokens(tokens, limit, centre=True)
        if modality == "rna":
            tokens = tokenize_nucleotide(sequence[: self.data_config.rna_max_chars], vocab, is_rna=True)
        else:
            tokens = tokenize_protein(sequence[: self.data_config.protein_max_chars], vocab)
        return _crop_tokens(tokens, limit, centre=False)

    def encode(self, record: TranscriptRecord) -> EncodedRecord:
        sources = {"dna": record.dna_window, "rna": record.rna_seq, "protein": record.protein_seq}
        tokens = {
            modality: (
                self.encode_sequence(modality, sources[modality])
                if modality in self.config.modalities and sources[modality]
                else None
            )
            for modality in sources
        }
        return EncodedRecord(
            transcript_id=record.transcript_id,
            gene_id=record.gene_id,
            tokens=tokens,
            targets=np.asarray(record.targets, dtype=np.float32),
        )

    def encode_all(self, records: Sequence[TranscriptRecord]) -> list[EncodedRecord]:
        return [self.encode(record) for record in records]


class IsoformDataset(Dataset):
    """Map-style dataset over encoded records."""

    def __init__(self, records: Sequence[EncodedRecord]):
        self.records = list(records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> EncodedRecord:
        return self.records[index]


@dataclass
class Batch:
    """
    Right-padded batch.

    A modality no sample carries has ``ids[m] is None``; in mixed batches
    absent samples hold an all-PAD row and ``presence[m]`` is False.
    """

    transcript_ids: list[str]
    ids: dict[str, Optional[torch.Tensor]]
    masks: dict[str, torch.Tensor]
    presence: dict[str, torch.Tensor]
    targets: torch.Tensor

    def __len__(self) -> int:
        return len(self.transcript_ids)


def collate_records(records: Sequence[EncodedRecord]) -> Batch:
    """Pad each modality to the longest sequence in the batch."""
    ids: dict[str, Optional[torch.Tensor]] = {}
    masks: dict[str, torch.Tensor] = {}
    presence: dict[str, torch.Tensor] = {}
    for modality in ("dna", "rna", "protein"):
        sequences = [record.tokens.get(modality) for record in records]
        if all(sequence is None for sequence in sequences):
            ids[modality] = None
            continue
        length = max(len(sequence) for sequence in sequences if sequence is not None)
        padded = torch.full((len(records), length), PAD_ID, dtype=torch.long)
        for row, sequence in enumerate(sequences):
            if sequence is not None:
                padded[row, : len(sequence)] = torch.tensor(sequence.ids, dtype=torch.long)
        ids[modality] = padded
        masks[modality] = padded != PAD_ID
        presence[modality] = torch.tensor([sequence is not None for sequence in sequences])
    targets = torch.from_numpy(np.stack([record.targets for record in records]).astype(np.float32))
    return Batch([record.transcript_id for record in records], ids, masks, presence, targets)
