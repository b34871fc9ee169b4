"""
Experiment configuration models for IsoFormer.

This module contains the pydantic models that describe a model, a training
run, the optional masked-language-model warm-up, data preparation, the
synthetic generator and the attention analysis. ``ExperimentConfig`` groups
them under the section names used by key=value config files
(``model.aggregation.strategy=c_abstractor``).

Defaults are desk-scale; the reference shapes of the large pre-trained
encoders (768/640/1536-dim embeddings, 24-30 layers) are documentation only.
"""

from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from ..tokenization import AlphabetKind, vocabulary_size
from ..utils.validation_utils import validate_modalities

ModalityName = Literal["dna", "rna", "protein"]
AggregationStrategy = Literal[
    "cross_attention",
    "resampler_cross_attention",
    "linear_projection_resampler",
    "c_abstractor",
]


class EncoderConfig(BaseModel):
    """
    Shape of one per-modality transformer encoder.

    ``vocab_size`` is derived from the tokenizer by :class:`IsoFormerConfig`.
    """

    vocab_size: int = Field(default=6, ge=3, description="Token vocabulary size")
    embed_dim: int = Field(default=32, ge=1, description="Embedding dimension")
    num_layers: int = Field(default=2, ge=1, description="Transformer layers")
    num_heads: int = Field(default=4, ge=1, description="Attention heads per layer")
    ffn_dim: int = Field(default=64, ge=1, description="Feed-forward hidden width")
    max_tokens: int = Field(default=512, ge=1, description="Maximum tokens per sequence")
    dropout_rate: float = Field(default=0.0, ge=0.0, lt=1.0, description="Dropout probability")
    positional: Literal["learned", "sinusoidal"] = Field(
        default="learned", description="Positional encoding scheme"
    )

    @model_validator(mode="after")
    def _heads_divide_dim(self) -> "EncoderConfig":
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        return self


class AggregationConfig(BaseModel):
    """Cross-modal aggregation settings."""

    strategy: AggregationStrategy = Field(default="cross_attention", description="Aggregation strategy")
    shared_dim: int = Field(default=64, ge=1, description="Common dimension of all modalities")
    num_heads: int = Field(default=8, ge=1, description="Cross-attention heads")
    ffn_multiplier: int = Field(default=4, ge=1, description="FFN expansion factor")
    resampler_layers: int = Field(default=1, ge=1, description="Perceiver Resampler blocks")
    resampled_tokens: int = Field(default=8, ge=1, description="Latent tokens kept by resamplers")
    cabstractor_kernel: int = Field(default=3, ge=1, description="C-Abstractor convolution kernel")
    cabstractor_residual_layers: int = Field(
        default=2, ge=1, description="Residual blocks before and after pooling"
    )
    context_order: list[ModalityName] = Field(
        default_factory=lambda: ["dna", "rna", "protein"],
        description="Order in which contexts are attended"
    )
    dropout_rate: float = Field(default=0.0, ge=0.0, lt=1.0, description="Dropout probability")

    @model_validator(mode="after")
    def _check(self) -> "AggregationConfig":
        if self.shared_dim % self.num_heads:
            raise ValueError(
                f"shared_dim {self.shared_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.cabstractor_kernel % 2 == 0:
            raise ValueError("cabstractor_kernel must be odd for same padding")
        if sorted(self.context_order) != ["dna", "protein", "rna"]:
            raise ValueError("context_order must be a permutation of dna, rna, protein")
        return self


class IsoFormerConfig(BaseModel):
    """
    Full model description: enabled modalities, tokenization, encoders,
    aggregation and expression head.
    """

    modalities: list[ModalityName] = Field(
        default_factory=lambda: ["dna", "rna", "protein"], description="Enabled modalities"
    )
    dna_k: int = Field(default=6, ge=1, le=8, description="DNA k-mer size")
    rna_k: int = Field(default=6, ge=1, le=8, description="RNA k-mer size")
    add_mask_token: bool = Field(default=False, description="Append MASK to every vocabulary")
    dna_encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    rna_encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    protein_encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    aggregation: AggregationConfig = Field(default_factory=AggregationConfig)
    num_tissues: int = Field(default=30, ge=1, description="Prediction width")
    tissue_names: list[str] = Field(default_factory=list, description="Ordered tissue labels")

    @field_validator("modalities")
    @classmethod
    def _canonical_modalities(cls, value: list[str]) -> list[str]:
        return validate_modalities(value)

    @field_validator("tissue_names")
    @classmethod
    def _plain_names(cls, value: list[str]) -> list[str]:
        for name in value:
            if not name or any(ch in name for ch in ",\t\n="):
                raise ValueError(f"Tissue name {name!r} must be non-empty without , = tab or newline")
        return value

    @model_validator(mode="after")
    def _derive(self) -> "IsoFormerConfig":
        if not self.tissue_names:
            self.tissue_names = [f"tissue_{index + 1}" for index in range(self.num_tissues)]
        if len(self.tissue_names) != self.num_tissues:
            raise ValueError(
                f"{len(self.tissue_names)} tissue names for num_tissues={self.num_tissues}"
            )
        sizes = {
            "dna_encoder": vocabulary_size(AlphabetKind.NUCLEOTIDE, self.dna_k, self.add_mask_token),
            "rna_encoder": vocabulary_size(AlphabetKind.NUCLEOTIDE, self.rna_k, self.add_mask_token),
            "protein_encoder": vocabulary_size(AlphabetKind.AMINO_ACID, 1, self.add_mask_token),
        }
        for name, size in sizes.items():
            encoder = getattr(self, name)
            if encoder.vocab_size != size:
                setattr(self, name, encoder.model_copy(update={"vocab_size": size}))
        return self

    @property
    def shared_dim(self) -> int:
        return self.aggregation.shared_dim

    def encoder_config(self, modality: str) -> EncoderConfig:
        return getattr(self, f"{modality}_encoder")

    def with_modalities(self, modalities: list[str]) -> "IsoFormerConfig":
        """Copy of this config restricted to a modality subset."""
        return self.model_validate({**self.model_dump(), "modalities": modalities})


class TrainConfig(BaseModel):
    """
    Optimisation settings.

    ``learning_rate`` accepts 0, which leaves every parameter untouched.
    """

    learning_rate: float = Field(default=3e-5, ge=0.0, description="Adam learning rate")
    batch_size: int = Field(default=64, ge=1, description="Samples per step")
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(default=1e-8, gt=0.0)
    max_epochs: int = Field(default=100, ge=1, description="Epoch cap")
    early_stopping_patience: int = Field(default=3, ge=1, description="Epochs without improvement")
    min_delta: float = Field(default=0.0, ge=0.0, description="Required validation improvement")
    val_fraction: float = Field(default=0.05, gt=0.0, lt=1.0, description="Validation share of train genes")
    freeze_encoders: bool = Field(default=False, description="Train only projections, aggregation and head")
    seed: int = Field(default=0, description="Run seed")
    max_steps: Optional[int] = Field(default=None, ge=1, description="Optional cap on optimizer steps")


class WarmupConfig(BaseModel):
    """Masked-language-model warm-up standing in for encoder pre-training."""

    encoders: list[ModalityName] = Field(default_factory=list, description="Encoders to warm up")
    mask_fraction: float = Field(default=0.15, gt=0.0, lt=1.0, description="Masking probability")
    steps: int = Field(default=200, ge=0, description="Optimizer steps per encoder")
    learning_rate: float = Field(default=1e-3, gt=0.0)
    batch_size: int = Field(default=16, ge=1)

    @field_validator("encoders")
    @classmethod
    def _canonical_encoders(cls, value: list[str]) -> list[str]:
        return validate_modalities(value) if value else []


class DataConfig(BaseModel):
    """Dataset preparation and splitting."""

    window: int = Field(default=512, ge=2, description="DNA window centred on the TSS")
    test_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    test_seed: Optional[int] = Field(
        default=0, description="Fixed seed for the test partition; None ties it to the run seed"
    )
    dna_max_chars: int = Field(default=12288, ge=1)
    rna_max_chars: int = Field(default=12288, ge=1)
    protein_max_chars: int = Field(default=1200, ge=1)

    @field_validator("window")
    @classmethod
    def _even_window(cls, value: int) -> int:
        if value % 2:
            raise ValueError("window must be even")
        return value


class SyntheticConfig(BaseModel):
    """Planted-signal dataset generator."""

    num_genes: int = Field(default=200, ge=1)
    isoforms_per_gene: int = Field(default=3, ge=1)
    window: int = Field(default=256, ge=2)
    num_tissues: int = Field(default=10, ge=1)
    utr5_min: int = Field(default=20, ge=1)
    utr5_max: int = Field(default=60, ge=1)
    cds_codons_min: int = Field(default=20, ge=2)
    cds_codons_max: int = Field(default=120, ge=2)
    utr3_min: int = Field(default=40, ge=1)
    utr3_max: int = Field(default=120, ge=1)
    coding_fraction: float = Field(default=0.8, ge=0.0, le=1.0)
    dna_motif: str = Field(default="TATAAA")
    rna_motif: str = Field(default="ATTTA")
    max_dna_motifs: int = Field(default=4, ge=0)
    rna_motif_rate: float = Field(default=0.5, ge=0.0, le=1.0)
    protein_length_cap: int = Field(default=100, ge=1, description="P in min(len(protein), P)/P")
    noise: float = Field(default=0.1, ge=0.0)

    @model_validator(mode="after")
    def _check(self) -> "SyntheticConfig":
        for low, high in (("utr5_min", "utr5_max"), ("cds_codons_min", "cds_codons_max"), ("utr3_min", "utr3_max")):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} exceeds {high}")
        if self.window % 2:
            raise ValueError("window must be even")
        for name in ("dna_motif", "rna_motif"):
            motif = getattr(self, name)
            if not motif or set(motif.upper()) - set("ACGT"):
                raise ValueError(f"{name} must be a non-empty ACGT string")
        if len(self.dna_motif) * self.max_dna_motifs > self.window:
            raise ValueError("window too short for max_dna_motifs copies of dna_motif")
        if len(self.rna_motif) > self.utr3_min:
            raise ValueError("rna_motif longer than the shortest 3'UTR")
        return self


class AnalysisConfig(BaseModel):
    """Attention-ratio analysis."""

    mu: float = Field(default=0.01, gt=0.0, lt=1.0, description="Attention threshold")
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0, description="Significance level")
    regions: list[str] = Field(default_factory=lambda: ["5UTR", "CDS", "3UTR"])
    modality: ModalityName = Field(default="rna", description="Encoder whose attention is analysed")
    max_samples: Optional[int] = Field(default=None, ge=2)


class ExperimentConfig(BaseModel):
    """All sections of one run."""

    model: IsoFormerConfig = Field(default_factory=IsoFormerConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    warmup: WarmupConfig = Field(default_factory=WarmupConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
