"""
Cross-modal aggregation.

Each modality's projected embeddings cross-attend, one context at a time, to
every other present modality, with residual connections. The per-modality
multi-modal embeddings are then concatenated along the token axis.

Strategies:

    cross_attention              full-length contexts (default)
    resampler_cross_attention    each context first compressed by a Perceiver Resampler
    c_abstractor                 each context first compressed by a 1-D C-Abstractor
    linear_projection_resampler  all projected tokens concatenated and resampled jointly

An absent context skips its block entirely, so a missing modality leaves the
query bit-identical to a model built without that modality.
"""

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EMBEDDING_INIT_STD, FeedForward, MultiHeadAttention
from .exceptions import NoModalityPresent, ShapeMismatch
from .models.config_models import AggregationConfig
from .tokenization import MODALITIES
from .utils.seeding import seeded_torch

logger = logging.getLogger(__name__)

MODALITY_NAMES = tuple(m.value for m in MODALITIES)


def reset_linear_and_norm(module: nn.Module) -> None:
    for child in module.modules():
        if isinstance(child, (nn.Linear, nn.Conv1d)):
            nn.init.xavier_uniform_(child.weight)
            nn.init.zeros_(child.bias)
        elif isinstance(child, nn.LayerNorm):
            nn.init.ones_(child.weight)
            nn.init.zeros_(child.bias)


def _check_dim(x: torch.Tensor, dim: int, what: str) -> None:
    if x.shape[-1] != dim:
        raise ShapeMismatch(f"{what} has dim {x.shape[-1]}, expected {dim}")


class CrossAttentionBlock(nn.Module):
    """
    Residual cross-attention followed by a residual pre-LN feed-forward.

    ``attend`` is the first stage alone; it returns the query untouched when
    there is no context.
    """

    def __init__(self, dim: int, num_heads: int, ffn_multiplier: int = 4, dropout_rate: float = 0.0):
        super().__init__()
        self.dim = dim
        self.query_norm = nn.LayerNorm(dim)
        self.attention = MultiHeadAttention(dim, num_heads, dropout_rate)
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_multiplier * dim, dropout_rate)
        self.dropout = nn.Dropout(dropout_rate)

    def attend(self,
               query: torch.Tensor,
               context: Optional[torch.Tensor],
               context_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        _check_dim(query, self.dim, "query")
        if context is None:
            return query
        _check_dim(context, self.dim, "context")
        attended, _ = self.attention(self.query_norm(query), context, context_mask)
        return query + self.dropout(attended)

    def forward(self,
                query: torch.Tensor,
                context: Optional[torch.Tensor],
                context_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        hidden = self.attend(query, context, context_mask)
        return hidden + self.dropout(self.ffn(self.ffn_norm(hidden)))


class PerceiverResampler(nn.Module):
    """
    Learned latent queries over a variable-length input. Each layer attends
    to the latents concatenated with the input tokens.
    """

    def __init__(self, dim: int, num_tokens: int, num_layers: int, num_heads: int,
                 ffn_multiplier: int = 4, dropout_rate: float = 0.0):
        super().__init__()
        self.dim = dim
        self.latents = nn.Parameter(torch.empty(num_tokens, dim))
        self.blocks = nn.ModuleList(
            CrossAttentionBlock(dim, num_heads, ffn_multiplier, dropout_rate) for _ in range(num_layers)
        )
        self.norm = nn.LayerNorm(dim)

    def reset_parameters(self) -> None:
        reset_linear_and_norm(self)
        nn.init.normal_(self.latents, mean=0.0, std=EMBEDDING_INIT_STD)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """(B, L, D) -> (B, num_tokens, D)."""
        _check_dim(x, self.dim, "resampler input")
        hidden = self.latents[None].expand(x.shape[0], -1, -1)
        if mask is not None:
            latent_mask = torch.ones(hidden.shape[:2], dtype=torch.bool, device=mask.device)
            mask = torch.cat([latent_mask, mask], dim=1)
        for block in self.blocks:
            hidden = block(hidden, torch.cat([hidden, x], dim=1), mask)
        return self.norm(hidden)


class ResBlock1d(nn.Module):
    """x + conv(silu(conv(LN(x)))) along the token axis with same padding."""

    def __init__(self, dim: int, kernel_size: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.conv1 = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2)
        self.conv2 = nn.Conv1d(dim, dim, kernel_size, padding=kernel_size // 2)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        keep = mask[..., None].to(x.dtype)
        hidden = (self.norm(x) * keep).transpose(1, 2)
        hidden = self.conv2(F.silu(self.conv1(hidden))).transpose(1, 2)
        return (x + hidden) * keep


class CAbstractor(nn.Module):
    """
    Convolutional resampler: residual blocks, adaptive mean pooling to a fixed
    token count, more residual blocks.
    """

    def __init__(self, dim: int, num_tokens: int, kernel_size: int = 3, residual_layers: int = 2):
        super().__init__()
        self.dim = dim
        self.num_tokens = num_tokens
        self.pre_blocks = nn.ModuleList(ResBlock1d(dim, kernel_size) for _ in range(residual_layers))
        self.post_blocks = nn.ModuleList(ResBlock1d(dim, kernel_size) for _ in range(residual_layers))

    def reset_parameters(self) -> None:
        reset_linear_and_norm(self)

    def pool(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Adaptive mean pooling of each sample over its own valid length."""
        lengths = mask.sum(dim=1).clamp(min=1).tolist()
        pooled = [
            F.adaptive_avg_pool1d(sample[: int(length)].transpose(0, 1)[None], self.num_tokens)[0].transpose(0, 1)
            for sample, length in zip(x, lengths)
        ]
        return torch.stack(pooled)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """(B, L, D) -> (B, num_tokens, D)."""
        _check_dim(x, self.dim, "abstractor input")
        if mask is None:
            mask = torch.ones(x.shape[:2], dtype=torch.bool, device=x.device)
        hidden = x
        for block in self.pre_blocks:
            hidden = block(hidden, mask)
        hidden = self.pool(hidden, mask)
        full = torch.ones(hidden.shape[:2], dtype=torch.bool, device=hidden.device)
        for block in self.post_blocks:
            hidden = block(hidden, full)
        return hidden


@dataclass
class MultiModalEmbedding:
    """
    Aggregation result.

    ``per_modality`` holds h' of each present modality (empty for
    linear_projection_resampler); ``concatenated`` is h_multi with its mask.
    """

    per_modality: dict[str, torch.Tensor]
    per_modality_mask: dict[str, torch.Tensor]
    concatenated: torch.Tensor
    concatenated_mask: torch.Tensor
    presence: dict[str, torch.Tensor] = field(default_factory=dict)


def block_key(query: str, context: str) -> str:
    return f"{query}_from_{context}"


class AggregationModule(nn.Module):
    """
    Projection into the shared dimension plus the selected aggregation strategy.

    Every sub-module draws its initial weights from its own named seed
    stream, so a model built for a subset of modalities shares the weights
    of the corresponding parts of the full model.
    """

    def __init__(self,
                 config: AggregationConfig,
                 encoder_dims: Mapping[str, int],
                 seed: int = 0):
        super().__init__()
        self.config = config
        self.modalities = [m for m in MODALITY_NAMES if m in encoder_dims]
        if not self.modalities:
            raise NoModalityPresent("Aggregation needs at least one modality")
        dim = config.shared_dim

        self.projections = nn.ModuleDict()
        for modality in self.modalities:
            with seeded_torch(seed, f"init:projection:{modality}"):
                projection = nn.Linear(encoder_dims[modality], dim)
                reset_linear_and_norm(projection)
            self.projections[modality] = projection

        self.blocks = nn.ModuleDict()
        self.compressors = nn.ModuleDict()
        if config.strategy == "linear_projection_resampler":
            with seeded_torch(seed, "init:resampler:joint"):
                joint = self._make_resampler()
            self.compressors["joint"] = joint
            return

        for query in self.modalities:
            for context in config.context_order:
                if context == query or context not in self.modalities:
                    continue
                key = block_key(query, context)
                with seeded_torch(seed, f"init:aggregation:{key}"):
                    block = CrossAttentionBlock(dim, config.num_heads, config.ffn_multiplier, config.dropout_rate)
                    reset_linear_and_norm(block)
                self.blocks[key] = block

        if config.strategy in ("resampler_cross_attention", "c_abstractor"):
            for context in self.modalities:
                with seeded_torch(seed, f"init:{config.strategy}:{context}"):
                    if config.strategy == "c_abstractor":
                        compressor = CAbstractor(dim, config.resampled_tokens,
                                                 config.cabstractor_kernel, config.cabstractor_residual_layers)
                        compressor.reset_parameters()
                    else:
                        compressor = self._make_resampler()
                self.compressors[context] = compressor

    def _make_resampler(self) -> PerceiverResampler:
        config = self.config
        resampler = PerceiverResampler(config.shared_dim, config.resampled_tokens, config.resampler_layers,
                                       config.num_heads, config.ffn_multiplier, config.dropout_rate)
        resampler.reset_parameters()
        return resampler

    def project(self, modality: str, hidden: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Linear map of one modality into shared_dim; PAD rows stay zero."""
        projection = self.projections[modality]
        _check_dim(hidden, projection.in_features, f"{modality} embeddings")
        projected = projection(hidden)
        if mask is not None:
            projected = projected * mask[..., None].to(projected.dtype)
        return projected

    def forward(self,
                hidden: Mapping[str, Optional[torch.Tensor]],
                masks: Mapping[str, torch.Tensor],
                presence: Optional[Mapping[str, torch.Tensor]] = None) -> MultiModalEmbedding:
        """
        Aggregate the encoder outputs of a batch.

        Args:
            hidden: Modality -> (B, L_m, D_m) encoder output, None when absent
            masks: Modality -> (B, L_m) bool token mask
            presence: Modality -> (B,) bool; derived from the masks when omitted

        Returns:
            MultiModalEmbedding

        Raises:
            NoModalityPresent: If no configured modality is present
        """
        present = [m for m in self.modalities if hidden.get(m) is not None]
        if not present:
            raise NoModalityPresent("No modality present in the batch")

        projected = {m: self.project(m, hidden[m], masks[m]) for m in present}
        token_masks = {m: masks[m] for m in present}
        flags = {
            m: (presence[m] if presence is not None and m in presence else token_masks[m].any(dim=1))
            for m in present
        }

        if self.config.strategy == "linear_projection_resampler":
            tokens = torch.cat([projected[m] for m in present], dim=1)
            token_mask = torch.cat([token_masks[m] for m in present], dim=1)
            resampled = self.compressors["joint"](tokens, token_mask)
            full = torch.ones(resampled.shape[:2], dtype=torch.bool, device=resampled.device)
            return MultiModalEmbedding({}, {}, resampled, full, flags)

        contexts = {}
        for m in present:
            if m in self.compressors:
                compressed = self.compressors[m](projected[m], token_masks[m])
                full = torch.ones(compressed.shape[:2], dtype=torch.bool, device=compressed.device)
                contexts[m] = (compressed, full)
            else:
                contexts[m] = (projected[m], token_masks[m])

        per_modality = {}
        for query in present:
            state = projected[query]
            for context in self.config.context_order:
                if context == query or context not in contexts:
                    continue
                context_values, context_mask = contexts[context]
                updated = self.blocks[block_key(query, context)](state, context_values, context_mask)
                gate = flags[context]
                if bool(gate.all()):
                    state = updated
                else:
                    state = torch.where(gate[:, None, None], updated, state)
            per_modality[query] = state

        concatenated = torch.cat([per_modality[m] for m in present], dim=1)
        concatenated_mask = torch.cat([token_masks[m] for m in present], dim=1)
        return MultiModalEmbedding(per_modality, token_masks, concatenated, concatenated_mask, flags)


def project_to_shared(emb: torch.Tensor, projection: nn.Linear) -> torch.Tensor:
    """
    Project (L, D_m) or (B, L, D_m) embeddings into the shared dimension.

    Raises:
        ShapeMismatch: If the input dim differs from the projection's
    """
    _check_dim(emb, projection.in_features, "embeddings")
    return projection(emb)


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    return (x, False) if x.dim() == 3 else (x[None], True)


def cross_attend(query: torch.Tensor,
                 context: Optional[torch.Tensor],
                 block: CrossAttentionBlock) -> torch.Tensor:
    """
    Residual cross-attention of query rows onto context rows, then the
    residual feed-forward. Accepts (L, D) or (B, L, D).
    """
    query, squeeze = _batched(query)
    if context is not None:
        context, _ = _batched(context)
    out = block(query, context)
    return out[0] if squeeze else out


def perceiver_resample(emb: torch.Tensor, resampler: PerceiverResampler) -> torch.Tensor:
    """(L, D) -> (n, D) or (B, L, D) -> (B, n, D)."""
    emb, squeeze = _batched(emb)
    out = resampler(emb)
    return out[0] if squeeze else out


def c_abstract(emb: torch.Tensor, abstractor: CAbstractor) -> torch.Tensor:
    """(L, D) -> (n, D) or (B, L, D) -> (B, n, D)."""
    emb, squeeze = _batched(emb)
    out = abstractor(emb)
    return out[0] if squeeze else out


def aggregate(h_dna: Optional[torch.Tensor],
              h_rna: Optional[torch.Tensor],
              h_prot: Optional[torch.Tensor],
              module: AggregationModule) -> MultiModalEmbedding:
    """
    Aggregate unbatched (L_m, D_m) encoder outputs; any of them may be None.

    Raises:
        NoModalityPresent: If all three are None
    """
    given = {"dna": h_dna, "rna": h_rna, "protein": h_prot}
    if all(value is None for value in given.values()):
        raise NoModalityPresent("aggregate needs at least one modality")
    hidden = {m: (None if v is None else v[None]) for m, v in given.items()}
    masks = {
        m: torch.ones(v.shape[:2], dtype=torch.bool, device=v.device)
        for m, v in hidden.items() if v is not None
    }
    batched = module(hidden, masks)
    return MultiModalEmbedding(
        per_modality={m: v[0] for m, v in batched.per_modality.items()},
        per_modality_mask={m: v[0] for m, v in batched.per_modality_mask.items()},
        concatenated=batched.concatenated[0],
        concatenated_mask=batched.concatenated_mask[0],
        presence={m: v[0] for m, v in batched.presence.items()},
    )
