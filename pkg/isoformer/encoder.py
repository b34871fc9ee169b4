"""
Per-modality transformer encoder.

A pre-layer-norm transformer with learned or sinusoidal positions, SiLU
feed-forward layers and a final layer norm. Attention weights can be
captured per layer for the attention-ratio analysis. PAD positions (id 0)
are excluded from attention and their outputs are zeroed.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn.functional as F
from pydantic import ValidationError
from torch import nn

from .exceptions import IdOutOfRange, InvalidConfig, SequenceTooLong, ShapeMismatch
from .models.config_models import EncoderConfig
from .tokenization import PAD_ID, Modality, TokenSequence
from .utils.seeding import seeded_torch

logger = logging.getLogger(__name__)

MASKED_LOGIT = -1e9
EMBEDDING_INIT_STD = 0.02


class MultiHeadAttention(nn.Module):
    """
    Scaled dot-product attention with separate Q/K/V/O projections.

    Keys flagged False in ``key_mask`` receive a logit of -1e9.
    """

    def __init__(self, dim: int, num_heads: int, dropout_rate: float = 0.0):
        super().__init__()
        if dim % num_heads:
            raise InvalidConfig(f"dim {dim} is not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.output = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout_rate)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self,
                query: torch.Tensor,
                context: torch.Tensor,
                key_mask: Optional[torch.Tensor] = None,
                need_weights: bool = False) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        """
        Args:
            query: (B, Lq, D)
            context: (B, Lk, D)
            key_mask: (B, Lk) bool, True for real tokens
            need_weights: Return post-softmax weights (B, H, Lq, Lk)
        """
        q = self._split(self.query(query))
        k = self._split(self.key(context))
        v = self._split(self.value(context))

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], MASKED_LOGIT)
        weights = scores.softmax(dim=-1)

        mixed = self.dropout(weights) @ v
        batch, _, length, _ = mixed.shape
        mixed = mixed.transpose(1, 2).reshape(batch, length, self.num_heads * self.head_dim)
        return self.output(mixed), (weights if need_weights else None)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden_dim: int, dropout_rate: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, dim)
        self.dropout = nn.Dropout(dropout_rate)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.dropout(F.silu(self.fc1(x))))


class EncoderLayer(nn.Module):
    """Pre-LN self-attention block."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.attention_norm = nn.LayerNorm(config.embed_dim)
        self.attention = MultiHeadAttention(config.embed_dim, config.num_heads, config.dropout_rate)
        self.ffn_norm = nn.LayerNorm(config.embed_dim)
        self.ffn = FeedForward(config.embed_dim, config.ffn_dim, config.dropout_rate)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, x: torch.Tensor, mask: torch.Tensor,
                need_weights: bool = False) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        normed = self.attention_norm(x)
        attended, weights = self.attention(normed, normed, mask, need_weights)
        x = x + self.dropout(attended)
        x = x + self.dropout(self.ffn(self.ffn_norm(x)))
        return x, weights


def sinusoidal_table(max_tokens: int, dim: int) -> torch.Tensor:
    position = torch.arange(max_tokens, dtype=torch.float32)[:, None]
    frequency = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    table = torch.zeros(max_tokens, dim)
    table[:, 0::2] = torch.sin(position * frequency)
    table[:, 1::2] = torch.cos(position * frequency[: dim // 2])
    return table


@dataclass
class EncoderOutput:
    """Batched encoder result; ``attention`` holds one (B, H, L, L) tensor per layer."""

    hidden: torch.Tensor
    mask: torch.Tensor
    attention: Optional[list[torch.Tensor]] = None


class SequenceEncoder(nn.Module):
    """Transformer encoder over token ids of one modality."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.embed_dim, padding_idx=PAD_ID)
        if config.positional == "learned":
            self.position_embedding = nn.Embedding(config.max_tokens, config.embed_dim)
        else:
            self.position_embedding = None
            self.register_buffer(
                "position_table", sinusoidal_table(config.max_tokens, config.embed_dim), persistent=False
            )
        self.dropout = nn.Dropout(config.dropout_rate)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.num_layers))
        self.final_norm = nn.LayerNorm(config.embed_dim)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def reset_parameters(self) -> None:
        """Glorot-uniform projections, zero biases, N(0, 0.02) embeddings, unit layer norms."""
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, mean=0.0, std=EMBEDDING_INIT_STD)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        with torch.no_grad():
            self.token_embedding.weight[PAD_ID].zero_()

    def check_ids(self, ids: torch.Tensor) -> None:
        if ids.shape[-1] > self.config.max_tokens:
            raise SequenceTooLong(
                f"{ids.shape[-1]} tokens exceed max_tokens={self.config.max_tokens}"
            )
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise IdOutOfRange(
                f"Token ids must lie in [0, {self.config.vocab_size}), "
                f"got range [{int(ids.min())}, {int(ids.max())}]"
            )

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.token_embedding(ids)
        length = ids.shape[1]
        if self.position_embedding is not None:
            positions = self.position_embedding.weight[:length]
        else:
            positions = self.position_table[:length]
        return self.dropout(x + positions[None])

    def forward(self,
                ids: torch.Tensor,
                mask: Optional[torch.Tensor] = None,
                capture_attention: bool = False) -> EncoderOutput:
        """
        Encode a padded batch.

        Args:
            ids: (B, L) token ids, right-padded with PAD
            mask: (B, L) bool, True for real tokens; derived from PAD when omitted
            capture_attention: Keep post-softmax weights of every layer

        Returns:
            EncoderOutput: (B, L, D) hidden states with zero rows at PAD

        Raises:
            SequenceTooLong: If L exceeds max_tokens
            IdOutOfRange: If an id is outside the vocabulary
        """
        self.check_ids(ids)
        if mask is None:
            mask = ids != PAD_ID

        x = self.embed(ids)
        attention = [] if capture_attention else None
        for layer in self.layers:
            x, weights = layer(x, mask, capture_attention)
            if attention is not None:
                attention.append(weights)
        hidden = self.final_norm(x) * mask[..., None].to(x.dtype)
        return EncoderOutput(hidden=hidden, mask=mask, attention=attention)


@dataclass
class Embeddings:
    """Per-token activations of one unbatched sequence."""

    values: torch.Tensor
    modality: Modality


@dataclass
class AttentionRecord:
    """Post-softmax attention of one sequence, shaped (layers, heads, L, L)."""

    weights: torch.Tensor

    @property
    def num_layers(self) -> int:
        return self.weights.shape[0]

    @property
    def num_heads(self) -> int:
        return self.weights.shape[1]


def init_encoder(config: Union[EncoderConfig, dict],
                 seed: int,
                 stream: str = "init:encoder") -> SequenceEncoder:
    """
    Build an encoder with deterministic initial weights.

    Args:
        config: Encoder shape
        seed: Run seed
        stream: Named sub-stream of the seed used for this encoder

    Returns:
        SequenceEncoder: Freshly initialised encoder

    Raises:
        InvalidConfig: If the config does not validate
    """
    if not isinstance(config, EncoderConfig):
        try:
            config = EncoderConfig.model_validate(config)
        except ValidationError as exc:
            raise InvalidConfig(str(exc)) from exc
    with seeded_torch(seed, stream):
        encoder = SequenceEncoder(config)
        encoder.reset_parameters()
    return encoder


def _as_batch(tokens: TokenSequence, device: torch.device) -> torch.Tensor:
    return torch.tensor([tokens.ids], dtype=torch.long, device=device)


def encode(tokens: TokenSequence,
           encoder: SequenceEncoder,
           capture_attention: bool = False,
           train_mode: bool = False) -> tuple[Embeddings, Optional[AttentionRecord]]:
    """
    Encode one token sequence.

    Dropout is active only when ``train_mode`` is set; the encoder's own
    train/eval mode is restored afterwards.

    Returns:
        tuple: (L, D) embeddings and, when requested, the attention record
    """
    device = next(encoder.parameters()).device
    was_training = encoder.training
    encoder.train(train_mode)
    try:
        with torch.no_grad():
            output = encoder(_as_batch(tokens, device), capture_attention=capture_attention)
    finally:
        encoder.train(was_training)

    record = None
    if capture_attention:
        record = AttentionRecord(torch.stack([w[0] for w in output.attention]))
    return Embeddings(output.hidden[0], tokens.modality), record


def encode_backward(tokens: TokenSequence,
                    encoder: SequenceEncoder,
                    upstream_grad: torch.Tensor) -> dict[str, torch.Tensor]:
    """
    Gradient of <encode(tokens), upstream_grad> with respect to every parameter.

    The forward pass is recomputed in eval mode. Parameters that do not
    influence the output get zero gradients.

    Raises:
        ShapeMismatch: If upstream_grad is not shaped like the encoder output
    """
    device = next(encoder.parameters()).device
    expected = (len(tokens), encoder.embed_dim)
    if tuple(upstream_grad.shape) != expected:
        raise ShapeMismatch(f"upstream gradient {tuple(upstream_grad.shape)} != output {expected}")

    named = [(name, param) for name, param in encoder.named_parameters() if param.requires_grad]
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.enable_grad():
            output = encoder(_as_batch(tokens, device)).hidden[0]
            grads = torch.autograd.grad(
                output,
                [param for _, param in named],
                grad_outputs=upstream_grad.to(device=device, dtype=output.dtype),
                allow_unused=True,
            )
    finally:
        encoder.train(was_training)

    gradients = {name: torch.zeros_like(param) for name, param in encoder.named_parameters()}
    for (name, _), grad in zip(named, grads):
        if grad is not None:
            gradients[name] = grad
    return gradients
