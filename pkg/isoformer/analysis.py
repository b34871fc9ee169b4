"""
Attention-ratio interpretability.

For a region indicator ``f`` over the tokens of a sequence and a threshold
``mu``, the attention ratio of one layer/head on one sequence is

    rho = sum_i f(i) * #{j : a(i, j) > mu}  /  #{(i, j) : a(i, j) > mu}

i.e. the share of above-threshold attention entries whose query token lies
in the region. Per-sequence ratios are averaged over a sample set; two
fine-tuned models are compared through the relative change of their ratios
and a per-layer/head Welch t-test.
"""

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import ttest_ind

from .data import read_region_table, write_region_table
from .dataset import RecordTokenizer
from .encoder import encode
from .exceptions import (
    GridMismatch,
    InsufficientSamples,
    IntervalOutOfBounds,
    InvalidConfig,
    IoFailure,
    MaskLengthMismatch,
    OverlappingIntervals,
)
from .models.config_models import AnalysisConfig, DataConfig
from .models.data_models import RegionInterval, TranscriptRecord
from .network import IsoFormer
from .tokenization import token_spans

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

__all__ = [
    'AttentionAnalysis',
    'AttentionRatioMap',
    'DeltaMap',
    'RegionMask',
    'SignificanceResult',
    'analyze_attention',
    'annotate_regions',
    'attention_ratio',
    'build_delta_map',
    'collect_attention',
    'delta_rho',
    'read_region_table',
    'significance_test',
    'write_analysis_tsv',
    'write_region_table',
    'write_reported_matrices',
]


# Region masks

@dataclass(frozen=True)
class RegionMask:
    """Per-token indicator of one region on one sequence."""

    region: str
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.mask)


def annotate_regions(record: Union[TranscriptRecord, int],
                     intervals: Sequence[RegionInterval],
                     k: int,
                     regions: Optional[Sequence[str]] = None,
                     num_tokens: Optional[int] = None) -> dict[str, RegionMask]:
    """
    Map character intervals on an RNA sequence to token masks.

    A token belongs to a region when strictly more than half of its
    characters fall inside one of the region's intervals.

    Args:
        record: Record whose RNA is annotated, or the RNA length
        intervals: Half-open character intervals
        k: k-mer size of the RNA tokenization
        regions: Region names to return; defaults to those in ``intervals``
        num_tokens: Keep only the first tokens (the encoder's crop)

    Returns:
        dict[str, RegionMask]: One mask per region; regions without
            intervals are all zero

    Raises:
        IntervalOutOfBounds: If an interval leaves the sequence
        OverlappingIntervals: If two intervals overlap
    """
    length = len(record.rna_seq) if isinstance(record, TranscriptRecord) else int(record)
    ordered = sorted(intervals, key=lambda interval: (interval.start, interval.end))
    for interval in ordered:
        if interval.start < 0 or interval.end > length:
            raise IntervalOutOfBounds(
                f"{interval.region_name} [{interval.start}, {interval.end}) outside sequence of length {length}"
            )
    for left, right in zip(ordered, ordered[1:]):
        if right.start < left.end:
            raise OverlappingIntervals(
                f"{left.region_name} [{left.start}, {left.end}) overlaps "
                f"{right.region_name} [{right.start}, {right.end})"
            )

    spans = token_spans(length, k)
    if num_tokens is not None:
        spans = spans[:num_tokens]
    starts = np.array([start for start, _ in spans], dtype=np.int64)
    ends = np.array([end for _, end in spans], dtype=np.int64)

    names = list(regions) if regions is not None else sorted({i.region_name for i in intervals})
    masks = {}
    for name in names:
        inside = np.zeros(len(spans), dtype=np.int64)
        for interval in intervals:
            if interval.region_name == name:
                inside += np.clip(np.minimum(ends, interval.end) - np.maximum(starts, interval.start), 0, None)
        masks[name] = RegionMask(name, 2 * inside > ends - starts)
    return masks


# Attention ratios

@dataclass
class AttentionRatioMap:
    """
    Ratios per layer and head.

    ``per_sample`` is (samples, layers, heads) and ``rho`` (layers, heads);
    NaN marks undefined values (no attention entry above the threshold).
    """

    per_sample: np.ndarray
    rho: np.ndarray
    region: str = ""

    @property
    def grid(self) -> tuple[int, int]:
        return self.rho.shape

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.rho)


def sample_ratio(attention: np.ndarray, mask: np.ndarray, mu: float) -> np.ndarray:
    """(layers, heads, L, L) attention and an L-mask -> (layers, heads) ratios."""
    above = np.asarray(attention) > mu
    row_counts = above.sum(axis=-1, dtype=np.int64)
    numerator = row_counts @ np.asarray(mask, dtype=np.int64)
    denominator = row_counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = numerator / denominator
    return np.where(denominator > 0, ratio, np.nan)


def attention_ratio(attention: Sequence[np.ndarray],
                    masks: Sequence[Union[RegionMask, np.ndarray]],
                    mu: float = 0.01,
                    region: str = "") -> AttentionRatioMap:
    """
    Ratio of above-threshold attention originating in a region.

    Args:
        attention: Per sample, (layers, heads, L, L) post-softmax weights
        masks: Per sample, the region indicator over its L tokens
        mu: Threshold in (0, 1); entries must exceed it strictly
        region: Label carried by the map

    Returns:
        AttentionRatioMap: Per-sample ratios and their mean over the samples
            where each cell is defined

    Raises:
        MaskLengthMismatch: If a mask does not match its attention matrix
        GridMismatch: If samples have different layer/head grids
    """
    if not 0.0 < mu < 1.0:
        raise InvalidConfig(f"mu must be in (0, 1), got {mu}")
    if len(attention) != len(masks):
        raise MaskLengthMismatch(f"{len(attention)} attention records for {len(masks)} masks")
    if not attention:
        raise InsufficientSamples("No attention records")

    grid = np.asarray(attention[0]).shape[:2]
    ratios = []
    for index, (weights, mask) in enumerate(zip(attention, masks)):
        weights = np.asarray(weights)
        indicator = mask.mask if isinstance(mask, RegionMask) else np.asarray(mask)
        if weights.ndim != 4 or weights.shape[-1] != weights.shape[-2]:
            raise MaskLengthMismatch(f"Sample {index}: attention of shape {weights.shape}")
        if weights.shape[:2] != grid:
            raise GridMismatch(f"Sample {index}: grid {weights.shape[:2]} differs from {grid}")
        if len(indicator) != weights.shape[-1]:
            raise MaskLengthMismatch(
                f"Sample {index}: mask of length {len(indicator)} for {weights.shape[-1]} tokens"
            )
        ratios.append(sample_ratio(weights, indicator, mu))

    per_sample = np.stack(ratios)
    with warnings.catch_warnings():
        # all-NaN cells stay NaN
        warnings.simplefilter("ignore", category=RuntimeWarning)
        rho = np.nanmean(per_sample, axis=0)
    return AttentionRatioMap(per_sample=per_sample, rho=rho, region=region)


def delta_rho(rho_a: AttentionRatioMap, rho_b: AttentionRatioMap) -> np.ndarray:
    """
    (rho_a - rho_b) / rho_b capped above at 1.

    Cells where either ratio is undefined or ``rho_b`` is 0 are NaN.

    Raises:
        GridMismatch: If the maps cover different layer/head grids
    """
    if rho_a.grid != rho_b.grid:
        raise GridMismatch(f"Grids differ: {rho_a.grid} vs {rho_b.grid}")
    a, b = rho_a.rho, rho_b.rho
    valid = ~np.isnan(a) & ~np.isnan(b) & (b != 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = np.minimum((a - b) / b, 1.0)
    return np.where(valid, delta, np.nan)


# Significance

@dataclass(frozen=True)
class SignificanceResult:
    t_statistic: float
    p_value: float
    selected: bool


def significance_test(samples_a: Sequence[float],
                      samples_b: Sequence[float],
                      alpha: float = 0.05) -> SignificanceResult:
    """
    Welch two-sample t-test; selected iff p < alpha.

    NaN samples are dropped. When both sides have zero variance the test
    degenerates: equal means give t = 0, p = 1; different means give an
    infinite t and p = 0.

    Raises:
        InsufficientSamples: If a side has fewer than 2 samples
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    a, b = a[~np.isnan(a)], b[~np.isnan(b)]
    if len(a) < 2 or len(b) < 2:
        raise InsufficientSamples(f"Need 2 samples per side, got {len(a)} and {len(b)}")

    if np.var(a) == 0.0 and np.var(b) == 0.0:
        difference = a.mean() - b.mean()
        if difference == 0.0:
            return SignificanceResult(0.0, 1.0, False)
        return SignificanceResult(float(np.copysign(np.inf, difference)), 0.0, True)

    result = ttest_ind(a, b, equal_var=False)
    t, p = float(result.statistic), float(result.pvalue)
    return SignificanceResult(t, p, bool(p < alpha))


@dataclass
class DeltaMap:
    """
    Relative ratio change per layer and head with its significance.

    ``reported`` zeroes non-significant cells and keeps NaN where the change
    is undefined.
    """

    rho_a: AttentionRatioMap
    rho_b: AttentionRatioMap
    delta: np.ndarray
    t_statistic: np.ndarray
    p_value: np.ndarray
    selected: np.ndarray
    reported: np.ndarray

    @property
    def region(self) -> str:
        return self.rho_a.region


def build_delta_map(rho_a: AttentionRatioMap, rho_b: AttentionRatioMap, alpha: float = 0.05) -> DeltaMap:
    """Delta ratios with a Welch test per layer/head on the per-sample ratios."""
    delta = delta_rho(rho_a, rho_b)
    layers, heads = rho_a.grid
    t_statistic = np.full((layers, heads), np.nan)
    p_value = np.full((layers, heads), np.nan)
    selected = np.zeros((layers, heads), dtype=bool)
    for layer in range(layers):
        for head in range(heads):
            try:
                result = significance_test(
                    rho_a.per_sample[:, layer, head], rho_b.per_sample[:, layer, head], alpha
                )
            except InsufficientSamples:
                continue
            t_statistic[layer, head] = result.t_statistic
            p_value[layer, head] = result.p_value
            selected[layer, head] = result.selected

    reported = np.where(np.isnan(delta), np.nan, np.where(selected, delta, 0.0))
    return DeltaMap(rho_a, rho_b, delta, t_statistic, p_value, selected, reported)


# Model-level pipeline

def collect_attention(model: IsoFormer,
                      records: Sequence[TranscriptRecord],
                      modality: str = "rna",
                      data_config: Optional[DataConfig] = None) -> list[np.ndarray]:
    """Self-attention (layers, heads, L, L) of one encoder for each record, in eval mode."""
    if modality not in model.modalities:
        raise InvalidConfig(f"Model has no {modality} encoder")
    tokenizer = RecordTokenizer(model.config, data_config)
    encoder = model.encoders[modality]
    collected = []
    for record in records:
        tokens = tokenizer.encode(record).tokens.get(modality)
        if tokens is None:
            continue
        _, attention = encode(tokens, encoder, capture_attention=True)
        collected.append(attention.weights.cpu().numpy().astype(np.float64))
    return collected


@dataclass
class AttentionAnalysis:
    maps: dict[str, DeltaMap]
    transcript_ids: list[str]


def _token_k(model: IsoFormer, modality: str) -> int:
    return {"dna": model.config.dna_k, "rna": model.config.rna_k}.get(modality, 1)


def _region_masks(records: Sequence[TranscriptRecord],
                  regions_by_id: Mapping[str, Sequence[RegionInterval]],
                  attention: Sequence[np.ndarray],
                  k: int,
                  names: Sequence[str]) -> dict[str, list[RegionMask]]:
    masks: dict[str, list[RegionMask]] = {name: [] for name in names}
    for record, weights in zip(records, attention):
        annotated = annotate_regions(record, regions_by_id[record.transcript_id], k, names, weights.shape[-1])
        for name in names:
            masks[name].append(annotated[name])
    return masks


def analyze_attention(model_a: IsoFormer,
                      model_b: IsoFormer,
                      records: Sequence[TranscriptRecord],
                      regions_by_id: Mapping[str, Sequence[RegionInterval]],
                      config: AnalysisConfig,
                      data_config: Optional[DataConfig] = None) -> AttentionAnalysis:
    """
    Compare the attention of one encoder between two fine-tuned models.

    Only records with annotated regions and the analysed modality are used.

    Raises:
        GridMismatch: If the two encoders have different layer/head grids
    """
    modality = config.modality
    for model in (model_a, model_b):
        if modality not in model.modalities:
            raise InvalidConfig(f"Model with {'+'.join(model.modalities)} has no {modality} encoder")
    grid_a = (model_a.config.encoder_config(modality).num_layers, model_a.config.encoder_config(modality).num_heads)
    grid_b = (model_b.config.encoder_config(modality).num_layers, model_b.config.encoder_config(modality).num_heads)
    if grid_a != grid_b:
        raise GridMismatch(f"{modality} encoders differ: {grid_a} vs {grid_b} (layers, heads)")

    selected = [r for r in records if r.transcript_id in regions_by_id and r.rna_seq]
    if config.max_samples is not None:
        selected = selected[: config.max_samples]
    if len(selected) < 2:
        raise InsufficientSamples(f"{len(selected)} annotated records; need at least 2")
    logger.info("Analysing %s attention over %d transcripts", modality, len(selected))

    attention_a = collect_attention(model_a, selected, modality, data_config)
    attention_b = collect_attention(model_b, selected, modality, data_config)
    masks_a = _region_masks(selected, regions_by_id, attention_a, _token_k(model_a, modality), config.regions)
    masks_b = _region_masks(selected, regions_by_id, attention_b, _token_k(model_b, modality), config.regions)

    maps = {}
    for region in config.regions:
        rho_a = attention_ratio(attention_a, masks_a[region], config.mu, region)
        rho_b = attention_ratio(attention_b, masks_b[region], config.mu, region)
        maps[region] = build_delta_map(rho_a, rho_b, config.alpha)
        logger.info("Region %s: %d of %d cells significant", region,
                    int(maps[region].selected.sum()), maps[region].selected.size)
    return AttentionAnalysis(maps, [record.transcript_id for record in selected])


def analysis_frame(analysis: AttentionAnalysis) -> pd.DataFrame:
    rows = []
    for region, delta_map in analysis.maps.items():
        layers, heads = delta_map.rho_a.grid
        for layer in range(layers):
            for head in range(heads):
                rows.append((
                    region, layer, head,
                    delta_map.rho_a.rho[layer, head],
                    delta_map.rho_b.rho[layer, head],
                    delta_map.delta[layer, head],
                    delta_map.t_statistic[layer, head],
                    delta_map.p_value[layer, head],
                    bool(delta_map.selected[layer, head]),
                    delta_map.reported[layer, head],
                ))
    columns = ["region", "layer", "head", "rho_a", "rho_b", "delta_rho",
               "t_statistic", "p_value", "selected", "reported"]
    return pd.DataFrame(rows, columns=columns)


def write_analysis_tsv(analysis: AttentionAnalysis, path: PathLike) -> None:
    try:
        analysis_frame(analysis).to_csv(path, sep="\t", index=False, na_rep="NA", float_format="%.10g")
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc


def write_reported_matrices(analysis: AttentionAnalysis, directory: PathLike) -> list[Path]:
    """One whitespace-separated layers x heads matrix per region, for plotting."""
    written = []
    for region, delta_map in analysis.maps.items():
        path = Path(directory) / f"delta_{region}.txt"
        try:
            np.savetxt(path, delta_map.reported, fmt="%.6g")
        except OSError as exc:
            raise IoFailure(f"Cannot write {path}: {exc}") from exc
        written.append(path)
    return written
