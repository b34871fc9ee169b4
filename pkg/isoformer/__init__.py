"""
IsoFormer Package

Multi-modal transcript isoform expression modelling: DNA, RNA and protein
sequences of a transcript are tokenized, encoded by one transformer per
modality, fused by a cross-attention aggregation module and mapped to
per-tissue expression predictions.

Modules:
    - tokenization: alphabets, k-mer vocabularies and tokenizers
    - encoder: per-modality transformer encoders
    - aggregation: cross-attention fusion strategies
    - network: the full model, prediction and parameter counts
    - data / synthetic: dataset building, normalisation, splits and planted-signal data
    - training / metrics: loss, fine-tuning, warm-up, ablations, R2 and Spearman
    - analysis: attention-ratio comparison over transcript regions
    - services / cli: orchestration and the command-line entry point
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Settings, get_settings
from .network import IsoFormer, build_model, predict
from .services import AnalysisService, ExperimentService
from .tokenization import build_vocabulary, tokenize_nucleotide, tokenize_protein
from .utils import ErrorHandler

__version__ = "0.1.0"
__all__ = [
    # Configuration
    'Settings',
    'get_settings',

    # Model
    'IsoFormer',
    'build_model',
    'predict',
    'load_checkpoint',
    'save_checkpoint',

    # Tokenization
    'build_vocabulary',
    'tokenize_nucleotide',
    'tokenize_protein',

    # Services
    'AnalysisService',
    'ExperimentService',

    # Utilities
    'ErrorHandler',
]
