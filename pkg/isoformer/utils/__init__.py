"""
Utility functions for IsoFormer.

This package contains helpers used across the domain modules and services:
exit-code mapping, input validation and named random streams.
"""

from .error_handlers import ErrorHandler
from .seeding import derive_seed, numpy_rng, seeded_torch, torch_generator
from .validation_utils import (
    validate_fraction,
    validate_modalities,
    validate_nucleotides,
    validate_protein,
)

__all__ = [
    'ErrorHandler',
    'derive_seed',
    'numpy_rng',
    'seeded_torch',
    'torch_generator',
    'validate_fraction',
    'validate_modalities',
    'validate_nucleotides',
    'validate_protein',
]
