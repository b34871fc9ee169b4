"""
Validation utilities for IsoFormer.

This module provides input validation and normalisation of biological
sequences and numeric arguments shared by the tokenizer, the data pipeline
and the command-line entry point.
"""

import re
from typing import Iterable

from ..exceptions import EmptySequence, IllegalCharacter, InvalidConfig

NUCLEOTIDE_INPUT = frozenset("ACGTUN")
_PROTEIN_INPUT = re.compile(r"[^A-Z]")


def validate_nucleotides(sequence: str, kind: str = "nucleotide sequence") -> str:
    """
    Validate a DNA or RNA string and return its uppercase form.

    Args:
        sequence: Raw nucleotide string, any case
        kind: Label used in error messages

    Returns:
        str: Uppercase sequence

    Raises:
        EmptySequence: If the sequence is empty
        IllegalCharacter: If a character is outside {A,C,G,T,U,N}
    """
    if not sequence:
        raise EmptySequence(f"Empty {kind}")

    upper = sequence.upper()
    for position, character in enumerate(upper):
        if character not in NUCLEOTIDE_INPUT:
            raise IllegalCharacter(sequence[position], position, kind)
    return upper


def validate_protein(sequence: str) -> str:
    """
    Validate an amino-acid string and return its uppercase form.

    Args:
        sequence: Raw protein string, any case

    Returns:
        str: Uppercase sequence

    Raises:
        EmptySequence: If the sequence is empty
        IllegalCharacter: If a character is outside A-Z
    """
    if not sequence:
        raise EmptySequence("Empty protein sequence")

    upper = sequence.upper()
    match = _PROTEIN_INPUT.search(upper)
    if match:
        position = match.start()
        raise IllegalCharacter(sequence[position], position, "protein sequence")
    return upper


def validate_fraction(name: str, value: float) -> float:
    """
    Validate a value in the open interval (0, 1).

    Args:
        name: Parameter name used in error messages
        value: Value to check

    Returns:
        float: The validated value

    Raises:
        InvalidConfig: If the value is outside (0, 1)
    """
    if not 0.0 < value < 1.0:
        raise InvalidConfig(f"{name} must be in (0, 1), got {value}")
    return float(value)


def validate_modalities(modalities: Iterable[str]) -> list[str]:
    """
    Validate and canonically order a modality selection.

    Args:
        modalities: Any iterable of modality names

    Returns:
        list[str]: Modalities in (dna, rna, protein) order

    Raises:
        InvalidConfig: If a name is unknown or nothing is selected
    """
    canonical = ("dna", "rna", "protein")
    selected = {m.strip().lower() for m in modalities if m.strip()}
    unknown = selected - set(canonical)
    if unknown:
        raise InvalidConfig(f"Unknown modalities: {', '.join(sorted(unknown))}")
    if not selected:
        raise InvalidConfig("At least one modality must be enabled")
    return [m for m in canonical if m in selected]
