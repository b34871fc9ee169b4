"""
Exception hierarchy for IsoFormer.

Every error carries the process exit code the command-line entry point
returns when the error escapes a command:

    1  usage or configuration error
    2  data, parse, shape, checkpoint or grid error
    3  input/output failure
    4  non-finite training loss
    5  unexpected internal error (see ErrorHandler)
"""

from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3
EXIT_NON_FINITE = 4
EXIT_INTERNAL = 5


class IsoFormerError(Exception):
    """Base class for all errors raised by the package."""

    exit_code: int = EXIT_DATA


# Usage and configuration

class UsageError(IsoFormerError):
    exit_code = EXIT_USAGE


class InvalidConfig(IsoFormerError):
    exit_code = EXIT_USAGE


# Tokenization

class EmptySequence(IsoFormerError):
    pass


class IllegalCharacter(IsoFormerError):
    """A sequence contains a character outside its alphabet."""

    def __init__(self, character: str, position: int, sequence_kind: str = "sequence"):
        self.character = character
        self.position = position
        super().__init__(
            f"Illegal character {character!r} at position {position} in {sequence_kind}"
        )


class KTooLarge(IsoFormerError):
    pass


class InvalidVocabulary(IsoFormerError):
    pass


class ContainsUnknown(IsoFormerError):
    pass


# Encoder, aggregation and model

class SequenceTooLong(IsoFormerError):
    pass


class IdOutOfRange(IsoFormerError):
    pass


class ShapeMismatch(IsoFormerError):
    pass


class NoModalityPresent(IsoFormerError):
    pass


class CorruptCheckpoint(IsoFormerError):
    pass


class IoFailure(IsoFormerError):
    exit_code = EXIT_IO


# Data

class ParseError(IsoFormerError):
    """A data file could not be parsed; ``line`` is 1-based."""

    def __init__(self, path: str, line: Optional[int], message: str):
        self.path = str(path)
        self.line = line
        location = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{location}: {message}")


class MissingSequence(IsoFormerError):
    pass


class WindowOutOfBounds(IsoFormerError):
    pass


class NegativeExpression(IsoFormerError):
    pass


class TooFewGenes(IsoFormerError):
    pass


# Training

class DegenerateTargets(IsoFormerError):
    pass


class EmptyDataset(IsoFormerError):
    pass


class NonFiniteLoss(IsoFormerError):
    exit_code = EXIT_NON_FINITE


class MissingMaskToken(IsoFormerError):
    pass


# Analysis

class MaskLengthMismatch(IsoFormerError):
    pass


class GridMismatch(IsoFormerError):
    pass


class InsufficientSamples(IsoFormerError):
    pass


class IntervalOutOfBounds(IsoFormerError):
    pass


class OverlappingIntervals(IsoFormerError):
    pass
