"""
Tokenization of nucleotide and amino-acid sequences.

Nucleotide sequences are cut greedily from the left into k-mers; a remainder
shorter than k is emitted one nucleotide per token. Any chunk containing an
``N`` maps to the UNK token. Proteins are tokenized one residue per token.

Vocabulary ids are assigned deterministically: PAD (0) and UNK (1) first,
then every token string in lexicographic order. An optional MASK special is
appended after all entries for masked-language-model warm-up.
"""

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional, Union

from .exceptions import (
    ContainsUnknown,
    EmptySequence,
    IdOutOfRange,
    IllegalCharacter,
    InvalidVocabulary,
    IoFailure,
    KTooLarge,
    ParseError,
)
from .utils.validation_utils import validate_nucleotides, validate_protein


PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MASK_TOKEN = "<mask>"
PAD_ID = 0
UNK_ID = 1
MAX_K = 8

NON_CANONICAL_AMINO_ACIDS = frozenset("BJOUXZ")


class AlphabetKind(str, Enum):
    NUCLEOTIDE = "nucleotide"
    AMINO_ACID = "amino-acid"


class Modality(str, Enum):
    DNA = "dna"
    RNA = "rna"
    PROTEIN = "protein"


MODALITIES = (Modality.DNA, Modality.RNA, Modality.PROTEIN)


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set of one sequence kind."""

    kind: AlphabetKind
    symbols: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidVocabulary(f"Duplicate symbols in {self.kind.value} alphabet")
        expected = 4 if self.kind is AlphabetKind.NUCLEOTIDE else 20
        if len(self.symbols) != expected:
            raise InvalidVocabulary(
                f"{self.kind.value} alphabet needs {expected} symbols, got {len(self.symbols)}"
            )


NUCLEOTIDE_ALPHABET = Alphabet(AlphabetKind.NUCLEOTIDE, tuple("ACGT"))
AMINO_ACID_ALPHABET = Alphabet(AlphabetKind.AMINO_ACID, tuple("ACDEFGHIKLMNPQRSTVWY"))


class Vocabulary:
    """
    Immutable token-to-id table.

    Instances are shared freely between workers; every mutator returns a
    new vocabulary.
    """

    def __init__(self, kind: AlphabetKind, k: int, tokens: tuple[str, ...]):
        self.kind = kind
        self.k = k
        self._tokens = tokens
        self._entries = MappingProxyType({token: index for index, token in enumerate(tokens)})
        if tokens[PAD_ID] != PAD_TOKEN or tokens[UNK_ID] != UNK_TOKEN:
            raise InvalidVocabulary("PAD and UNK must occupy ids 0 and 1")

    @property
    def entries(self) -> Mapping[str, int]:
        return self._entries

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def mask_id(self) -> Optional[int]:
        return self._entries.get(MASK_TOKEN)

    @property
    def special_ids(self) -> frozenset[int]:
        specials = {PAD_ID, UNK_ID}
        if self.mask_id is not None:
            specials.add(self.mask_id)
        return frozenset(specials)

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self.kind, self.k, self._tokens) == (other.kind, other.k, other._tokens)

    def __hash__(self) -> int:
        return hash((self.kind, self.k, self._tokens))

    def __repr__(self) -> str:
        return f"Vocabulary(kind={self.kind.value!r}, k={self.k}, size={len(self)})"

    def id_of(self, token: str) -> int:
        return self._entries.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise IdOutOfRange(f"Token id {token_id} outside vocabulary of size {len(self)}")
        return self._tokens[token_id]

    def with_mask(self) -> "Vocabulary":
        """Return a copy with MASK appended; existing ids are unchanged."""
        if self.mask_id is not None:
            return self
        return Vocabulary(self.kind, self.k, self._tokens + (MASK_TOKEN,))


@dataclass(frozen=True)
class TokenSequence:
    """Token ids of one sequence, without padding."""

    ids: tuple[int, ...]
    modality: Modality
    source_length: int

    def __len__(self) -> int:
        return len(self.ids)


def _as_kind(kind: Union[AlphabetKind, str]) -> AlphabetKind:
    try:
        return AlphabetKind(kind)
    except ValueError as exc:
        raise InvalidVocabulary(f"Unknown alphabet kind: {kind!r}") from exc


@lru_cache(maxsize=None)
def _build(kind: AlphabetKind, k: int) -> Vocabulary:
    if kind is AlphabetKind.AMINO_ACID:
        body = set(AMINO_ACID_ALPHABET.symbols)
    else:
        symbols = NUCLEOTIDE_ALPHABET.symbols
        body = {"".join(kmer) for kmer in itertools.product(symbols, repeat=k)}
        body.update(symbols)
    return Vocabulary(kind, k, (PAD_TOKEN, UNK_TOKEN) + tuple(sorted(body)))


def build_vocabulary(kind: Union[AlphabetKind, str], k: int = 1) -> Vocabulary:
    """
    Build the vocabulary of an alphabet at a given k-mer size.

    Args:
        kind: ``nucleotide`` or ``amino-acid``
        k: k-mer size; must be 1 for amino acids

    Returns:
        Vocabulary: PAD, UNK, then all token strings in lexicographic order

    Raises:
        KTooLarge: If k exceeds 8
        InvalidVocabulary: If k < 1 or an amino-acid vocabulary has k != 1
    """
    kind = _as_kind(kind)
    if k < 1:
        raise InvalidVocabulary(f"k must be at least 1, got {k}")
    if k > MAX_K:
        raise KTooLarge(f"k={k} exceeds the maximum of {MAX_K}")
    if kind is AlphabetKind.AMINO_ACID and k != 1:
        raise InvalidVocabulary("Amino-acid vocabularies only support k=1")
    return _build(kind, k)


def vocabulary_size(kind: Union[AlphabetKind, str], k: int = 1, with_mask: bool = False) -> int:
    return len(build_vocabulary(kind, k)) + (1 if with_mask else 0)


def token_spans(length: int, k: int) -> list[tuple[int, int]]:
    """
    Character span of every token under the chunking rule.

    Args:
        length: Sequence length in characters
        k: k-mer size

    Returns:
        list[tuple[int, int]]: Half-open ``(start, end)`` spans in token order
    """
    full = (length // k) * k
    spans = [(start, start + k) for start in range(0, full, k)]
    spans.extend((position, position + 1) for position in range(full, length))
    return spans


def tokenize_nucleotide(seq: str, vocab: Vocabulary, is_rna: bool = False) -> TokenSequence:
    """
    Tokenize a DNA or RNA string.

    Args:
        seq: Nucleotide string over {A,C,G,T,U,N}, any case
        vocab: Nucleotide vocabulary
        is_rna: Map U to T before lookup

    Returns:
        TokenSequence: k-mer tokens followed by single-nucleotide remainder tokens

    Raises:
        EmptySequence: If seq is empty
        IllegalCharacter: For characters outside the alphabet, and for U in DNA
        InvalidVocabulary: If vocab is not a nucleotide vocabulary
    """
    if vocab.kind is not AlphabetKind.NUCLEOTIDE:
        raise InvalidVocabulary("Nucleotide tokenization needs a nucleotide vocabulary")

    kind = "RNA sequence" if is_rna else "DNA sequence"
    upper = validate_nucleotides(seq, kind)
    if is_rna:
        upper = upper.replace("U", "T")
    elif "U" in upper:
        raise IllegalCharacter(seq[upper.index("U")], upper.index("U"), kind)

    entries = vocab.entries
    ids = tuple(
        UNK_ID if "N" in upper[start:end] else entries[upper[start:end]]
        for start, end in token_spans(len(upper), vocab.k)
    )
    return TokenSequence(ids, Modality.RNA if is_rna else Modality.DNA, len(seq))


def tokenize_protein(seq: str, vocab: Vocabulary) -> TokenSequence:
    """
    Tokenize an amino-acid string one residue per token.

    Non-canonical residues (B, J, O, U, X, Z) map to UNK. Stop symbols are
    removed when records are assembled, so ``*`` is illegal here.

    Raises:
        EmptySequence: If seq is empty
        IllegalCharacter: For characters outside A-Z
        InvalidVocabulary: If vocab is not an amino-acid vocabulary
    """
    if vocab.kind is not AlphabetKind.AMINO_ACID:
        raise InvalidVocabulary("Protein tokenization needs an amino-acid vocabulary")

    upper = validate_protein(seq)
    entries = vocab.entries
    ids = tuple(entries.get(residue, UNK_ID) for residue in upper)
    return TokenSequence(ids, Modality.PROTEIN, len(seq))


def detokenize(tokens: TokenSequence, vocab: Vocabulary) -> str:
    """
    Reassemble the canonical string of a token sequence.

    Raises:
        ContainsUnknown: If a UNK, PAD or MASK id is present
        IdOutOfRange: If an id is outside the vocabulary
    """
    specials = vocab.special_ids
    pieces = []
    for position, token_id in enumerate(tokens.ids):
        token = vocab.token_of(token_id)
        if token_id in specials:
            raise ContainsUnknown(f"Token {token} at position {position} has no sequence")
        pieces.append(token)
    return "".join(pieces)


def write_vocabulary(vocab: Vocabulary, path: Union[str, Path]) -> None:
    """Write ``<id>\\t<token>`` lines, specials first."""
    lines = [f"{index}\t{token}\n" for index, token in enumerate(vocab.tokens)]
    try:
        Path(path).write_text("".join(lines), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write vocabulary to {path}: {exc}") from exc


def read_vocabulary(path: Union[str, Path]) -> Vocabulary:
    """
    Read a vocabulary dump and check it against the deterministic builder.

    Raises:
        ParseError: For malformed lines or non-contiguous ids
        InvalidVocabulary: If the entries do not form a known vocabulary
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot read vocabulary from {path}: {exc}") from exc

    tokens = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].isdigit():
            raise ParseError(str(path), line_number, "expected '<id>\\t<token>'")
        if int(parts[0]) != len(tokens):
            raise ParseError(str(path), line_number, f"expected id {len(tokens)}, got {parts[0]}")
        tokens.append(parts[1])

    has_mask = bool(tokens) and tokens[-1] == MASK_TOKEN
    body = [token for token in tokens if token not in (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN)]
    if not body:
        raise InvalidVocabulary(f"{path} holds no sequence tokens")
    if set(body) <= set(NUCLEOTIDE_ALPHABET.symbols) or any(len(token) > 1 for token in body):
        vocab = build_vocabulary(AlphabetKind.NUCLEOTIDE, max(len(token) for token in body))
    else:
        vocab = build_vocabulary(AlphabetKind.AMINO_ACID, 1)
    if has_mask:
        vocab = vocab.with_mask()
    if vocab.tokens != tuple(tokens):
        raise InvalidVocabulary(f"{path} does not match the {vocab!r} layout")
    return vocab
