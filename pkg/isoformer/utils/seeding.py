"""
Named random sub-streams.

All randomness of a run flows from one integer seed. Components draw from
independent streams derived by name (``init:dna``, ``shuffle``, ``mask`` ...)
so that adding or removing a component never shifts another's draws.
"""

import hashlib
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import torch


def derive_seed(seed: int, stream: str) -> int:
    """Derive a 63-bit seed for a named stream."""
    digest = hashlib.sha256(f"{int(seed)}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def numpy_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream))


def torch_generator(seed: int, stream: str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, stream))
    return generator


@contextmanager
def seeded_torch(seed: int, stream: str) -> Iterator[None]:
    """Run a block under a seeded global torch RNG, restoring it afterwards."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, stream))
        yield
