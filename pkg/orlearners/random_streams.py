"""
Seed splitting.

Every random draw in the package comes from a numpy PCG64 generator whose
SeedSequence entropy is (seed, *labels), so independent streams exist per
dataset, epoch and minibatch without any global state. Torch only needs
seeds for weight initialisation; `seeded` forks its RNG for that.
"""
import zlib
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import torch

_MASK64 = (1 << 64) - 1


def _label_to_int(label: str | int) -> int:
    if isinstance(label, int):
        return label & _MASK64
    return zlib.crc32(label.encode("utf-8"))


def seed_sequence(seed: int, *labels: str | int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed & _MASK64, *(_label_to_int(label) for label in labels)])


def stream(seed: int, *labels: str | int) -> np.random.Generator:
    """Independent PCG64 generator for (seed, labels)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *labels)))


def derive_seed(seed: int, *labels: str | int, bits: int = 63) -> int:
    """An integer seed for libraries that take plain ints (torch wants 63 bits, sklearn 32)."""
    state = int(seed_sequence(seed, *labels).generate_state(1, dtype=np.uint64)[0])
    return state >> (64 - bits)


@contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Seed torch inside a forked RNG state; the caller's state is restored on exit."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield
