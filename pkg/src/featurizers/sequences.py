"""
Fixed-length token sequences shared by the path and API featurizers
"""
from typing import Iterable, List, NamedTuple

import numpy as np

from src.utils.errors import InputError

PAD_ID = 0
RARE_ID = 1
RESERVED_IDS = 2


class TokenSequence(NamedTuple):
    """Token ids of exactly `len(ids)` entries; positions at or after true_length hold PAD_ID"""

    ids: np.ndarray
    true_length: int


def pad_truncate(tokens: Iterable[int], n: int) -> TokenSequence:
    """
    Keep the first n tokens, right-pad with PAD_ID

    Args:
        tokens: Token ids in emission order
        n: Output length

    Returns:
        TokenSequence with int64 ids of length n
    """
    if n < 1:
        raise InputError(f"sequence length must be >= 1, got {n}")
    tokens = list(tokens)
    ids = np.full(n, PAD_ID, dtype=np.int64)
    kept = tokens[:n]
    ids[:len(kept)] = kept
    return TokenSequence(ids=ids, true_length=len(tokens))


def stack_sequences(sequences: List[TokenSequence]) -> np.ndarray:
    """(batch, n) id matrix from equal-length sequences"""
    if not sequences:
        return np.zeros((0, 0), dtype=np.int64)
    return np.stack([seq.ids for seq in sequences]).astype(np.int64)
