"""Exhaustive permutation search shared by PIT, BSS-eval and WER scoring."""
from __future__ import annotations

import itertools
from typing import Tuple

import numpy as np

MAX_SOURCES = 8


def best_permutation(cost: np.ndarray, maximize: bool = False, limit: int = MAX_SOURCES) -> Tuple[Tuple[int, ...], float]:
    """Return (perm, total) optimising sum(cost[i, perm[i]]).

    Permutations are visited in lexicographic order and only a strictly
    better total replaces the incumbent, so ties resolve to the
    lexicographically smallest permutation.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] < 1:
        raise ValueError(f"cost must be a non-empty square matrix, got {cost.shape}")
    n = cost.shape[0]
    if n > limit:
        raise ValueError(f"exhaustive search supports at most {limit} sources, got {n}")
    rows = np.arange(n)
    best, best_total = None, None
    for perm in itertools.permutations(range(n)):
        total = float(cost[rows, perm].sum())
        if best is None or (total > best_total if maximize else total < best_total):
            best, best_total = perm, total
    return best, best_total
