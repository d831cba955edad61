"""
Multi-entity self-attention masks.

Token (t, k) sits at flat index t*K + k. The causal mask lets token (t1, k1)
look at (t2, k2) exactly when t2 <= t1.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from errors import EntityIndexError, UsageError

logger = logging.getLogger(__name__)

AdjacencyPredicate = Callable[[int, int, int, int], bool]


@dataclass(frozen=True, eq=False)
class EntityMask:
    steps: int
    entities: int
    allowed: np.ndarray

    def __post_init__(self):
        side = self.steps * self.entities
        if self.allowed.shape != (side, side):
            raise UsageError(f"mask side {self.allowed.shape} does not equal T*K={side}")
        self.allowed.setflags(write=False)

    @property
    def side(self) -> int:
        return self.steps * self.entities

    def allows(self, t1: int, k1: int, t2: int, k2: int) -> bool:
        K = self.entities
        return bool(self.allowed[index_of(t1, k1, K, self.steps), index_of(t2, k2, K, self.steps)])

    def as_tensor(self) -> np.ndarray:
        """The T x K x T x K view of the same entries."""
        T, K = self.steps, self.entities
        return self.allowed.reshape(T, K, T, K)

    def to_text(self) -> str:
        return '\n'.join(''.join('1' if v else '0' for v in row) for row in self.allowed) + '\n'

    def __eq__(self, other):
        return (isinstance(other, EntityMask) and self.steps == other.steps
                and self.entities == other.entities and np.array_equal(self.allowed, other.allowed))


def _check_counts(T: int, K: int):
    if T < 1 or K < 1:
        raise UsageError(f"mask needs T >= 1 and K >= 1, got T={T}, K={K}")


def index_of(t: int, k: int, K: int, T: int = None) -> int:
    if K < 1 or not 0 <= k < K or t < 0 or (T is not None and t >= T):
        raise EntityIndexError(f"(t={t}, k={k}) outside T={T}, K={K}")
    return t * K + k


def _step_of_token(T: int, K: int) -> np.ndarray:
    return np.repeat(np.arange(T), K)


@lru_cache(maxsize=64)
def build_causal_entity_mask(T: int, K: int) -> EntityMask:
    _check_counts(T, K)
    step = _step_of_token(T, K)
    allowed = step[np.newaxis, :] <= step[:, np.newaxis]
    return EntityMask(T, K, allowed)


def build_custom_mask(adjacency: AdjacencyPredicate, T: int, K: int) -> EntityMask:
    """
    Causal skeleton intersected with an adjacency predicate over
    (t1, k1, t2, k2). Future entries stay denied whatever the predicate says,
    and every token keeps sight of itself.
    """
    _check_counts(T, K)
    side = T * K
    allowed = np.zeros((side, side), dtype=bool)
    for t1 in range(T):
        for k1 in range(K):
            row = t1 * K + k1
            for t2 in range(t1 + 1):
                for k2 in range(K):
                    if adjacency(t1, k1, t2, k2):
                        allowed[row, t2 * K + k2] = True
            allowed[row, row] = True
    return EntityMask(T, K, allowed)


def group_predicate(groups_per_step: Sequence[Sequence[int]]) -> AdjacencyPredicate:
    """
    Predicate for an evolving graph given as one group label per entity per
    step: (t1, k1) sees (t2, k2) when both entities share a group at step t1.
    """
    def predicate(t1, k1, t2, k2):
        groups = groups_per_step[t1]
        return groups[k1] == groups[k2]

    return predicate
