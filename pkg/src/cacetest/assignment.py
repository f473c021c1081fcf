"""Assignment mechanisms: random draws and exhaustive enumeration."""
from __future__ import annotations

import abc
import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterator

import numpy as np


class EnumerationLimitError(RuntimeError):
    """The assignment space is larger than the allowed enumeration limit."""


class AssignmentMechanism(abc.ABC):
    """Interface the randomization engine relies on.

    A blocked design only needs to implement these three methods.
    """

    @classmethod
    @abc.abstractmethod
    def from_observed(cls, obs) -> "AssignmentMechanism":
        ...

    @abc.abstractmethod
    def draw(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        ...

    @abc.abstractmethod
    def enumerate(self, limit: int = 10**6) -> Iterator[np.ndarray]:
        ...


@dataclass(frozen=True)
class CompleteRandomization(AssignmentMechanism):
    """``n_treated`` of ``n_total`` units treated, every subset equally likely."""

    n_total: int
    n_treated: int

    def __post_init__(self):
        if not 0 <= self.n_treated <= self.n_total:
            raise ValueError(f"need 0 <= n_treated <= n_total, got ({self.n_total}, {self.n_treated})")

    @classmethod
    def from_observed(cls, obs) -> "CompleteRandomization":
        return cls(obs.N, obs.n1)

    @property
    def size(self) -> int:
        return comb(self.n_total, self.n_treated)

    def draw(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """One assignment vector, or a ``(size, n_total)`` stack of them (int8)."""
        rows = 1 if size is None else size
        out = np.zeros((rows, self.n_total), dtype=np.int8)
        if 0 < self.n_treated < self.n_total:
            keys = rng.random((rows, self.n_total))
            treated = np.argpartition(keys, self.n_treated - 1, axis=1)[:, : self.n_treated]
            np.put_along_axis(out, treated, 1, axis=1)
        elif self.n_treated == self.n_total:
            out[:] = 1
        return out[0] if size is None else out

    def enumerate(self, limit: int = 10**6) -> Iterator[np.ndarray]:
        """Every assignment once, colexicographic in the treated-index sets."""
        if self.size > limit:
            raise EnumerationLimitError(
                f"enumeration limit exceeded: C({self.n_total},{self.n_treated}) = {self.size} > {limit}"
            )
        return self._colex()

    def _colex(self) -> Iterator[np.ndarray]:
        # colex order on k-subsets == lex order on reversed tuples
        subsets = sorted(itertools.combinations(range(self.n_total), self.n_treated),
                         key=lambda s: s[::-1])
        for s in subsets:
            z = np.zeros(self.n_total, dtype=np.int8)
            z[list(s)] = 1
            yield z

    def enumerate_matrix(self, limit: int = 10**6) -> np.ndarray:
        it = self.enumerate(limit)
        return np.array(list(it), dtype=np.int8).reshape(self.size, self.n_total)
