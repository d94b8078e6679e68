"""User-user and item-item co-interaction graphs."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import InteractionMatrix
from .errors import DataError


class SimilarityMeasure(enum.Enum):
    CO_COUNT = "co-count"
    PEARSON = "pearson"
    COSINE = "cosine"
    JACCARD = "jaccard"


@dataclass
class SimilarityMatrix:
    """Symmetric weighted graph without self-loops, CSR layout with sorted neighbours."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_scipy(cls, m: sp.spmatrix) -> "SimilarityMatrix":
        m = sp.csr_matrix(m)
        m.setdiag(0)
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.indptr.astype(np.int64), m.indices.astype(np.int64),
                   m.data.astype(np.float64))

    def neighbors(self, node: int) -> list[tuple[int, float]]:
        nbrs, w = self.row(node)
        return list(zip(nbrs.tolist(), w.tolist()))

    def row(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= node < self.n:
            raise IndexError(f"node {node} out of range [0, {self.n})")
        lo, hi = self.indptr[node], self.indptr[node + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def weight(self, a: int, b: int) -> float:
        nbrs, w = self.row(a)
        k = np.searchsorted(nbrs, b)
        return float(w[k]) if k < nbrs.size and nbrs[k] == b else 0.0

    @property
    def n_edges(self) -> int:
        return int(self.indices.size // 2)

    @cached_property
    def dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.degree())
        out[rows, self.indices] = self.weights
        return out

    def to_dense(self) -> np.ndarray:
        return self.dense.copy()

    def isolated(self) -> np.ndarray:
        return np.flatnonzero(self.degree() == 0)

    def save_edges(self, path) -> None:
        """Write ``a<TAB>b<TAB>w`` once per edge with ``a < b``."""
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for a in range(self.n):
                nbrs, w = self.row(a)
                for b, wt in zip(nbrs.tolist(), w.tolist()):
                    if a < b:
                        fh.write(f"{a}\t{b}\t{wt:g}\n")


def _co_count(Y: InteractionMatrix, transpose: bool,
              measure: SimilarityMeasure) -> SimilarityMatrix:
    if measure is not SimilarityMeasure.CO_COUNT:
        raise NotImplementedError(f"similarity measure {measure.value!r} is not implemented")
    if Y.nnz == 0:
        raise DataError("empty interaction matrix")
    A = Y.to_scipy()
    if transpose:
        A = A.T.tocsr()
    return SimilarityMatrix.from_scipy(A @ A.T)


def build_user_similarity(Y: InteractionMatrix,
                          measure: SimilarityMeasure = SimilarityMeasure.CO_COUNT) -> SimilarityMatrix:
    """Weights are the number of items two users share (``Y Y^T`` off the diagonal)."""
    return _co_count(Y, False, measure)


def build_item_similarity(Y: InteractionMatrix,
                          measure: SimilarityMeasure = SimilarityMeasure.CO_COUNT) -> SimilarityMatrix:
    """Weights are the number of users two items share (``Y^T Y`` off the diagonal)."""
    return _co_count(Y, True, measure)


def neighbors(S: SimilarityMatrix, node: int) -> list[tuple[int, float]]:
    return S.neighbors(node)
