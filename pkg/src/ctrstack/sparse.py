"""Sparse vector and row-batch containers shared by the feature builders and the learner."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sorted ``(index, value)`` pairs over ``[0, dim)`` with no explicit zeros."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    @classmethod
    def from_entries(cls, indices, values, dim: int) -> "SparseVector":
        """Build from possibly repeated, unsorted entries; repeats are summed, zeros pruned."""
        idx = np.asarray(indices, dtype=np.int64).ravel()
        val = np.asarray(values, dtype=np.float64).ravel()
        if idx.size != val.size:
            raise ValueError("indices and values differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= dim):
            raise ValueError(f"index out of range for dimension {dim}")
        if idx.size:
            uniq, inv = np.unique(idx, return_inverse=True)
            if uniq.size == idx.size:
                summed = np.empty(uniq.size)
                summed[inv] = val
            else:
                # sequential summation keeps the result independent of numpy's pairwise sums
                summed = np.zeros(uniq.size)
                for k, v in zip(inv.tolist(), val.tolist()):
                    summed[k] += v
            keep = summed != 0.0
            idx, val = uniq[keep], summed[keep]
        return cls(idx, val, int(dim))

    @classmethod
    def empty(cls, dim: int) -> "SparseVector":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), int(dim))

    def __len__(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __add__(self, other: "SparseVector") -> "SparseVector":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        return SparseVector.from_entries(np.concatenate([self.indices, other.indices]),
                                         np.concatenate([self.values, other.values]), self.dim)

    def dot(self, other: "SparseVector") -> float:
        common, ia, ib = np.intersect1d(self.indices, other.indices, return_indices=True)
        return float(np.dot(self.values[ia], other.values[ib]))

    def to_dict(self) -> dict:
        return dict(zip(self.indices.tolist(), self.values.tolist()))

    def validate(self) -> None:
        idx, val = self.indices, self.values
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices/values must be 1-d arrays of equal length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range")
        if np.any(val == 0.0):
            raise ValueError("explicit zero entry")
        if not np.all(np.isfinite(val)):
            raise ValueError("non-finite value")


_EMPTY_DENSE = np.zeros((0, 0), dtype=np.float32)


@dataclass
class FeatureBatch:
    """Rows that reference shared sparse blocks and, optionally, a dense block.

    Row ``r`` has the sparse entries of block ``row_block[r]`` and, when
    ``row_dense[r] >= 0``, the nonzero entries of ``dense[row_dense[r]]``
    placed at ``dense_offset + j``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    row_block: np.ndarray
    dim: int
    dense: np.ndarray = field(default_factory=lambda: _EMPTY_DENSE)
    row_dense: np.ndarray | None = None
    dense_offset: int = 0

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.row_block = np.ascontiguousarray(self.row_block, dtype=np.int64)
        if self.row_dense is None:
            self.row_dense = np.full(self.row_block.shape[0], -1, dtype=np.int64)
        self.row_dense = np.ascontiguousarray(self.row_dense, dtype=np.int64)
        if self.dense.ndim != 2:
            raise ValueError("dense block must be 2-d")
        if self.row_dense.shape != self.row_block.shape:
            raise ValueError("row_dense and row_block differ in length")
        if self.dense.shape[1] and self.dense_offset + self.dense.shape[1] > self.dim:
            raise ValueError("dense block does not fit in the feature space")

    def __len__(self) -> int:
        return int(self.row_block.shape[0])

    @classmethod
    def from_vectors(cls, vectors, dim: int | None = None) -> "FeatureBatch":
        vectors = list(vectors)
        if dim is None:
            if not vectors:
                raise ValueError("dimension required for an empty batch")
            dim = vectors[0].dim
        for v in vectors:
            if v.dim != dim:
                raise ValueError(f"vector dimension {v.dim} does not match {dim}")
        lengths = [len(v) for v in vectors]
        indptr = np.concatenate([[0], np.cumsum(lengths, dtype=np.int64)])
        indices = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, np.int64)
        values = np.concatenate([v.values for v in vectors]) if vectors else np.zeros(0)
        return cls(indptr, indices, values, np.arange(len(vectors)), dim)

    def take(self, rows) -> "FeatureBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureBatch(self.indptr, self.indices, self.values, self.row_block[rows], self.dim,
                            self.dense, self.row_dense[rows], self.dense_offset)

    def row(self, r: int) -> SparseVector:
        b = self.row_block[r]
        idx = self.indices[self.indptr[b]:self.indptr[b + 1]]
        val = self.values[self.indptr[b]:self.indptr[b + 1]]
        d = self.row_dense[r]
        if d >= 0:
            dv = self.dense[d].astype(np.float64)
            nz = np.flatnonzero(dv)
            idx = np.concatenate([idx, self.dense_offset + nz])
            val = np.concatenate([val, dv[nz]])
        return SparseVector(idx, val, self.dim)
