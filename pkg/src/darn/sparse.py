"""Row-compressed sparse feature matrix (per-row ``index:value`` pairs)."""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class SparseRows:
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    n_cols: int

    def __post_init__(self):
        if self.indptr.ndim != 1 or self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise InvalidInputError("inconsistent indptr")
        if self.indices.size != self.values.size:
            raise InvalidInputError("indices and values differ in length")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n_cols):
            raise InvalidInputError("column index out of range")

    @classmethod
    def from_rows(cls, rows, n_cols):
        """``rows`` is a list of (indices, values) pairs."""
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        for i, (idx, _) in enumerate(rows):
            indptr[i + 1] = indptr[i] + len(idx)
        indices = np.array([j for idx, _ in rows for j in idx], dtype=np.int64)
        values = np.array([v for _, val in rows for v in val], dtype=np.float64)
        return cls(indptr, indices, values, int(n_cols))

    @classmethod
    def from_dense(cls, X):
        X = np.asarray(X, dtype=np.float64)
        rows = [(np.flatnonzero(r), r[r != 0]) for r in X]
        return cls.from_rows(rows, X.shape[1])

    @property
    def shape(self):
        return (self.indptr.size - 1, self.n_cols)

    def __len__(self):
        return self.indptr.size - 1

    def row(self, i):
        a, b = self.indptr[i], self.indptr[i + 1]
        return self.indices[a:b], self.values[a:b]

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        lens = self.indptr[rows + 1] - self.indptr[rows]
        indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        if rows.size:
            pos = np.concatenate([np.arange(self.indptr[r], self.indptr[r + 1]) for r in rows])
        else:
            pos = np.zeros(0, dtype=np.int64)
        return SparseRows(indptr, self.indices[pos], self.values[pos], self.n_cols)

    def with_values(self, values):
        return SparseRows(self.indptr, self.indices, values, self.n_cols)

    def toarray(self):
        out = np.zeros(self.shape)
        rows = np.repeat(np.arange(len(self)), np.diff(self.indptr))
        np.add.at(out, (rows, self.indices), self.values)
        return out
