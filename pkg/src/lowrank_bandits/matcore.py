"""
Small dense matrix helpers: exact determinants, d-subsets and submatrices.

Indices are 0-based throughout the package. A d-subset of rows or columns is a
``DSubset``, a tuple kept in ascending order so that determinants of extracted
submatrices have a consistent sign from call to call.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, List, Optional

import numpy as np

# Largest determinant of a d x d matrix with entries in [0, 1], known exactly up to d = 4.
_DET_MAX_TABLE = {1: 1.0, 2: 1.0, 3: 2.0, 4: 3.0}


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DSubset(tuple):
    """Strictly increasing tuple of indices (a d-row or d-column).

    Equality, hashing and ordering are the plain tuple ones, so the
    lexicographic order used for tie-breaking is ``sorted()``.
    """

    def __new__(cls, indices: Iterable[int], bound: Optional[int] = None):
        idx = tuple(int(i) for i in indices)
        if not idx:
            raise DomainError("a d-subset needs at least one index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DomainError(f"indices must be strictly increasing, got {idx}")
        if idx[0] < 0 or (bound is not None and idx[-1] >= bound):
            raise DomainError(f"indices {idx} outside [0, {bound})")
        return super().__new__(cls, idx)

    @property
    def d(self) -> int:
        return len(self)

    def label(self) -> str:
        """Render as ``i1-i2-...-id`` (the trace CSV format)."""
        return "-".join(str(i) for i in self)

    @classmethod
    def from_label(cls, text: str) -> "DSubset":
        return cls(int(tok) for tok in text.split("-"))

    def __repr__(self) -> str:
        return f"DSubset({list(self)})"


def _det2(a):
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def _det3(a):
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def _det4(a):
    # cofactor expansion along the first row
    total = 0.0
    for j in range(4):
        minor = np.delete(np.delete(a, 0, axis=-2), j, axis=-1)
        total = total + (-1) ** j * a[..., 0, j] * _det3(minor)
    return total


def det_batch(mats: np.ndarray) -> np.ndarray:
    """Determinants of a stack of square matrices, shape ``(..., d, d)``.

    Closed-form cofactor formulas for d <= 4; LU with partial pivoting
    (LAPACK, via numpy) beyond that.
    """
    a = np.asarray(mats, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {a.shape}")
    d = a.shape[-1]
    if d == 1:
        return a[..., 0, 0].copy()
    if d == 2:
        return _det2(a)
    if d == 3:
        return _det3(a)
    if d == 4:
        return _det4(a)
    return np.linalg.det(a)


def det(m) -> float:
    """Exact determinant of a single square matrix."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return float(det_batch(a))


def det_max(d: int) -> float:
    """Largest |det| of a d x d matrix with entries in [0, 1].

    Exact for d <= 4. For d > 4 returns the Hadamard-type bound
    ``2**-d * (d + 1)**((d + 1) / 2)``, which overstates the true maximum and
    therefore loosens the confidence radius.
    """
    if d < 1:
        raise DomainError(f"rank must be >= 1, got {d}")
    if d in _DET_MAX_TABLE:
        return _DET_MAX_TABLE[d]
    return 2.0 ** (-d) * (d + 1) ** ((d + 1) / 2)


def enum_subsets(n: int, d: int) -> List[DSubset]:
    """All C(n, d) subsets of ``range(n)`` in lexicographic order."""
    if d < 1 or n < 1:
        raise DomainError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if d > n:
        raise DomainError(f"d={d} exceeds ground-set size n={n}")
    return [DSubset(c) for c in itertools.combinations(range(n), d)]


def n_subsets(n: int, d: int) -> int:
    return math.comb(n, d)


def submatrix(m, rows: Iterable[int], cols: Iterable[int]) -> np.ndarray:
    """``m(rows, cols)`` with rows and columns taken in ascending order."""
    a = np.asarray(m, dtype=float)
    r = sorted(int(i) for i in rows)
    c = sorted(int(j) for j in cols)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    if any(i < 0 or i >= a.shape[0] for i in r) or any(j < 0 or j >= a.shape[1] for j in c):
        raise DomainError(f"index out of range for shape {a.shape}: rows={r}, cols={c}")
    return a[np.ix_(r, c)]
