"""Spatial weight matrices.

Weights are stored as canonical CSR matrices (sorted indices, no explicit
zeros) so iteration order is row-major and reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .exceptions import (
    IndexOutOfRange,
    NonPositiveRadius,
    SelfLoop,
    SideTooSmall,
    ValidationError,
)

__all__ = [
    "SpatialWeights",
    "as_matrix",
    "distance_cutoff",
    "from_adjacency",
    "rook_grid",
    "row_standardize",
    "sparsity",
]


def _canonical(m) -> sp.csr_array:
    m = sp.csr_array(m, dtype=float)
    m.eliminate_zeros()
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """An ``n x n`` nonnegative weight matrix with zero diagonal.

    Attributes
    ----------
    matrix : scipy.sparse.csr_array
    standardized : bool
        Whether nonempty rows have been scaled to sum to one.
    islands : tuple of int
        Units without any neighbour (all-zero rows).
    """

    matrix: sp.csr_array
    standardized: bool = False
    islands: tuple = field(default=())

    def __post_init__(self):
        m = _canonical(self.matrix)
        if m.shape[0] != m.shape[1]:
            raise ValidationError(f"weight matrix must be square, got {m.shape}")
        if m.nnz and not np.all(np.isfinite(m.data)):
            raise ValidationError("weight matrix has non-finite entries")
        if m.nnz and m.data.min() < 0:
            raise ValidationError("weight matrix has negative entries")
        if np.any(m.diagonal() != 0):
            raise SelfLoop("weight matrix has a nonzero diagonal")
        object.__setattr__(self, "matrix", m)
        row_nnz = np.diff(m.indptr)
        object.__setattr__(self, "islands", tuple(int(i) for i in np.flatnonzero(row_nnz == 0)))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @cached_property
    def eigenvalues(self) -> np.ndarray | None:
        """Eigenvalues of ``W`` (complex dtype), or None if LAPACK fails."""
        try:
            ev = np.linalg.eigvals(self.dense())
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(ev)):
            return None
        return ev.astype(complex)

    @cached_property
    def spectral_radius(self) -> float:
        ev = self.eigenvalues
        if ev is None:
            # any induced norm bounds the spectral radius
            return min(self.norm_inf, self.norm_1)
        return float(np.max(np.abs(ev))) if ev.size else 0.0

    @property
    def norm_inf(self) -> float:
        """Maximum absolute row sum."""
        return float(np.max(abs(self.matrix).sum(axis=1), initial=0.0))

    @property
    def norm_1(self) -> float:
        """Maximum absolute column sum."""
        return float(np.max(abs(self.matrix).sum(axis=0), initial=0.0))

    def is_symmetric(self, atol: float = 0.0) -> bool:
        diff = self.matrix - self.matrix.T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= atol

    def edges(self) -> list[tuple[int, int, float]]:
        """Directed edges ``(i, j, w_ij)`` in row-major order."""
        coo = self.matrix.tocoo()
        return [(int(i), int(j), float(w)) for i, j, w in zip(coo.row, coo.col, coo.data)]

    def __matmul__(self, other):
        return self.matrix @ other


def as_matrix(W) -> sp.csr_array | np.ndarray:
    """Return the raw matrix behind ``W`` (SpatialWeights, sparse or dense)."""
    if isinstance(W, SpatialWeights):
        return W.matrix
    if sp.issparse(W):
        return sp.csr_array(W)
    return np.asarray(W, dtype=float)


def rook_grid(side: int) -> SpatialWeights:
    """Binary rook contiguity on a ``side x side`` grid.

    Cells are numbered row-major: cell ``(r, c)`` has index ``r * side + c``.
    """
    if side < 2:
        raise SideTooSmall(f"grid side must be >= 2, got {side}")
    n = side * side
    idx = np.arange(n).reshape(side, side)
    right = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    down = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    pairs = np.vstack([right, down])
    return from_adjacency(pairs, n)


def from_adjacency(pairs: Iterable, n: int | None = None) -> SpatialWeights:
    """Symmetric binary weights from a list of neighbour pairs.

    Parameters
    ----------
    pairs : iterable of (i, j)
        0-based unit indices; each pair is entered in both directions and
        duplicates collapse to a single 1.
    n : int, optional
        Number of units.  Defaults to ``max index + 1``.
    """
    pairs = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if pairs.size == 0:
        pairs = pairs.reshape(0, 2)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValidationError(f"pairs must be (i, j) tuples, got shape {pairs.shape}")
    if n is None:
        n = int(pairs.max()) + 1 if len(pairs) else 0
    if len(pairs):
        if pairs.min() < 0 or pairs.max() >= n:
            bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
            raise IndexOutOfRange(f"pair ({bad[0]}, {bad[1]}) out of range for n={n}")
        selfs = pairs[pairs[:, 0] == pairs[:, 1]]
        if len(selfs):
            raise SelfLoop(f"self-pair ({selfs[0][0]}, {selfs[0][1]}) not allowed")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    m = sp.coo_array((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    m.data[:] = 1.0  # collapse duplicates
    return SpatialWeights(m)


def distance_cutoff(coords, radius: float) -> SpatialWeights:
    """Binary weights linking units whose planar distance is in ``(0, radius]``.

    Coincident points (distance 0) are not linked.  Units left without
    neighbours trigger a warning listing them.
    """
    if not radius > 0:
        raise NonPositiveRadius(f"radius must be positive, got {radius}")
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValidationError(f"coords must have shape (n, 2), got {coords.shape}")
    n = len(coords)
    tree = cKDTree(coords)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs):
        d = np.linalg.norm(coords[pairs[:, 0]] - coords[pairs[:, 1]], axis=1)
        pairs = pairs[d > 0]
    w = from_adjacency(pairs, n)
    if w.islands:
        warnings.warn(f"units without neighbours within radius {radius}: {list(w.islands)}")
    return w


def row_standardize(w: SpatialWeights) -> SpatialWeights:
    """Scale every nonempty row to sum to one; islands stay zero rows."""
    m = w.matrix.copy()
    sums = np.asarray(m.sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    m = _canonical(sp.diags_array(scale) @ m)
    return SpatialWeights(m, standardized=True)


def sparsity(w) -> float:
    """Fraction of structurally zero entries among all ``n**2``."""
    m = as_matrix(w)
    n = m.shape[0]
    if n == 0:
        return 1.0
    nnz = m.count_nonzero() if sp.issparse(m) else int(np.count_nonzero(m))
    return 1.0 - nnz / (n * n)
