r"""Aitchison geometry on the simplex and log-ratio coordinates.

Compositions are handled as numpy arrays whose last axis holds the ``D``
parts, so every function works on a single composition of shape ``(D,)``
or on a stack of them (``(..., D)``).  All log-ratio quantities are
invariant to the closure constant, so computations close to 1 internally
and only rescale on output when a ``kappa`` is requested.

The ilr coordinates are ``ilr(x) = clr(x) @ V.T`` where ``V`` is a
``(D-1, D)`` contrast matrix with orthonormal, zero-sum rows.  Three
constructions are offered: the Helmert sub-matrix, balances built from a
sequential binary partition, and pivot coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import Any

import numpy as np

from .exceptions import (
    DimensionMismatch,
    DimensionTooSmall,
    InvalidPartition,
    NonFiniteInput,
    NonPositivePart,
    ValidationError,
)

CLOSURE_RTOL = 1e-10

__all__ = [
    "IlrBasis",
    "aitchison_dist",
    "aitchison_inner",
    "aitchison_norm",
    "build_basis",
    "check_composition",
    "closure",
    "clr",
    "clr_inv",
    "default_partition",
    "ilr",
    "ilr_inv",
    "neutral",
    "perturb",
    "perturb_inv",
    "power",
    "replace_zeros",
]


def _positive(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        raise DimensionTooSmall(f"{name} must have at least 2 parts, got a scalar")
    if x.shape[-1] < 2:
        raise DimensionTooSmall(f"{name} must have D >= 2 parts, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput(f"{name} contains non-finite values")
    if np.any(x <= 0):
        bad = np.argwhere(x <= 0)
        raise NonPositivePart(
            f"{name} has {len(bad)} non-positive part(s); first at index "
            f"{tuple(int(i) for i in bad[0])}"
        )
    return x


def _same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise DimensionMismatch(
            f"compositions have different numbers of parts: {x.shape[-1]} vs {y.shape[-1]}"
        )


def closure(v, kappa: float = 1.0) -> np.ndarray:
    """Rescale strictly positive vector(s) so the parts sum to ``kappa``.

    Parameters
    ----------
    v : array_like, shape (..., D)
        Strictly positive parts; rows of a 2-D input are closed independently.
    kappa : float
        Closure constant.

    Returns
    -------
    ndarray, shape (..., D)
    """
    if not kappa > 0:
        raise ValidationError(f"kappa must be positive, got {kappa}")
    v = _positive(v, "v")
    return kappa * v / v.sum(axis=-1, keepdims=True)


def check_composition(x, kappa: float = 1.0, rtol: float = CLOSURE_RTOL) -> np.ndarray:
    """Validate that ``x`` already is a composition closed to ``kappa``."""
    x = _positive(x)
    s = x.sum(axis=-1)
    if np.any(np.abs(s - kappa) > rtol * kappa):
        worst = float(np.max(np.abs(s - kappa)))
        raise ValidationError(
            f"parts do not sum to kappa={kappa} (max deviation {worst:.3e}, "
            f"relative tolerance {rtol:g})"
        )
    return x


def neutral(D: int, kappa: float = 1.0) -> np.ndarray:
    """The neutral element of perturbation: all parts equal."""
    if D < 2:
        raise DimensionTooSmall(f"D must be >= 2, got {D}")
    return np.full(D, kappa / D)


def perturb(x, y) -> np.ndarray:
    """Perturbation ``x (+) y``: closure of the elementwise product."""
    x, y = _positive(x), _positive(y, "y")
    _same_dim(x, y)
    # products of closed vectors stay representable even for tiny parts
    return closure(closure(x) * closure(y))


def power(xi: float, x) -> np.ndarray:
    """Powering ``xi (.) x``: closure of the elementwise ``xi``-th powers."""
    x = _positive(x)
    lx = np.log(x)
    lx = xi * (lx - lx.max(axis=-1, keepdims=True))
    return closure(np.exp(lx))


def perturb_inv(x, y) -> np.ndarray:
    """Inverse perturbation ``x (-) y``."""
    return perturb(x, power(-1.0, y))


def aitchison_inner(x, y) -> np.ndarray | float:
    """Aitchison inner product from the pairwise log-ratio double sum.

    ``<x, y>_A = 1/(2D) sum_l sum_k log(x_l/x_k) log(y_l/y_k)``.  This is
    evaluated literally over all ratio pairs (not through clr) so that it
    can serve as an independent check of the ilr isometry.
    """
    x, y = _positive(x), _positive(y, "y")
    _same_dim(x, y)
    D = x.shape[-1]
    lx, ly = np.log(x), np.log(y)
    rx = lx[..., :, None] - lx[..., None, :]
    ry = ly[..., :, None] - ly[..., None, :]
    out = (rx * ry).sum(axis=(-2, -1)) / (2 * D)
    return float(out) if np.ndim(out) == 0 else out


def aitchison_norm(x) -> np.ndarray | float:
    """One-argument Aitchison norm ``sqrt(<x, x>_A)``."""
    return np.sqrt(aitchison_inner(x, x))


def aitchison_dist(x, y) -> np.ndarray | float:
    """Aitchison distance, the norm of ``x (-) y``."""
    return aitchison_norm(perturb_inv(x, y))


def clr(x) -> np.ndarray:
    """Centred log-ratio: log parts minus their mean (sums to zero)."""
    lx = np.log(_positive(x))
    return lx - lx.mean(axis=-1, keepdims=True)


def clr_inv(z, kappa: float = 1.0) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("clr coordinates contain non-finite values")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return closure(e, kappa)


# ---------------------------------------------------------------------------
# ilr bases


@dataclass(frozen=True, eq=False)
class IlrBasis:
    """Orthonormal ilr coordinate system.

    Attributes
    ----------
    contrast : ndarray, shape (D-1, D)
        Rows are clr images of the basis compositions; orthonormal and
        zero-sum.
    mode : str
        ``"helmert"``, ``"balance"`` or ``"pivot"``.
    partition : nested tuple or None
        Binary partition tree used for balances.
    """

    contrast: np.ndarray
    mode: str
    partition: Any = field(default=None)

    @property
    def D(self) -> int:
        return self.contrast.shape[1]

    @property
    def p(self) -> int:
        return self.contrast.shape[0]

    def compositions(self) -> np.ndarray:
        """Basis elements on the simplex, one per row."""
        return clr_inv(self.contrast)


def _helmert(D: int) -> np.ndarray:
    V = np.zeros((D - 1, D))
    for k in range(1, D):
        V[k - 1, :k] = 1.0
        V[k - 1, k] = -k
        V[k - 1] /= np.sqrt(k * (k + 1))
    return V


def _pivot(D: int) -> np.ndarray:
    V = np.zeros((D - 1, D))
    for i in range(D - 1):
        rest = D - i - 1
        scale = np.sqrt(rest / (rest + 1))
        V[i, i] = scale
        V[i, i + 1 :] = -scale / rest
    return V


def default_partition(D: int):
    """Balanced sequential binary partition of parts ``0..D-1``.

    Each node splits its parts into two contiguous groups whose sizes
    differ by at most one (the larger group first).

    >>> default_partition(4)
    ((0, 1), (2, 3))
    """

    def split(parts):
        if len(parts) == 1:
            return parts[0]
        k = ceil(len(parts) / 2)
        return (split(parts[:k]), split(parts[k:]))

    if D < 2:
        raise DimensionTooSmall(f"D must be >= 2, got {D}")
    return split(list(range(D)))


def _leaves(node) -> list[int]:
    if isinstance(node, (int, np.integer)):
        return [int(node)]
    if not isinstance(node, (tuple, list)) or len(node) != 2:
        raise InvalidPartition(
            f"partition nodes must be pairs (left, right) or integer leaves, got {node!r}"
        )
    return _leaves(node[0]) + _leaves(node[1])


def _balance(D: int, partition) -> np.ndarray:
    leaves = _leaves(partition)
    if sorted(leaves) != list(range(D)):
        raise InvalidPartition(
            f"partition leaves {sorted(leaves)} are not exactly the parts 0..{D - 1}"
        )
    rows = []

    def visit(node):
        if isinstance(node, (int, np.integer)):
            return
        left, right = _leaves(node[0]), _leaves(node[1])
        r, s = len(left), len(right)
        row = np.zeros(D)
        row[left] = np.sqrt(s / (r * (r + s)))
        row[right] = -np.sqrt(r / (s * (r + s)))
        rows.append(row)
        visit(node[0])
        visit(node[1])

    visit(partition)
    return np.vstack(rows)


def build_basis(D: int, mode: str = "helmert", partition=None) -> IlrBasis:
    """Construct an ilr contrast matrix.

    Parameters
    ----------
    D : int
        Number of parts (>= 2).
    mode : {"helmert", "balance", "pivot"}
    partition : nested pairs of int, optional
        Sequential binary partition for ``mode="balance"``, e.g.
        ``((0, 1), 2)``.  Defaults to :func:`default_partition`.
    """
    if D < 2:
        raise DimensionTooSmall(f"D must be >= 2, got {D}")
    if mode != "balance" and partition is not None:
        raise InvalidPartition(f"a partition is only meaningful for balance mode, not {mode!r}")
    if mode == "helmert":
        V = _helmert(D)
    elif mode == "pivot":
        V = _pivot(D)
    elif mode == "balance":
        if partition is None:
            partition = default_partition(D)
        V = _balance(D, partition)
    else:
        raise ValidationError(f"unknown basis mode {mode!r}")
    V.setflags(write=False)
    return IlrBasis(V, mode, partition)


def _basis_for(D: int, basis: IlrBasis | None) -> IlrBasis:
    if basis is None:
        return build_basis(D)
    if basis.D != D:
        raise DimensionMismatch(f"basis is for D={basis.D} parts, data has D={D}")
    return basis


def ilr(x, basis: IlrBasis | None = None) -> np.ndarray:
    """Isometric log-ratio coordinates, ``clr(x) @ V.T`` (Helmert by default)."""
    z = clr(x)
    V = _basis_for(z.shape[-1], basis).contrast
    return z @ V.T


def ilr_inv(y, basis: IlrBasis | None = None, kappa: float = 1.0) -> np.ndarray:
    """Map ilr coordinates back to the simplex.

    The clr vector ``y @ V`` is shifted by its maximum before exponentiation,
    so large coordinates neither overflow nor underflow every part at once.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        raise DimensionMismatch("ilr coordinates must be at least 1-D")
    if not np.all(np.isfinite(y)):
        raise NonFiniteInput("ilr coordinates contain non-finite values")
    if basis is None:
        basis = build_basis(y.shape[-1] + 1)
    if basis.p != y.shape[-1]:
        raise DimensionMismatch(
            f"basis has {basis.p} coordinates, input has {y.shape[-1]}"
        )
    return clr_inv(y @ basis.contrast, kappa)


def replace_zeros(x, delta: float = 1e-6, kappa: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicative zero replacement.

    Zero parts (of the closed composition) are set to ``delta * kappa`` and
    the result is re-closed.  Negative or non-finite parts are still errors.

    Returns
    -------
    comp : ndarray
        Closed compositions with strictly positive parts.
    replaced : ndarray of bool
        Mask of the parts that were replaced.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("composition contains non-finite values")
    if np.any(x < 0):
        raise NonPositivePart("composition contains negative parts")
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    mask = x == 0
    total = x.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise NonPositivePart("composition with all parts zero")
    shares = x / total
    shares = np.where(mask, delta, shares)
    return closure(shares, kappa), mask
