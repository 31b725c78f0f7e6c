"""Dense symmetric linear algebra used by the precomputation cache.

Matrices are plain C-ordered (row-major) float64 ``numpy`` arrays.
Factorizations go through LAPACK (``potrf``/``potrs``) so that the
failing pivot of a non-positive-definite input can be reported.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import DimensionError, FactorizationError

__all__ = [
    "SpdFactor",
    "symmetrize",
    "spd_factor",
    "spd_solve",
    "spd_inverse",
    "sym_outer",
    "weighted_sandwich",
]

_SYM_RTOL = 1e-10


@dataclass(frozen=True)
class SpdFactor:
    """Lower-triangular Cholesky factor ``L`` with ``A = L @ L.T``."""

    lower: np.ndarray

    @property
    def n(self):
        return self.lower.shape[0]

    def reconstruct(self):
        return self.lower @ self.lower.T


def symmetrize(A, out=None):
    """Return ``(A + A.T) / 2``; ``out=A`` symmetrizes in place."""
    if out is None:
        return 0.5 * (A + A.T)
    # A.T is a view, so go through a temporary when writing into A
    np.multiply(0.5, A + A.T, out=out)
    return out


def spd_factor(A):
    """Cholesky-factorize a symmetric positive-definite matrix.

    Raises
    ------
    DimensionError
        If ``A`` is not square or not symmetric to 1e-10 relative.
    FactorizationError
        If ``A`` is not positive definite after symmetrization; ``pivot``
        carries the 0-based index of the failing leading minor.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    if np.abs(A - A.T).max(initial=0.0) > _SYM_RTOL * scale:
        raise DimensionError("matrix is not symmetric")
    c, info = lapack.dpotrf(symmetrize(A), lower=1, clean=1)
    if info > 0:
        raise FactorizationError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return SpdFactor(np.ascontiguousarray(c))


def spd_solve(f, B):
    """Solve ``A X = B`` given the factor of ``A``; ``B`` may be a vector."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != f.n:
        raise DimensionError(f"factor is {f.n}x{f.n} but right-hand side has {B.shape[0]} rows")
    x, info = lapack.dpotrs(f.lower, B, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x


def spd_inverse(A):
    """Inverse of an SPD matrix via its Cholesky factor, symmetrized."""
    A = np.asarray(A, dtype=float)
    f = spd_factor(A)
    inv, info = lapack.dpotri(f.lower, lower=1)
    if info != 0:
        raise FactorizationError(info - 1)
    # dpotri fills only the lower triangle
    inv = np.tril(inv)
    inv += np.tril(inv, -1).T
    return inv


def sym_outer(Xs, scale=1.0):
    """``scale * Xs @ Xs.T`` with exact symmetry; ``k = 0`` gives zeros."""
    Xs = np.asarray(Xs, dtype=float)
    if Xs.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got shape {Xs.shape}")
    out = Xs @ Xs.T
    out *= scale
    return symmetrize(out, out=out)


def weighted_sandwich(Xs, left, right):
    """``Diag(left) @ Xs @ Diag(right)`` by broadcasting, no diagonal matrices."""
    Xs = np.asarray(Xs, dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if Xs.ndim != 2 or left.shape != (Xs.shape[0],) or right.shape != (Xs.shape[1],):
        raise DimensionError(
            f"diagonals of length {left.shape}, {right.shape} do not fit a {Xs.shape} matrix"
        )
    return left[:, None] * Xs * right[None, :]
