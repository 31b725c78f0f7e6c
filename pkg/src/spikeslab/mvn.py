"""Exact draws of the regression coefficients given the indicators.

The conditional of ``beta`` is Gaussian with precision ``X^T X + D`` (up to
the noise scale).  Sampling works in the ``n``-dimensional data space:

    u  = D^{-1/2} r                       r  ~ N(0, I_p)
    v  = X u + xi                         xi ~ N(0, I_n)
    v* = M^{-1} (y / sigma - v)
    beta = sigma (u + D^{-1} X^T v*)

with ``M = I + X D^{-1} X^T``, so only an ``n x n`` solve is needed.  The
weighted form replaces ``X`` by ``W^{-1/2} X`` and ``y / sigma`` by
``W^{-1/2} y~``.  The dense routines at the bottom draw the same vector
from the same ``(r, xi)`` through the ``p x p`` precision, which is the
reference the fast path is checked against.
"""

from dataclasses import dataclass

import numpy as np

from .distributions import std_normal_vec
from .errors import DimensionError
from .linalg import spd_factor, spd_solve

__all__ = [
    "WorkBuffers",
    "sample_beta_linear",
    "sample_beta_weighted",
    "sample_beta_dense_linear",
    "sample_beta_dense_weighted",
]


@dataclass
class WorkBuffers:
    """Preallocated vectors reused across sweeps."""

    r: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    v_star: np.ndarray
    scale: np.ndarray

    @classmethod
    def allocate(cls, n, p):
        return cls(r=np.empty(p), xi=np.empty(n), u=np.empty(p), v=np.empty(n),
                   v_star=np.empty(n), scale=np.empty(n))


def _noise(rng, buf, r, xi):
    # r and xi may be pinned by the caller; otherwise p then n normals
    if r is None:
        r = std_normal_vec(rng, buf.r.size, out=buf.r)
    if xi is None:
        xi = std_normal_vec(rng, buf.xi.size, out=buf.xi)
    return np.asarray(r, dtype=float), np.asarray(xi, dtype=float)


def _apply(invM, rhs, out):
    if callable(invM):
        out[...] = invM(rhs)
        return out
    return np.dot(invM, rhs, out=out)


def _check(X, Dinv_diag, y, buf):
    n, p = X.shape
    if Dinv_diag.shape != (p,) or y.shape != (n,):
        raise DimensionError(
            f"X is {X.shape} but D^-1 has shape {Dinv_diag.shape} and y {y.shape}"
        )
    if buf.r.shape != (p,) or buf.xi.shape != (n,):
        raise DimensionError("work buffers do not match X")


def sample_beta_linear(X, Dinv_diag, y, sigma, invM, rng, buf, r=None, xi=None):
    """Draw ``beta ~ N(Sigma^{-1} X^T y, sigma^2 Sigma^{-1})``, ``Sigma = X^T X + D``.

    Parameters
    ----------
    X : (n, p) array
    Dinv_diag : (p,) array
        Diagonal of ``D^{-1}`` (the prior variances).
    y : (n,) array
    sigma : float
        Noise standard deviation.
    invM : (n, n) array or callable
        ``M^{-1}``, or a function returning ``M^{-1} rhs``.
    rng : RngStream
    buf : WorkBuffers
    r, xi : arrays, optional
        Pin the noise vectors instead of drawing them (no draws consumed).

    Returns
    -------
    beta : (p,) array, freshly allocated.
    """
    X = np.asarray(X, dtype=float)
    Dinv_diag = np.asarray(Dinv_diag, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(X, Dinv_diag, y, buf)
    r, xi = _noise(rng, buf, r, xi)
    u = buf.u
    np.sqrt(Dinv_diag, out=u)
    u *= r
    v = np.dot(X, u, out=buf.v)
    v += xi
    # v <- y / sigma - v
    v *= -1.0
    v += y / sigma
    v_star = _apply(invM, v, buf.v_star)
    beta = X.T @ v_star
    beta *= Dinv_diag
    beta += u
    beta *= sigma
    return beta


def sample_beta_weighted(X, Dinv_diag, Winv_diag, y_tilde, invM, rng, buf, r=None, xi=None):
    """Draw ``beta ~ N(Sigma^{-1} X^T W^{-1} y~, Sigma^{-1})``, ``Sigma = X^T W^{-1} X + D``.

    ``invM`` is the inverse of ``I + W^{-1/2} X D^{-1} X^T W^{-1/2}`` (or a
    callable applying it).  With ``W = I`` the draw coincides with
    :func:`sample_beta_linear` at ``sigma = 1``.
    """
    X = np.asarray(X, dtype=float)
    Dinv_diag = np.asarray(Dinv_diag, dtype=float)
    y_tilde = np.asarray(y_tilde, dtype=float)
    Winv_diag = np.asarray(Winv_diag, dtype=float)
    _check(X, Dinv_diag, y_tilde, buf)
    if Winv_diag.shape != y_tilde.shape:
        raise DimensionError(f"W^-1 has shape {Winv_diag.shape}, expected {y_tilde.shape}")
    r, xi = _noise(rng, buf, r, xi)
    s = np.sqrt(Winv_diag, out=buf.scale)
    u = buf.u
    np.sqrt(Dinv_diag, out=u)
    u *= r
    v = np.dot(X, u, out=buf.v)
    v *= s
    v += xi
    v *= -1.0
    v += s * y_tilde
    v_star = _apply(invM, v, buf.v_star)
    v_star *= s
    beta = X.T @ v_star
    beta *= Dinv_diag
    beta += u
    return beta


def sample_beta_dense_linear(X, gram, Dinv_diag, y, sigma, rng, buf, r=None, xi=None):
    """Same draw as :func:`sample_beta_linear` through a ``p x p`` Cholesky.

    ``beta = sigma Sigma^{-1} (D^{1/2} r + X^T (y / sigma - xi))`` with
    ``Sigma = gram + D``; ``gram`` is ``X^T X``.
    """
    X = np.asarray(X, dtype=float)
    Dinv_diag = np.asarray(Dinv_diag, dtype=float)
    y = np.asarray(y, dtype=float)
    _check(X, Dinv_diag, y, buf)
    r, xi = _noise(rng, buf, r, xi)
    Sigma = gram.copy()
    Sigma[np.diag_indices_from(Sigma)] += 1.0 / Dinv_diag
    rhs = r / np.sqrt(Dinv_diag) + X.T @ (y / sigma - xi)
    return sigma * spd_solve(spd_factor(Sigma), rhs)


def sample_beta_dense_weighted(X, Dinv_diag, Winv_diag, y_tilde, rng, buf, r=None, xi=None):
    """Same draw as :func:`sample_beta_weighted` through a ``p x p`` Cholesky."""
    X = np.asarray(X, dtype=float)
    Dinv_diag = np.asarray(Dinv_diag, dtype=float)
    Winv_diag = np.asarray(Winv_diag, dtype=float)
    y_tilde = np.asarray(y_tilde, dtype=float)
    _check(X, Dinv_diag, y_tilde, buf)
    r, xi = _noise(rng, buf, r, xi)
    s = np.sqrt(Winv_diag)
    Xs = X * s[:, None]
    Sigma = Xs.T @ Xs
    Sigma = 0.5 * (Sigma + Sigma.T)
    Sigma[np.diag_indices_from(Sigma)] += 1.0 / Dinv_diag
    rhs = r / np.sqrt(Dinv_diag) + Xs.T @ (s * y_tilde - xi)
    return spd_solve(spd_factor(Sigma), rhs)
