"""Incremental maintenance of ``M_t = I + X D_t^{-1} X^T`` and its inverse.

With ``D_t^{-1} = diag(tau1^2 z_t + tau0^2 (1 - z_t))`` there are three
ways to reach ``M_t``:

* slab-set:  ``Mt0 + (tau1^2 - tau0^2) X_A X_A^T`` over the slab columns,
* spike-set: ``Mt1 + (tau0^2 - tau1^2) X_Ac X_Ac^T`` over the spike columns,
* delta-set: ``M_{t-1} + X_Delta C X_Delta^T`` over the columns that
  switched since the previous sweep,

where ``Mt0 = I + tau0^2 X X^T`` and ``Mt1 = I + tau1^2 X X^T`` are fixed.
Each costs ``n^2`` times the number of columns it touches, and the same
three decompositions feed the Woodbury identity for ``M_t^{-1}``.  The
cheapest one is chosen every sweep, so the per-sweep cost is
``O(n^2 p_t)`` with ``p_t = min(|A|, p - |A|, |Delta|)``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve

from .errors import ConfigError, DimensionError, StateError
from .linalg import spd_factor, spd_inverse, spd_solve, sym_outer, symmetrize

log = logging.getLogger(__name__)

__all__ = [
    "SLAB",
    "SPIKE",
    "DELTA",
    "SwapStats",
    "PrecomputeCache",
    "swap_stats",
    "select_branch",
    "init_cache",
    "dense_M",
    "update_M",
    "update_M_inv",
    "woodbury_inverse",
    "update_M_logistic",
    "splus_solve",
    "SplusSolver",
    "refresh",
    "commit",
    "audit_residual",
    "inverse_backward_error",
]

SLAB = "slab-set"
SPIKE = "spike-set"
DELTA = "delta-set"

# Woodbury result rejected (direct inversion instead) above this backward error
WOODBURY_TOL = 1e-10
# rolling M rebuilt from scratch when its probe drift exceeds this
DRIFT_TOL = 1e-4


@dataclass(frozen=True)
class SwapStats:
    """Swap counts between consecutive indicator vectors.

    ``rho`` is the empirical correlation of ``z_t`` and ``z_{t-1}`` over a
    uniformly drawn coordinate; it is reported as 0 when either vector is
    constant (``tau == 0``), where the correlation is undefined.
    """

    delta: int
    norm_z: int
    norm_z_prev: int
    p_t: int
    rho: float
    tau: float
    tau_prev: float
    branch: str
    p: int = 0


def swap_stats(z_t, z_prev):
    """Compute every field of :class:`SwapStats` except the branch choice."""
    z_t = np.asarray(z_t, dtype=bool)
    z_prev = np.asarray(z_prev, dtype=bool)
    if z_t.shape != z_prev.shape:
        raise DimensionError(f"indicator lengths differ: {z_t.shape} vs {z_prev.shape}")
    p = z_t.size
    k = int(np.count_nonzero(z_t))
    k_prev = int(np.count_nonzero(z_prev))
    both = int(np.count_nonzero(z_t & z_prev))
    delta = k + k_prev - 2 * both
    tau = float(np.sqrt(k * (p - k)))
    tau_prev = float(np.sqrt(k_prev * (p - k_prev)))
    # p^2 Cov_J(z_t, z_{t-1}) as an exact integer
    cov_scaled = p * both - k * k_prev
    if tau == 0.0 or tau_prev == 0.0:
        rho = 0.0
    else:
        rho = cov_scaled / (tau * tau_prev)
    p_t = min(k, p - k, delta)
    return dict(delta=delta, norm_z=k, norm_z_prev=k_prev, p_t=p_t, rho=rho,
                tau=tau, tau_prev=tau_prev, p=p)


def select_branch(z_t, z_prev):
    """Pick the cheapest of the three expressions for ``M_t``.

    Ties go to delta-set, then slab-set, then spike-set.
    """
    s = swap_stats(z_t, z_prev)
    costs = ((s["delta"], DELTA), (s["norm_z"], SLAB), (s["p"] - s["norm_z"], SPIKE))
    branch = min(costs, key=lambda c: c[0])[1]
    return SwapStats(branch=branch, **s)


@dataclass
class PrecomputeCache:
    """Fixed matrices plus the rolling ``(M_{t-1}, M_{t-1}^{-1}, z_{t-1})``.

    For the logistic sampler ``M`` is the weighted matrix
    ``I + W^{-1/2} X D^{-1} X^T W^{-1/2}`` and ``W_prev`` holds the weights
    it was built with.  ``gram`` and the ``sandwich`` matrices are only
    present when the cache was built with ``splus=True``.
    """

    X: np.ndarray
    tau0sq: float
    tau1sq: float
    Mtilde_tau0: np.ndarray
    Mtilde_tau1: np.ndarray
    inv_Mtilde_tau0: np.ndarray
    inv_Mtilde_tau1: np.ndarray
    M_prev: np.ndarray
    invM_prev: np.ndarray
    z_prev: np.ndarray
    W_prev: np.ndarray | None = None
    gram: np.ndarray | None = None
    sandwich0: np.ndarray | None = None
    sandwich1: np.ndarray | None = None
    refresh_period: int = 1000
    # instrumentation
    columns_accessed: int = 0
    last_columns: int = 0
    fallbacks: int = 0
    refreshes: int = 0
    iterations: int = 0
    _probe: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def gap(self):
        return self.tau1sq - self.tau0sq

    @property
    def splus(self):
        return self.sandwich0 is not None

    def dinv(self, z):
        """Diagonal of ``D^{-1}`` for indicator vector ``z``."""
        return np.where(np.asarray(z, dtype=bool), self.tau1sq, self.tau0sq)

    def columns(self, mask):
        """Gather the columns of ``X`` selected by ``mask``, counting them."""
        idx = np.flatnonzero(mask)
        self.last_columns += idx.size
        self.columns_accessed += idx.size
        return self.X[:, idx], idx


def _check_taus(tau0sq, tau1sq):
    if not (np.isfinite(tau0sq) and np.isfinite(tau1sq)) or tau0sq <= 0:
        raise ConfigError(f"tau0sq must be positive and finite, got {tau0sq}")
    if not tau1sq > tau0sq:
        raise ConfigError(f"tau1sq ({tau1sq}) must exceed tau0sq ({tau0sq})")


def init_cache(X, tau0sq, tau1sq, splus=False, z0=None, W0=None, refresh_period=1000):
    """Build the fixed matrices and seed the rolling state.

    ``z0`` defaults to all-spike, in which case the rolling matrices start
    as ``Mt0`` and its inverse.  ``W0`` (logistic weights) makes the
    rolling matrix the weighted one.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-d, got shape {X.shape}")
    _check_taus(tau0sq, tau1sq)
    n, p = X.shape
    XXt = sym_outer(X)
    eye = np.eye(n)
    Mt0 = eye + tau0sq * XXt
    Mt1 = eye + tau1sq * XXt
    inv0 = spd_inverse(Mt0)
    inv1 = spd_inverse(Mt1)
    z0 = np.zeros(p, dtype=bool) if z0 is None else np.asarray(z0, dtype=bool).copy()
    if z0.shape != (p,):
        raise DimensionError(f"z0 must have length {p}")
    cache = PrecomputeCache(
        X=X, tau0sq=float(tau0sq), tau1sq=float(tau1sq),
        Mtilde_tau0=Mt0, Mtilde_tau1=Mt1, inv_Mtilde_tau0=inv0, inv_Mtilde_tau1=inv1,
        M_prev=Mt0, invM_prev=inv0, z_prev=z0, refresh_period=int(refresh_period),
    )
    if splus:
        cache.gram = symmetrize(X.T @ X)
        cache.sandwich0 = symmetrize(X.T @ (inv0 @ X))
        cache.sandwich1 = symmetrize(X.T @ (inv1 @ X))
    probe = np.linspace(1.0, 2.0, n)
    cache._probe = probe / np.linalg.norm(probe) if n else probe
    if z0.any() or W0 is not None:
        refresh(cache, z0, W0)
        cache.refreshes = 0
    return cache


def dense_M(X, dinv, W=None):
    """``I + X diag(dinv) X^T`` (optionally ``W^{-1/2}``-scaled) from scratch."""
    X = np.asarray(X, dtype=float)
    M = (X * dinv) @ X.T
    if W is not None:
        s = 1.0 / np.sqrt(np.asarray(W, dtype=float))
        M *= s[:, None]
        M *= s[None, :]
    M[np.diag_indices_from(M)] += 1.0
    return symmetrize(M, out=M)


def _delta_diag(cache, z_t, idx):
    # C_Delta entries: +gap where a column entered the slab, -gap where it left
    return np.where(np.asarray(z_t, dtype=bool)[idx], cache.gap, -cache.gap)


def _unweighted_core(cache, z_t, stats, W_prev=None):
    """``X D_t^{-1} X^T`` via the selected branch (rolling state unweighted by ``W_prev``)."""
    z_t = np.asarray(z_t, dtype=bool)
    if stats.branch == DELTA:
        if W_prev is None:
            base = cache.M_prev - np.eye(cache.n)
        else:
            h = np.sqrt(W_prev)
            base = (cache.M_prev - np.eye(cache.n)) * h[:, None] * h[None, :]
        if stats.delta == 0:
            return base
        Xd, idx = cache.columns(z_t != cache.z_prev)
        c = _delta_diag(cache, z_t, idx)
        return base + (Xd * c) @ Xd.T
    if stats.branch == SLAB:
        XA, _ = cache.columns(z_t)
        return cache.Mtilde_tau0 - np.eye(cache.n) + sym_outer(XA, cache.gap)
    XAc, _ = cache.columns(~z_t)
    return cache.Mtilde_tau1 - np.eye(cache.n) + sym_outer(XAc, -cache.gap)


def update_M(cache, z_t, stats):
    """``M_t`` for the linear/probit sampler via the branch in ``stats``.

    Does not modify the cache's rolling state; see :func:`commit`.
    """
    if cache.W_prev is not None:
        raise StateError("cache holds a weighted M_t; use update_M_logistic")
    z_t = np.asarray(z_t, dtype=bool)
    cache.last_columns = 0
    if stats.branch == DELTA:
        if stats.delta == 0:
            return cache.M_prev
        Xd, idx = cache.columns(z_t != cache.z_prev)
        c = _delta_diag(cache, z_t, idx)
        M = cache.M_prev + (Xd * c) @ Xd.T
        return symmetrize(M, out=M)
    if stats.branch == SLAB:
        if stats.norm_z == 0:
            return cache.Mtilde_tau0
        XA, _ = cache.columns(z_t)
        M = cache.Mtilde_tau0 + sym_outer(XA, cache.gap)
        return symmetrize(M, out=M)
    if stats.norm_z == stats.p:
        return cache.Mtilde_tau1
    XAc, _ = cache.columns(~z_t)
    M = cache.Mtilde_tau1 + sym_outer(XAc, -cache.gap)
    return symmetrize(M, out=M)


def _woodbury(base_inv, U, core_diag_inv, definite):
    """``base_inv - B (diag(core_diag_inv) + U^T B)^{-1} B^T`` with ``B = base_inv U``.

    ``definite`` is +1 / -1 for a positive / negative definite core and 0
    for an indefinite one.
    """
    B = base_inv @ U
    core = U.T @ B
    core[np.diag_indices_from(core)] += core_diag_inv
    core = symmetrize(core, out=core)
    if definite > 0:
        K = cho_solve(cho_factor(core, lower=True), B.T)
    elif definite < 0:
        K = -cho_solve(cho_factor(-core, lower=True), B.T)
    else:
        K = solve(core, B.T, assume_a="sym")
    out = base_inv - B @ K
    return symmetrize(out, out=out)


def inverse_backward_error(M, Minv, probe):
    """Normwise backward error of ``Minv @ probe`` as a solve of ``M x = probe``."""
    x = Minv @ probe
    r = M @ x - probe
    denom = np.abs(M).max(initial=0.0) * M.shape[0] * np.linalg.norm(x) + np.linalg.norm(probe)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(r) / denom)


def _direct_inverse(M):
    return spd_inverse(M)


def woodbury_inverse(cache, z_t, branch):
    """``M_t^{-1}`` through the Woodbury form of ``branch``, whatever its cost.

    Raises ``LinAlgError`` if the core cannot be factorized.
    """
    z_t = np.asarray(z_t, dtype=bool)
    if branch == DELTA:
        mask = z_t != cache.z_prev
        if not mask.any():
            return cache.invM_prev
        Xd, idx = cache.columns(mask)
        return _woodbury(cache.invM_prev, Xd, 1.0 / _delta_diag(cache, z_t, idx), 0)
    if branch == SLAB:
        if not z_t.any():
            return cache.inv_Mtilde_tau0
        XA, _ = cache.columns(z_t)
        return _woodbury(cache.inv_Mtilde_tau0, XA, 1.0 / cache.gap, +1)
    if z_t.all():
        return cache.inv_Mtilde_tau1
    XAc, _ = cache.columns(~z_t)
    return _woodbury(cache.inv_Mtilde_tau1, XAc, -1.0 / cache.gap, -1)


def update_M_inv(cache, M_t, z_t, stats):
    """``M_t^{-1}`` by direct inversion when ``p_t >= n``, else by Woodbury.

    A Woodbury result whose backward error on a fixed probe vector
    exceeds ``WOODBURY_TOL`` (or whose core cannot be factorized) is
    discarded in favour of direct inversion, and the event is logged.
    """
    if stats.p_t >= cache.n:
        return _direct_inverse(M_t)
    try:
        inv = woodbury_inverse(cache, z_t, stats.branch)
    except (LinAlgError, ValueError) as exc:
        log.info("Woodbury core not invertible (%s); inverting M_t directly", exc)
        cache.fallbacks += 1
        return _direct_inverse(M_t)
    if inv is cache.invM_prev or inv is cache.inv_Mtilde_tau0 or inv is cache.inv_Mtilde_tau1:
        return inv
    err = inverse_backward_error(M_t, inv, cache._probe)
    if not np.isfinite(err) or err > WOODBURY_TOL:
        log.info("Woodbury backward error %.3g on %s branch; inverting M_t directly",
                 err, stats.branch)
        cache.fallbacks += 1
        return _direct_inverse(M_t)
    return inv


def _check_weights(W, name="W"):
    W = np.asarray(W, dtype=float)
    if not np.all(np.isfinite(W)) or np.any(W <= 0):
        raise StateError(f"{name} entries must be positive and finite")
    return W


def update_M_logistic(cache, z_t, W_t, W_prev, stats):
    """Weighted ``M_t = I + W_t^{-1/2} X D_t^{-1} X^T W_t^{-1/2}``.

    The delta-set branch first undoes the previous weights,
    ``W_{t-1}^{1/2} (M_{t-1} - I) W_{t-1}^{1/2}``, then adds the swap
    correction.  The inverse is left to the caller (direct inversion).
    """
    W_t = _check_weights(W_t, "W_t")
    W_prev = _check_weights(W_prev, "W_prev")
    cache.last_columns = 0
    core = _unweighted_core(cache, z_t, stats, W_prev=W_prev)
    s = 1.0 / np.sqrt(W_t)
    M = core * s[:, None] * s[None, :]
    M[np.diag_indices_from(M)] += 1.0
    return symmetrize(M, out=M)


class SplusSolver:
    """Callable computing ``M_t^{-1} rhs`` from precomputed sandwich blocks.

    When ``min(|A|, p - |A|) < n`` the Woodbury expression with the smaller
    core is applied right to left and ``M_t^{-1}`` is never formed;
    otherwise ``M_t`` is assembled and Cholesky-factorized once.
    """

    def __init__(self, cache, z_t):
        if not cache.splus:
            raise ConfigError("cache was built without splus=True")
        z_t = np.asarray(z_t, dtype=bool)
        self.cache = cache
        n, p = cache.n, cache.p
        k = int(np.count_nonzero(z_t))
        self.mode = None
        cache.last_columns = 0
        if min(k, p - k) >= n:
            if k <= p - k:
                XA, _ = cache.columns(z_t)
                M = cache.Mtilde_tau0 + sym_outer(XA, cache.gap)
            else:
                XAc, _ = cache.columns(~z_t)
                M = cache.Mtilde_tau1 + sym_outer(XAc, -cache.gap)
            self.mode = "direct"
            self.factor = spd_factor(symmetrize(M))
            return
        if k <= p - k:
            self.mode = SLAB
            mask, base_inv, sandwich, c, sign = z_t, cache.inv_Mtilde_tau0, cache.sandwich0, cache.gap, 1
        else:
            self.mode = SPIKE
            mask, base_inv, sandwich, c, sign = ~z_t, cache.inv_Mtilde_tau1, cache.sandwich1, -cache.gap, -1
        self.base_inv = base_inv
        if k == 0 or k == p:
            self.U = None
            return
        self.U, idx = cache.columns(mask)
        core = sandwich[np.ix_(idx, idx)]
        core[np.diag_indices_from(core)] += 1.0 / c
        self.sign = sign
        self.core = cho_factor(sign * symmetrize(core), lower=True)

    def __call__(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if self.mode == "direct":
            return spd_solve(self.factor, rhs)
        a = self.base_inv @ rhs
        if self.U is None:
            return a
        b = self.U.T @ a
        sol = self.sign * cho_solve(self.core, b)
        return a - self.base_inv @ (self.U @ sol)


def splus_solve(cache, z_t, rhs):
    """``M_t^{-1} rhs`` through :class:`SplusSolver`."""
    return SplusSolver(cache, z_t)(rhs)


def _from_scratch(cache, z_t, W=None):
    z_t = np.asarray(z_t, dtype=bool)
    k = int(np.count_nonzero(z_t))
    stats = SwapStats(delta=0, norm_z=k, norm_z_prev=k, p_t=0, rho=0.0, tau=0.0, tau_prev=0.0,
                      branch=SLAB if k <= cache.p - k else SPIKE, p=cache.p)
    if W is None:
        return update_M(cache, z_t, stats)
    ones = np.ones(cache.n)
    return update_M_logistic(cache, z_t, W, ones, stats)


def refresh(cache, z_t, W=None):
    """Rebuild the rolling matrices for ``z_t`` from the fixed matrices.

    Clears any drift accumulated by repeated low-rank updates.  ``W`` is
    required for a logistic (weighted) cache.
    """
    z_t = np.asarray(z_t, dtype=bool)
    M = np.array(_from_scratch(cache, z_t, W), copy=True)
    cache.M_prev = M
    cache.invM_prev = spd_inverse(M)
    cache.z_prev = z_t.copy()
    cache.W_prev = None if W is None else np.array(W, dtype=float, copy=True)
    cache.refreshes += 1


def audit_residual(cache, z=None, W=None):
    """Relative Frobenius distance of the rolling ``M`` from its dense value."""
    z = cache.z_prev if z is None else z
    W = cache.W_prev if W is None else W
    dense = dense_M(cache.X, cache.dinv(z), W)
    return float(np.linalg.norm(cache.M_prev - dense) / np.linalg.norm(dense))


def _probe_drift(cache, z_t, M_t, W=None):
    # ||M e - (e + W^{-1/2} X D^{-1} X^T W^{-1/2} e)|| / ||M e||, O(n^2 + np)
    e = cache._probe
    if W is None:
        direct = e + cache.X @ (cache.dinv(z_t) * (cache.X.T @ e))
    else:
        s = 1.0 / np.sqrt(W)
        direct = e + s * (cache.X @ (cache.dinv(z_t) * (cache.X.T @ (s * e))))
    Me = M_t @ e
    return float(np.linalg.norm(Me - direct) / np.linalg.norm(Me))


def commit(cache, z_t, M_t, invM_t, W_t=None, audit_period=50):
    """Roll ``(M_t, M_t^{-1}, z_t)`` into the cache as the new previous state.

    Every ``refresh_period`` commits the rolling matrices are rebuilt from
    scratch; every ``audit_period`` commits a cheap probe compares ``M_t``
    with its definition and forces a rebuild when the drift exceeds
    ``DRIFT_TOL``.
    """
    z_t = np.asarray(z_t, dtype=bool)
    cache.iterations += 1
    if cache.refresh_period and cache.iterations % cache.refresh_period == 0:
        refresh(cache, z_t, W_t)
        return
    if audit_period and cache.iterations % audit_period == 0 and cache.n:
        drift = _probe_drift(cache, z_t, M_t, W_t)
        if not np.isfinite(drift) or drift > DRIFT_TOL:
            log.warning("rolling M drifted by %.3g; refreshing", drift)
            refresh(cache, z_t, W_t)
            return
    cache.M_prev = M_t
    cache.invM_prev = invM_t
    cache.z_prev = z_t.copy()
    cache.W_prev = None if W_t is None else np.array(W_t, dtype=float, copy=True)
