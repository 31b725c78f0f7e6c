"""Swap-count identities, inclusion estimates, selection metrics and an exact oracle."""

import csv
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, ndtr

from .errors import ConfigError, DataError, DimensionError, NumericalError
from .linalg import spd_factor, spd_solve
from .precompute import select_branch

__all__ = [
    "InclusionEstimate",
    "SelectionMetrics",
    "swap_decomposition",
    "swap_residual",
    "swap_bounds",
    "expected_swap_count",
    "inclusion_probabilities",
    "median_model",
    "tpr_fdr",
    "predictive_rmse",
    "exact_linear_posterior",
    "enumerate_log_weights",
    "trace_summary",
    "write_inclusion_csv",
    "write_metrics_json",
]

MAX_ENUMERATION_P = 15


@dataclass(frozen=True)
class InclusionEstimate:
    pi_hat: np.ndarray
    chains_used: int
    draws_used: int


@dataclass(frozen=True)
class SelectionMetrics:
    tpr: float
    fdr: float
    selected: tuple


# ------------------------------------------------------------ swap counts


def swap_residual(stats):
    """``delta`` minus its closed form in ``|z|``, ``|z'|``, ``rho`` and ``tau``."""
    k, kp, p = stats.norm_z, stats.norm_z_prev, stats.p
    closed = k + kp - (2.0 * k * kp + 2.0 * stats.rho * stats.tau * stats.tau_prev) / p
    return stats.delta - closed


def swap_decomposition(z_t, z_prev, tol=1e-10):
    """Swap statistics of a transition, checked against the correlation identity.

    ``delta`` must equal ``|z| + |z'| - (2 |z| |z'| + 2 rho tau tau') / p``;
    a residual above ``tol`` raises :class:`NumericalError`.
    """
    z_t = np.asarray(z_t, dtype=bool)
    z_prev = np.asarray(z_prev, dtype=bool)
    if z_t.shape != z_prev.shape:
        raise DimensionError(f"indicator lengths differ: {z_t.shape} vs {z_prev.shape}")
    if z_t.ndim != 1 or z_t.size < 2:
        raise DimensionError("need 1-d indicator vectors with p >= 2")
    stats = select_branch(z_t, z_prev)
    res = swap_residual(stats)
    if abs(res) > tol:
        raise NumericalError(f"swap identity residual {res:.3g} exceeds {tol}")
    return stats


def swap_bounds(stats):
    """Lower and upper bounds on ``delta`` implied by ``|rho| <= 1``."""
    p = stats.p
    shift = (stats.norm_z - stats.norm_z_prev) ** 2 / p
    return (shift + (stats.tau - stats.tau_prev) ** 2 / p,
            shift + (stats.tau + stats.tau_prev) ** 2 / p)


def _check_probs(name, a):
    a = np.asarray(a, dtype=float)
    if np.any(np.isnan(a)) or np.any(a < 0) or np.any(a > 1):
        raise ConfigError(f"{name} must lie in [0, 1]")
    return a


def expected_swap_count(marginals_t, marginals_prev, covs):
    """Expected number of coordinates that switch between two sweeps.

    ``marginals_*`` are ``P(z_j = 1)`` at each sweep and ``covs`` the
    per-coordinate covariances ``cov(z_{j,t}, z_{j,t-1})``.
    """
    m = _check_probs("marginals_t", marginals_t)
    mp = _check_probs("marginals_prev", marginals_prev)
    c = np.asarray(covs, dtype=float)
    if not (m.shape == mp.shape == c.shape):
        raise DimensionError("marginals and covariances must have equal lengths")
    return float(np.sum(m * (1 - mp) + (1 - m) * mp - 2 * c))


def trace_summary(output, start=0, stop=None):
    """Mean ``p_t``, ``delta_t`` and seconds per sweep over ``[start, stop)``."""
    swaps = output.swaps[start:stop]
    if not swaps:
        raise ConfigError("empty trace window")
    secs = output.durations[: output.completed][start:stop]
    return {
        "mean_p_t": float(np.mean([s.p_t for s in swaps])),
        "mean_delta": float(np.mean([s.delta for s in swaps])),
        "seconds_per_iteration": float(np.mean(secs)),
    }


# ---------------------------------------------------- inclusion / selection


def inclusion_probabilities(outputs):
    """Pool the stored indicator draws of one or more chains."""
    if not isinstance(outputs, (list, tuple)):
        outputs = [outputs]
    if not outputs:
        raise ConfigError("no chain outputs given")
    p = outputs[0].z_draws.shape[1]
    total = np.zeros(p)
    draws = 0
    for out in outputs:
        if out.z_draws.shape[1] != p or out.model != outputs[0].model:
            raise DimensionError("chain outputs differ in model or number of covariates")
        z = out.z_draws[: out.stored]
        total += z.sum(axis=0)
        draws += z.shape[0]
    if draws == 0:
        raise ConfigError("chains hold no stored draws")
    return InclusionEstimate(pi_hat=total / draws, chains_used=len(outputs), draws_used=draws)


def median_model(est):
    """Indices whose inclusion probability is strictly above one half."""
    pi = est.pi_hat if isinstance(est, InclusionEstimate) else np.asarray(est, dtype=float)
    return tuple(int(j) for j in np.flatnonzero(pi > 0.5))


def tpr_fdr(selected, true_support, p, conventional=False):
    """True positive rate and false discovery rate of a selected set.

    By default the false discovery rate is the share of null coordinates
    that were selected (denominator ``p - s``).  ``conventional=True``
    divides by the number selected instead.
    """
    sel = {int(j) for j in selected}
    sup = {int(j) for j in true_support}
    if any(j < 0 or j >= p for j in sel | sup):
        raise ConfigError(f"indices must lie in [0, {p})")
    tpr = len(sel & sup) / len(sup) if sup else 1.0
    false = len(sel - sup)
    if conventional:
        fdr = false / len(sel) if sel else 0.0
    else:
        fdr = false / (p - len(sup)) if p > len(sup) else 0.0
    return SelectionMetrics(tpr=tpr, fdr=fdr, selected=tuple(sorted(sel)))


def predictive_rmse(outputs, holdout):
    """Root-mean-square error of posterior-averaged predictions on ``holdout``.

    Continuous models predict ``mean_t x^T beta_t``; binary models predict
    the posterior mean of the success probability under the model's link
    (logistic or standard normal CDF).
    """
    if not isinstance(outputs, (list, tuple)):
        outputs = [outputs]
    model = outputs[0].model
    betas = np.vstack([o.beta_draws[: o.stored] for o in outputs])
    if betas.shape[0] == 0:
        raise ConfigError("chains hold no stored draws")
    if betas.shape[1] != holdout.p:
        raise DimensionError(f"draws have {betas.shape[1]} coefficients, holdout has {holdout.p} columns")
    binary = model in ("logistic", "probit")
    if binary != (holdout.response_kind == "binary"):
        raise DataError(f"{model} model does not match a {holdout.response_kind} holdout response")
    if holdout.n == 0:
        raise DataError("holdout set is empty")
    if not binary:
        pred = holdout.X @ betas.mean(axis=0)
    else:
        eta = holdout.X @ betas.T
        link = expit if model == "logistic" else ndtr
        pred = link(eta).mean(axis=1)
    return float(np.sqrt(np.mean((holdout.y - pred) ** 2)))


# -------------------------------------------------------- exact posterior


def _log_marginal(X, y, dinv, a0, b0):
    # y | z ~ multivariate t: |M|^{-1/2} (b0 + y^T M^{-1} y)^{-(a0 + n)/2}
    n = X.shape[0]
    if n == 0:
        return 0.0
    M = (X * dinv) @ X.T
    M = 0.5 * (M + M.T)
    M[np.diag_indices_from(M)] += 1.0
    f = spd_factor(M)
    logdet = 2.0 * np.sum(np.log(np.diag(f.lower)))
    quad = float(y @ spd_solve(f, y))
    return -0.5 * logdet - 0.5 * (a0 + n) * math.log(b0 + quad)


def enumerate_log_weights(data, hp):
    """Unnormalized log posterior of every indicator vector.

    Returns ``(Z, logw)`` with ``Z`` the ``(2^p, p)`` boolean model matrix.
    """
    if data.response_kind != "continuous":
        raise DataError("exact enumeration needs a continuous response")
    p = data.p
    if p > MAX_ENUMERATION_P:
        raise ConfigError(f"enumeration over 2^{p} models is too large (p <= {MAX_ENUMERATION_P})")
    Z = np.array(list(itertools.product([False, True], repeat=p)), dtype=bool).reshape(-1, p)
    k = Z.sum(axis=1)
    with np.errstate(divide="ignore"):
        log_q, log_1q = np.log(hp.q), np.log1p(-hp.q)
    logw = np.empty(Z.shape[0])
    for m, z in enumerate(Z):
        prior = (k[m] * log_q if k[m] else 0.0) + ((p - k[m]) * log_1q if p - k[m] else 0.0)
        dinv = np.where(z, hp.tau1sq, hp.tau0sq)
        logw[m] = prior + _log_marginal(data.X, data.y, dinv, hp.a0, hp.b0)
    return Z, logw


def exact_linear_posterior(data, hp):
    """Exact ``P(z_j = 1 | y)`` for the linear model by enumerating all ``2^p`` models.

    ``beta`` and ``sigma^2`` are integrated out in closed form (normal
    inverse-gamma conjugacy), and the model weights are normalized in log
    space.
    """
    Z, logw = enumerate_log_weights(data, hp)
    w = np.exp(logw - logsumexp(logw))
    return w @ Z


# ------------------------------------------------------------------ output


def write_inclusion_csv(path, est, config=None):
    """Write ``coordinate, pi_hat, selected`` rows; the config goes in a leading comment."""
    selected = set(median_model(est))
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["coordinate", "pi_hat", "selected"])
        for j, v in enumerate(est.pi_hat):
            w.writerow([j, repr(float(v)), int(j in selected)])


def write_metrics_json(path, metrics, config=None):
    blob = {"config": config, "metrics": metrics}
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")
