"""Seeded random variates with a fixed per-site draw count.

Every engine in :mod:`spikeslab.samplers` pulls its randomness through an
:class:`RngStream`, and every variate here is produced from exactly one
underlying draw (a standard normal or a uniform fed through an inverse
CDF).  Two chains started from the same seed therefore see the same
uniforms at the same positions no matter how their matrix algebra is
organised, which is what makes draw-level engine comparison possible.

Per Gibbs sweep the order is fixed:

1. ``p`` standard normals (prior-space noise ``r``)
2. ``n`` standard normals (data-space noise ``xi``)
3. ``p`` uniforms for the inclusion indicators, index order
4. model tail: linear, one inverse-gamma; probit, ``n`` truncated
   normals; logistic, ``n`` truncated normals then ``n`` inverse-gammas.
"""

import numpy as np
from scipy.special import gammaincinv, log_ndtr, ndtri_exp

from .errors import ParameterDomainError

__all__ = [
    "RngStream",
    "std_normal_vec",
    "uniform_vec",
    "inv_gamma",
    "trunc_normal",
    "bernoulli",
]

_U64_MAX = 2**64 - 1
# half an ulp of the [0, 1) grid used by Generator.random
_HALF_STEP = 2.0**-54
_NEG_TINY = -np.finfo(float).tiny


class RngStream:
    """Reproducible stream of variates for one chain.

    Backed by PCG64 seeded from ``SeedSequence(seed, spawn_key=(chain,))``,
    so chains sharing a seed but with distinct ``chain`` indices are
    independent, and ``chain=0`` is the canonical single-chain stream.

    Attributes
    ----------
    seed : int
        Unsigned 64-bit seed.
    chain : int
        Stream index within the seed.
    position : int
        Number of variates handed out so far.
    """

    def __init__(self, seed, chain=0):
        seed = int(seed)
        if not 0 <= seed <= _U64_MAX:
            raise ParameterDomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.chain = int(chain)
        ss = np.random.SeedSequence(seed, spawn_key=(self.chain,))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self.position = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, chain={self.chain}, position={self.position})"

    def _normals(self, size, out=None):
        self.position += size
        if out is not None:
            return self._gen.standard_normal(out=out)
        return self._gen.standard_normal(size)

    def _uniforms(self, size):
        self.position += size
        return self._gen.random(size)

    def _open_uniforms(self, size):
        # strictly inside (0, 1): shift the k / 2**53 grid by half a step
        return self._uniforms(size) + _HALF_STEP


def std_normal_vec(rng, length, out=None):
    """Draw ``length`` i.i.d. standard normals.

    If ``out`` is given it must be a float64 array of that length and is
    filled in place.
    """
    length = int(length)
    if length < 1:
        raise ParameterDomainError(f"length must be >= 1, got {length}")
    if out is not None and out.shape != (length,):
        raise ParameterDomainError(f"out has shape {out.shape}, expected ({length},)")
    return rng._normals(length, out=out)


def uniform_vec(rng, length):
    """Draw ``length`` uniforms on [0, 1)."""
    return rng._uniforms(int(length))


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise ParameterDomainError(f"{name} must be finite")


def inv_gamma(rng, shape, rate):
    """Inverse-gamma draw(s) with density proportional to x^(-shape-1) exp(-rate/x).

    The mean is ``rate / (shape - 1)`` for ``shape > 1``.  Scalar or
    array arguments (broadcast together); one uniform is consumed per
    returned value and inverted through the regularised incomplete gamma
    function, so the draw is a smooth function of ``rate``.
    """
    shape_a = np.asarray(shape, dtype=float)
    rate_a = np.asarray(rate, dtype=float)
    _check_finite("shape", shape_a)
    _check_finite("rate", rate_a)
    if np.any(shape_a <= 0):
        raise ParameterDomainError("inverse-gamma shape must be positive")
    if np.any(rate_a <= 0):
        raise ParameterDomainError("inverse-gamma rate must be positive")
    shape_a, rate_a = np.broadcast_arrays(shape_a, rate_a)
    u = rng._open_uniforms(shape_a.size).reshape(shape_a.shape)
    draw = rate_a / gammaincinv(shape_a, u)
    if draw.ndim == 0:
        return float(draw)
    return draw


def trunc_normal(rng, mean, sd, side):
    """Normal draw(s) truncated to one side of zero.

    Parameters
    ----------
    mean, sd : float or array
        Location and scale of the untruncated normal.
    side : {"positive", "negative"} or bool array
        ``"positive"`` restricts to [0, inf), ``"negative"`` to (-inf, 0).
        A boolean array selects per element (True is positive).

    Notes
    -----
    Sampling is by inversion in log space, ``log_ndtr`` then
    ``ndtri_exp``, which stays accurate for bounds hundreds of standard
    deviations into the tail and costs one uniform per value.
    """
    mean_a = np.asarray(mean, dtype=float)
    sd_a = np.asarray(sd, dtype=float)
    _check_finite("mean", mean_a)
    _check_finite("sd", sd_a)
    if np.any(sd_a <= 0):
        raise ParameterDomainError("sd must be positive")
    if isinstance(side, str):
        if side not in ("positive", "negative"):
            raise ParameterDomainError(f"side must be 'positive' or 'negative', got {side!r}")
        positive = np.full(np.broadcast(mean_a, sd_a).shape, side == "positive")
    else:
        positive = np.asarray(side, dtype=bool)
    mean_a, sd_a, positive = np.broadcast_arrays(mean_a, sd_a, positive)

    u = rng._open_uniforms(mean_a.size).reshape(mean_a.shape)
    log_u = np.log(u)
    # standardized position of the truncation point at zero
    bound = -mean_a / sd_a
    # positive side: upper-tail mass above the bound is Phi(-bound)
    z_pos = -ndtri_exp(log_u + log_ndtr(-bound))
    z_neg = ndtri_exp(log_u + log_ndtr(bound))
    z = np.where(positive, z_pos, z_neg)
    x = mean_a + sd_a * z
    # rounding can push a draw a hair across zero
    x = np.where(positive, np.maximum(x, 0.0), np.minimum(x, _NEG_TINY))
    if x.ndim == 0:
        return float(x)
    return x


def bernoulli(rng, prob):
    """Bernoulli draw(s): 1 where a fresh uniform falls below ``prob``.

    Returns an ``int8`` array (or a Python int for scalar ``prob``).
    ``prob == 0`` always gives 0 and ``prob == 1`` always gives 1.
    """
    prob_a = np.asarray(prob, dtype=float)
    if np.any(np.isnan(prob_a)) or np.any(prob_a < 0) or np.any(prob_a > 1):
        raise ParameterDomainError("probability must lie in [0, 1]")
    u = rng._uniforms(prob_a.size).reshape(prob_a.shape)
    out = (u < prob_a).astype(np.int8)
    if out.ndim == 0:
        return int(out)
    return out
