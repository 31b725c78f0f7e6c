"""Gibbs samplers for spike-and-slab linear, probit and logistic regression.

One sweep updates ``beta | z``, then ``z | beta``, then the model tail
(``sigma^2`` for linear; the latent responses, plus their variances for
logistic).  The four engines differ only in how they handle the
``beta`` draw:

``naive``
    factorizes the ``p x p`` precision ``X^T W^{-1} X + D`` every sweep;
``sota``
    rebuilds ``M_t = I + X D^{-1} X^T`` from scratch every sweep;
``s3``
    updates ``M_t`` and ``M_t^{-1}`` incrementally from the previous sweep;
``s3plus``
    applies ``M_t^{-1}`` through precomputed ``X^T Mt^{-1} X`` blocks.

All of them consume the same random draws in the same order, so chains
started from one seed agree draw for draw up to rounding.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, logit

from .distributions import RngStream, bernoulli, inv_gamma, trunc_normal
from .errors import ConfigError, DimensionError, NumericalError, StateError
from .linalg import spd_factor, spd_inverse, spd_solve
from .mvn import (
    WorkBuffers,
    sample_beta_dense_linear,
    sample_beta_dense_weighted,
    sample_beta_linear,
    sample_beta_weighted,
)
from .precompute import (
    SplusSolver,
    commit,
    dense_M,
    init_cache,
    select_branch,
    update_M,
    update_M_inv,
    update_M_logistic,
)

log = logging.getLogger(__name__)

__all__ = [
    "MODELS",
    "ENGINES",
    "NU",
    "WSQ",
    "Hyperparams",
    "LinearState",
    "GlmState",
    "ChainOutput",
    "Engine",
    "NaiveEngine",
    "SotaEngine",
    "S3Engine",
    "S3PlusEngine",
    "make_engine",
    "initial_state",
    "inclusion_prob",
    "step_linear",
    "step_probit",
    "step_logistic",
    "run_chain",
    "stored_draw_count",
]

MODELS = ("linear", "logistic", "probit")
ENGINES = ("naive", "sota", "s3", "s3plus")

NU = 7.3
WSQ = math.pi**2 * (NU - 2) / (3 * NU)


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters.

    ``sigma^2 ~ InvGamma(a0 / 2, b0 / 2)``; coefficient ``j`` has prior
    variance ``sigma^2 tau1sq`` when ``z_j = 1`` (slab) and
    ``sigma^2 tau0sq`` otherwise (spike), with ``P(z_j = 1) = q``.  The
    probit and logistic models fix ``sigma^2 = 1``.  ``nu`` and ``wsq``
    are the degrees of freedom and squared scale of the Student-t stand-in
    for the logistic distribution.
    """

    q: float
    tau0sq: float
    tau1sq: float
    a0: float = 1.0
    b0: float = 1.0
    nu: float = NU
    wsq: float = WSQ

    def __post_init__(self):
        for name in ("tau0sq", "tau1sq", "a0", "b0", "nu", "wsq"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive and finite, got {v}")
        if not 0.0 <= self.q <= 1.0:
            raise ConfigError(f"q must lie in [0, 1], got {self.q}")
        if not self.tau1sq > self.tau0sq:
            raise ConfigError(f"tau1sq ({self.tau1sq}) must exceed tau0sq ({self.tau0sq})")

    def to_dict(self):
        return asdict(self)


@dataclass
class LinearState:
    beta: np.ndarray
    z: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=bool)
        if self.beta.shape != self.z.shape:
            raise DimensionError("beta and z lengths differ")
        if not self.sigma2 > 0:
            raise StateError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass
class GlmState:
    beta: np.ndarray
    z: np.ndarray
    y_latent: np.ndarray
    sigma_tilde2: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=bool)
        if self.beta.shape != self.z.shape:
            raise DimensionError("beta and z lengths differ")
        if self.y_latent.shape != self.sigma_tilde2.shape:
            raise DimensionError("y_latent and sigma_tilde2 lengths differ")
        if np.any(self.sigma_tilde2 <= 0):
            raise StateError("sigma_tilde2 entries must be positive")


@dataclass
class ChainOutput:
    """Stored draws and per-sweep instrumentation of one chain.

    ``z_draws``/``beta_draws`` hold sweeps ``t >= burn_in`` with
    ``(t - burn_in) % thin == 0``.  ``swaps``, ``durations`` and
    ``columns`` have one entry per completed sweep.
    """

    model: str
    engine: str
    seed: int
    chain: int
    hyperparams: Hyperparams
    T: int
    burn_in: int
    thin: int
    z_draws: np.ndarray
    beta_draws: np.ndarray
    sigma2_draws: np.ndarray | None = None
    swaps: list = field(default_factory=list)
    durations: np.ndarray = None
    columns: np.ndarray = None
    completed: int = 0
    stored: int = 0
    error: str | None = None
    final_state: object = None

    @property
    def inclusion_frequencies(self):
        return self.z_draws[: self.stored].mean(axis=0)

    def config(self):
        return {
            "model": self.model,
            "engine": self.engine,
            "seed": self.seed,
            "chain": self.chain,
            "T": self.T,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "hyperparams": self.hyperparams.to_dict(),
        }


def stored_draw_count(T, burn_in, thin):
    """Number of sweeps kept: ``ceil((T - burn_in) / thin)``."""
    return -(-(T - burn_in) // thin)


# ---------------------------------------------------------------- engines


class Engine:
    """Strategy for the ``beta | z`` draw; also tracks ``z_{t-1}`` for swap statistics."""

    name = None

    def __init__(self, X, hp, model, refresh_period=1000):
        if model not in MODELS:
            raise ConfigError(f"unknown model {model!r}")
        self.X = np.asarray(X, dtype=float)
        self.hp = hp
        self.model = model
        self.refresh_period = refresh_period
        self.z_prev = None
        self.columns = 0

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def dinv(self, z):
        return np.where(z, self.hp.tau1sq, self.hp.tau0sq)

    def reset(self, z0, W0=None):
        self.z_prev = np.asarray(z0, dtype=bool).copy()

    def swap(self, z):
        return select_branch(z, self.z_prev)

    def beta_linear(self, z, stats, y, sigma, rng, buf):
        raise NotImplementedError

    def beta_weighted(self, z, stats, W, y_tilde, rng, buf):
        """``W`` is the diagonal of the weight matrix (``None`` for identity)."""
        raise NotImplementedError

    def finish(self, z):
        self.z_prev = np.asarray(z, dtype=bool).copy()


class NaiveEngine(Engine):
    name = "naive"

    def __init__(self, X, hp, model, refresh_period=1000):
        super().__init__(X, hp, model, refresh_period)
        g = self.X.T @ self.X
        self.gram = 0.5 * (g + g.T)

    def beta_linear(self, z, stats, y, sigma, rng, buf):
        return sample_beta_dense_linear(self.X, self.gram, self.dinv(z), y, sigma, rng, buf)

    def beta_weighted(self, z, stats, W, y_tilde, rng, buf):
        if W is None:
            return sample_beta_dense_linear(self.X, self.gram, self.dinv(z), y_tilde, 1.0, rng, buf)
        return sample_beta_dense_weighted(self.X, self.dinv(z), 1.0 / W, y_tilde, rng, buf)


class SotaEngine(Engine):
    name = "sota"

    def _solver(self, z, W=None):
        f = spd_factor(dense_M(self.X, self.dinv(z), W))
        self.columns = self.p
        return lambda rhs: spd_solve(f, rhs)

    def beta_linear(self, z, stats, y, sigma, rng, buf):
        return sample_beta_linear(self.X, self.dinv(z), y, sigma, self._solver(z), rng, buf)

    def beta_weighted(self, z, stats, W, y_tilde, rng, buf):
        Winv = np.ones(self.n) if W is None else 1.0 / W
        return sample_beta_weighted(self.X, self.dinv(z), Winv, y_tilde, self._solver(z, W), rng, buf)


class S3Engine(Engine):
    name = "s3"

    def reset(self, z0, W0=None):
        super().reset(z0, W0)
        W0 = None if self.model != "logistic" else W0
        self.cache = init_cache(self.X, self.hp.tau0sq, self.hp.tau1sq, z0=z0, W0=W0,
                                refresh_period=self.refresh_period)

    def _unweighted(self, z, stats):
        M = update_M(self.cache, z, stats)
        invM = update_M_inv(self.cache, M, z, stats)
        self.columns = self.cache.last_columns
        self._pending = (M, invM, None)
        return invM

    def beta_linear(self, z, stats, y, sigma, rng, buf):
        invM = self._unweighted(z, stats)
        return sample_beta_linear(self.X, self.dinv(z), y, sigma, invM, rng, buf)

    def beta_weighted(self, z, stats, W, y_tilde, rng, buf):
        if W is None:
            invM = self._unweighted(z, stats)
            Winv = np.ones(self.n)
        else:
            M = update_M_logistic(self.cache, z, W, self.cache.W_prev, stats)
            invM = spd_inverse(M)
            self.columns = self.cache.last_columns
            self._pending = (M, invM, W)
            Winv = 1.0 / W
        return sample_beta_weighted(self.X, self.dinv(z), Winv, y_tilde, invM, rng, buf)

    def finish(self, z):
        # the cache rolls forward the z the matrices were built for
        M, invM, W = self._pending
        commit(self.cache, self._z_used, M, invM, W)
        super().finish(z)

    def swap(self, z):
        self._z_used = np.asarray(z, dtype=bool).copy()
        return select_branch(z, self.cache.z_prev)


class S3PlusEngine(S3Engine):
    """Gram-block variant; the logistic model runs the plain incremental path.

    Reweighting changes ``W`` in every coordinate each sweep, so blocks of
    ``X^T X`` cannot be reused for the weighted ``M_t``.
    """

    name = "s3plus"

    def reset(self, z0, W0=None):
        if self.model == "logistic":
            super().reset(z0, W0)
            return
        Engine.reset(self, z0, W0)
        self.cache = init_cache(self.X, self.hp.tau0sq, self.hp.tau1sq, splus=True,
                                refresh_period=self.refresh_period)

    def _unweighted(self, z, stats):
        solver = SplusSolver(self.cache, z)
        self.columns = self.cache.last_columns
        return solver

    def swap(self, z):
        if self.model == "logistic":
            return super().swap(z)
        return select_branch(z, self.z_prev)

    def finish(self, z):
        if self.model == "logistic":
            super().finish(z)
        else:
            Engine.finish(self, z)


_ENGINES = {c.name: c for c in (NaiveEngine, SotaEngine, S3Engine, S3PlusEngine)}


def make_engine(name, X, hp, model, refresh_period=1000):
    try:
        cls = _ENGINES[name]
    except KeyError:
        raise ConfigError(f"unknown engine {name!r}; choose from {', '.join(ENGINES)}") from None
    return cls(X, hp, model, refresh_period=refresh_period)


# ------------------------------------------------------------------ sweeps


def inclusion_prob(beta, hp, sigma2=1.0):
    """Conditional ``P(z_j = 1 | beta_j)`` evaluated through the log-odds."""
    beta = np.asarray(beta, dtype=float)
    with np.errstate(divide="ignore"):
        prior = logit(hp.q)
    log_odds = (prior - 0.5 * math.log(hp.tau1sq / hp.tau0sq)
                - beta**2 / (2.0 * sigma2) * (1.0 / hp.tau1sq - 1.0 / hp.tau0sq))
    return expit(log_odds)


def _sample_z(rng, beta, hp, sigma2):
    prob = inclusion_prob(beta, hp, sigma2)
    return bernoulli(rng, prob).astype(bool)


def _finite(name, value, iteration):
    if not np.all(np.isfinite(value)):
        raise StateError(f"non-finite {name}", iteration)


def step_linear(state, data, hp, engine, rng, buf=None, iteration=None):
    """One sweep of the linear-regression sampler.

    ``engine`` must have been :meth:`~Engine.reset` to the indicator vector
    that preceded ``state.z`` (or ``state.z`` itself on the first sweep).
    """
    X, y = data.X, data.y
    n, p = X.shape
    buf = buf or WorkBuffers.allocate(n, p)
    stats = engine.swap(state.z)
    sigma2 = state.sigma2
    beta = engine.beta_linear(state.z, stats, y, math.sqrt(sigma2), rng, buf)
    _finite("beta", beta, iteration)
    z = _sample_z(rng, beta, hp, sigma2)
    resid = y - X @ beta
    dinv_new = np.where(z, hp.tau1sq, hp.tau0sq)
    rate = 0.5 * (hp.b0 + resid @ resid + np.sum(beta**2 / dinv_new))
    _finite("sigma2 rate", rate, iteration)
    sigma2_new = inv_gamma(rng, 0.5 * (hp.a0 + n + p), rate)
    _finite("sigma2", sigma2_new, iteration)
    engine.finish(state.z)
    return LinearState(beta=beta, z=z, sigma2=sigma2_new), stats


def _latent(rng, data, beta, var):
    mean = data.X @ beta
    return trunc_normal(rng, mean, np.sqrt(var), data.y == 1), mean


def step_probit(state, data, hp, engine, rng, buf=None, iteration=None):
    """One sweep of the probit sampler (latent variances fixed at one)."""
    X = data.X
    n, p = X.shape
    buf = buf or WorkBuffers.allocate(n, p)
    stats = engine.swap(state.z)
    beta = engine.beta_weighted(state.z, stats, None, state.y_latent, rng, buf)
    _finite("beta", beta, iteration)
    z = _sample_z(rng, beta, hp, 1.0)
    y_latent, _ = _latent(rng, data, beta, 1.0)
    _finite("latent response", y_latent, iteration)
    engine.finish(state.z)
    return GlmState(beta=beta, z=z, y_latent=y_latent, sigma_tilde2=np.ones(n)), stats


def step_logistic(state, data, hp, engine, rng, buf=None, iteration=None):
    """One sweep of the logistic sampler (Student-t scale mixture)."""
    X = data.X
    n, p = X.shape
    buf = buf or WorkBuffers.allocate(n, p)
    W = state.sigma_tilde2
    stats = engine.swap(state.z)
    beta = engine.beta_weighted(state.z, stats, W, state.y_latent, rng, buf)
    _finite("beta", beta, iteration)
    z = _sample_z(rng, beta, hp, 1.0)
    y_latent, mean = _latent(rng, data, beta, W)
    _finite("latent response", y_latent, iteration)
    rate = 0.5 * (hp.wsq * hp.nu + (y_latent - mean) ** 2)
    s2 = inv_gamma(rng, np.full(n, 0.5 * (hp.nu + 1.0)), rate)
    if not np.all(np.isfinite(s2)) or np.any(s2 <= 0):
        raise StateError("latent variances left (0, inf)", iteration)
    engine.finish(state.z)
    return GlmState(beta=beta, z=z, y_latent=y_latent, sigma_tilde2=s2), stats


_STEPS = {"linear": step_linear, "probit": step_probit, "logistic": step_logistic}


def initial_state(model, data):
    """``beta = 0``, ``z = 0``, ``sigma^2 = 1``; latents ``+1``/``-1`` by class, variances one."""
    n, p = data.X.shape
    beta = np.zeros(p)
    z = np.zeros(p, dtype=bool)
    if model == "linear":
        return LinearState(beta=beta, z=z, sigma2=1.0)
    return GlmState(beta=beta, z=z, y_latent=np.where(data.y == 1, 1.0, -1.0),
                    sigma_tilde2=np.ones(n))


def _check_data(model, data):
    n, p = data.X.shape
    if data.y.shape != (n,):
        raise DimensionError(f"y has shape {data.y.shape}, expected ({n},)")
    if model != "linear" and not np.all((data.y == 0) | (data.y == 1)):
        raise ConfigError(f"{model} model needs a binary 0/1 response")


def run_chain(model, engine, data, hp, T, burn_in, thin=1, seed=0, init=None, chain=0,
              refresh_period=1000):
    """Run ``T`` sweeps and keep thinned post-burn-in draws.

    ``engine`` is an engine name or an :class:`Engine` instance.  A
    :class:`~spikeslab.errors.NumericalError` raised mid-chain is
    re-raised with the partial :class:`ChainOutput` attached as
    ``exc.partial``.
    """
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    T, burn_in, thin = int(T), int(burn_in), int(thin)
    if thin < 1:
        raise ConfigError("thin must be >= 1")
    if not 0 <= burn_in < T:
        raise ConfigError(f"need 0 <= burn_in < T, got burn_in={burn_in}, T={T}")
    _check_data(model, data)
    n, p = data.X.shape
    eng = engine if isinstance(engine, Engine) else make_engine(engine, data.X, hp, model,
                                                                 refresh_period)
    state = init if init is not None else initial_state(model, data)
    W0 = state.sigma_tilde2 if model == "logistic" else None
    eng.reset(state.z, W0)
    rng = RngStream(seed, chain)
    buf = WorkBuffers.allocate(n, p)
    step = _STEPS[model]

    S = stored_draw_count(T, burn_in, thin)
    out = ChainOutput(
        model=model, engine=eng.name, seed=int(seed), chain=int(chain), hyperparams=hp,
        T=T, burn_in=burn_in, thin=thin,
        z_draws=np.zeros((S, p), dtype=np.int8), beta_draws=np.zeros((S, p)),
        sigma2_draws=np.zeros(S) if model == "linear" else None,
        durations=np.zeros(T), columns=np.zeros(T, dtype=np.int64),
    )
    clock = time.perf_counter
    for t in range(T):
        t0 = clock()
        try:
            state, stats = step(state, data, hp, eng, rng, buf, iteration=t)
        except StateError as exc:
            exc.partial = out
            out.error = str(exc)
            raise
        except NumericalError as exc:
            err = StateError(str(exc), t)
            err.partial = out
            out.error = str(err)
            raise err from exc
        out.durations[t] = clock() - t0
        out.columns[t] = eng.columns
        out.swaps.append(stats)
        out.completed = t + 1
        if t >= burn_in and (t - burn_in) % thin == 0:
            k = out.stored
            out.z_draws[k] = state.z
            out.beta_draws[k] = state.beta
            if model == "linear":
                out.sigma2_draws[k] = state.sigma2
            out.stored = k + 1
        out.final_state = state
    return out
