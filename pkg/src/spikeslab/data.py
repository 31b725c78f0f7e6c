"""Datasets: CSV ingestion, standardization, synthetic generation, default priors."""

import csv
import gzip
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect
from scipy.stats import binom

from .errors import ConfigError, DataError
from .samplers import MODELS, Hyperparams

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "Truth",
    "SIGNALS",
    "standardize",
    "generate_synthetic",
    "load_csv",
    "default_hyperparams",
    "prior_inclusion_q",
]

SIGNALS = ("constant2", "decaying")
_GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True)
class Dataset:
    """Design matrix and response.

    ``column_means``/``column_scales`` record the affine map applied to the
    raw columns (zeros and ones when nothing was applied).
    """

    X: np.ndarray
    y: np.ndarray
    response_kind: str = "continuous"
    column_means: np.ndarray = None
    column_scales: np.ndarray = None
    names: tuple | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise DataError(f"X must be 2-d, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if self.response_kind not in ("continuous", "binary"):
            raise DataError(f"unknown response kind {self.response_kind!r}")
        if self.response_kind == "binary" and not np.all((y == 0) | (y == 1)):
            raise DataError("binary response must contain only 0 and 1")
        p = X.shape[1]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.column_means is None:
            object.__setattr__(self, "column_means", np.zeros(p))
        if self.column_scales is None:
            object.__setattr__(self, "column_scales", np.ones(p))
        if self.names is not None and len(self.names) != p:
            raise DataError(f"{len(self.names)} names for {p} columns")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows):
        """Rows ``rows`` as a new dataset sharing the standardization record."""
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.response_kind,
                       self.column_means, self.column_scales, self.names)

    def with_intercept(self):
        """Prepend a column of ones (left unstandardized)."""
        X = np.hstack([np.ones((self.n, 1)), self.X])
        names = None if self.names is None else ("intercept",) + tuple(self.names)
        return Dataset(X, self.y, self.response_kind, np.r_[0.0, self.column_means],
                       np.r_[1.0, self.column_scales], names)


@dataclass(frozen=True)
class SyntheticSpec:
    """Protocol for simulated data: i.i.d. Gaussian design, sparse truth."""

    n: int
    p: int
    s: int
    sigma_star: float = 2.0
    signal: str = "constant2"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ConfigError(f"need n, p >= 1, got n={self.n}, p={self.p}")
        if not 0 <= self.s <= self.p:
            raise ConfigError(f"need 0 <= s <= p, got s={self.s}, p={self.p}")
        if self.signal not in SIGNALS:
            raise ConfigError(f"unknown signal {self.signal!r}; choose from {', '.join(SIGNALS)}")
        if not self.sigma_star >= 0:
            raise ConfigError(f"sigma_star must be non-negative, got {self.sigma_star}")


@dataclass(frozen=True)
class Truth:
    beta_star: np.ndarray
    support: tuple = field(default=())


def standardize(X, ddof=1):
    """Center each column and scale it to unit standard deviation.

    Returns ``(Xs, means, scales)``.  Columns with zero spread raise
    :class:`DataError` naming the offending column index.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] <= ddof:
        raise DataError(f"need more than {ddof} rows to standardize, got {X.shape[0]}")
    means = X.mean(axis=0)
    Xc = X - means
    scales = np.sqrt((Xc**2).sum(axis=0) / (X.shape[0] - ddof))
    bad = np.flatnonzero(~(scales > 1e-12 * np.maximum(1.0, np.abs(means))))
    if bad.size:
        raise DataError(f"column {bad[0]} has zero variance and cannot be standardized")
    return Xc / scales, means, scales


def _beta_star(spec):
    j = np.arange(1, spec.p + 1)
    if spec.signal == "constant2":
        beta = np.full(spec.p, 2.0)
    else:
        beta = 2.0 ** ((9.0 - j) / 4.0)
    return np.where(j <= spec.s, beta, 0.0)


def generate_synthetic(spec, kind="continuous"):
    """Simulate a standardized Gaussian design and a response.

    ``continuous``: ``y = X beta* + sigma* eps``.  ``binary``: ``y_i = 1``
    when ``x_i^T beta* + L_i > 0`` with ``L_i`` standard logistic.

    Returns ``(Dataset, Truth)``.
    """
    if kind not in ("continuous", "binary"):
        raise ConfigError(f"unknown response kind {kind!r}")
    if spec.n < 2:
        raise ConfigError("need n >= 2 to standardize the design")
    rng = np.random.default_rng(spec.seed)
    X, means, scales = standardize(rng.standard_normal((spec.n, spec.p)))
    beta = _beta_star(spec)
    eta = X @ beta
    if kind == "continuous":
        y = eta + spec.sigma_star * rng.standard_normal(spec.n)
    else:
        y = (eta + rng.logistic(0.0, 1.0, spec.n) > 0).astype(float)
    truth = Truth(beta_star=beta, support=tuple(range(spec.s)))
    return Dataset(X, y, kind, means, scales), truth


def _open_text(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == _GZIP_MAGIC:
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def _resolve_column(response_column, header, width):
    if isinstance(response_column, str) and not response_column.lstrip("-").isdigit():
        if header is None:
            raise DataError(f"response column {response_column!r} given by name but file has no header")
        try:
            return header.index(response_column)
        except ValueError:
            raise DataError(f"response column {response_column!r} not in header") from None
    idx = int(response_column)
    if not 0 <= idx < width:
        raise DataError(f"response column index {idx} out of range for {width} columns")
    return idx


def load_csv(path, response_column, header=True, standardize_columns=False, response_kind=None):
    """Read a comma-separated numeric table.

    Parameters
    ----------
    path : str or Path
        Plain or gzip-compressed file (detected from the first two bytes).
    response_column : int or str
        0-based index, or header name.
    header : bool
        Whether the first row holds column names.
    standardize_columns : bool
        Center and scale the covariates, recording the transformation.
    response_kind : {"continuous", "binary"}, optional
        Inferred when omitted: a response with only 0/1 values is binary.
    """
    try:
        with _open_text(path) as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (UnicodeDecodeError, gzip.BadGzipFile, EOFError) as exc:
        raise DataError(f"{path} is not a readable text table: {exc}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    names = None
    if header:
        if not rows:
            raise DataError(f"{path} is empty")
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(names) if names is not None else (len(rows[0]) if rows else 0)
    if width < 2:
        raise DataError("need at least one covariate and a response column")
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + 1 + bool(header)
        if len(row) != width:
            raise DataError(f"row {line} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"non-numeric value {cell.strip()!r} at row {line}, column {j}") from None
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"non-finite value at row {i + 1 + bool(header)}, column {j}")
    col = _resolve_column(response_column, names, width)
    y = values[:, col]
    X = np.delete(values, col, axis=1)
    cov_names = None if names is None else tuple(n for k, n in enumerate(names) if k != col)
    binary = bool(np.all((y == 0) | (y == 1)))
    if response_kind is None:
        response_kind = "binary" if binary else "continuous"
    elif response_kind == "binary" and not binary:
        raise DataError("binary response must contain only 0 and 1")
    means = scales = None
    if standardize_columns:
        try:
            X, means, scales = standardize(X)
        except DataError as exc:
            if cov_names is not None and "column" in str(exc):
                j = int(str(exc).split()[1])
                raise DataError(f"column {cov_names[j]!r} has zero variance and cannot be standardized") from None
            raise
    return Dataset(X, y, response_kind, means, scales, cov_names)


def prior_inclusion_q(p, K, target=0.1):
    """``q`` with ``P(Binomial(p, q) > K) = target``, found by bisection.

    ``K`` at or above ``p`` leaves no solution (the tail is empty), so it is
    clamped to ``p - 1``.
    """
    # the guard keeps log-derived K such as log10(1e12) = 11.999... at 12
    k = min(math.floor(K + 1e-9), p - 1)

    def gap(q):
        return binom.sf(k, p, q) - target

    return bisect(gap, 1e-300, 1.0 - 1e-16, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def default_hyperparams(n, p, model="linear", log_base=math.e, a0=1.0, b0=1.0):
    """Default prior for ``n`` observations and ``p`` covariates.

    ``tau0sq = 1/n``, ``tau1sq = max(p^2.1 / (100 n), 1)``, and ``q`` puts
    prior probability 0.1 on more than ``K = max(10, log n)`` active
    covariates.
    """
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}")
    if n < 1 or p < 1:
        raise ConfigError(f"need n, p >= 1, got n={n}, p={p}")
    tau0sq = 1.0 / n
    tau1sq = max(p**2.1 / (100.0 * n), 1.0)
    if not tau1sq > tau0sq:
        # n = 1 makes both variances 1; keep the slab strictly wider
        tau1sq = tau0sq * (1.0 + 1e-6)
    K = max(10.0, math.log(n, log_base))
    return Hyperparams(q=prior_inclusion_q(p, K), tau0sq=tau0sq, tau1sq=tau1sq, a0=a0, b0=b0)
