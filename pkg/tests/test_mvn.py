import numpy as np
import pytest

from spikeslab.distributions import RngStream
from spikeslab.errors import DimensionError
from spikeslab.mvn import (
    WorkBuffers,
    sample_beta_dense_linear,
    sample_beta_dense_weighted,
    sample_beta_linear,
    sample_beta_weighted,
)


def m_inverse(X, dinv, winv=None):
    Xs = X if winv is None else X * np.sqrt(winv)[:, None]
    return np.linalg.inv(np.eye(X.shape[0]) + (Xs * dinv) @ Xs.T)


def posterior(X, dinv, y, sigma):
    Sigma = X.T @ X + np.diag(1.0 / dinv)
    cov = np.linalg.inv(Sigma)
    return cov @ X.T @ y, sigma**2 * cov


@pytest.fixture
def problem(rng):
    n, p = 4, 3
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    dinv = np.array([0.5, 2.0, 0.05])
    return X, y, dinv


class TestLinear:
    def test_zero_noise_gives_mean(self, problem):
        X, y, dinv = problem
        buf = WorkBuffers.allocate(*X.shape)
        beta = sample_beta_linear(X, dinv, y, 1.3, m_inverse(X, dinv), None, buf,
                                  r=np.zeros(3), xi=np.zeros(4))
        mean, _ = posterior(X, dinv, y, 1.3)
        np.testing.assert_allclose(beta, mean, rtol=1e-10)

    def test_zero_design_is_prior(self, rng):
        dinv = np.array([1.0, 4.0, 0.25])
        r = rng.standard_normal(3)
        buf = WorkBuffers.allocate(2, 3)
        beta = sample_beta_linear(np.zeros((2, 3)), dinv, np.ones(2), 2.0, np.eye(2), None, buf,
                                  r=r, xi=rng.standard_normal(2))
        np.testing.assert_allclose(beta, 2.0 * np.sqrt(dinv) * r)

    def test_callable_inverse(self, problem, rng):
        X, y, dinv = problem
        inv = m_inverse(X, dinv)
        buf = WorkBuffers.allocate(*X.shape)
        r, xi = rng.standard_normal(3), rng.standard_normal(4)
        a = sample_beta_linear(X, dinv, y, 0.7, inv, None, buf, r=r, xi=xi)
        b = sample_beta_linear(X, dinv, y, 0.7, lambda v: inv @ v, None, buf, r=r, xi=xi)
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_dense_agrees(self, rng):
        for _ in range(20):
            n, p = rng.integers(1, 8), rng.integers(1, 12)
            X = rng.standard_normal((n, p))
            y = rng.standard_normal(n)
            dinv = 10 ** rng.uniform(-2, 2, p)
            r, xi = rng.standard_normal(p), rng.standard_normal(n)
            buf = WorkBuffers.allocate(n, p)
            fast = sample_beta_linear(X, dinv, y, 1.1, m_inverse(X, dinv), None, buf, r=r, xi=xi)
            dense = sample_beta_dense_linear(X, X.T @ X, dinv, y, 1.1, None, buf, r=r, xi=xi)
            np.testing.assert_allclose(fast, dense, rtol=1e-8, atol=1e-10)

    def test_draw_order(self, problem):
        # p normals for r, then n for xi
        X, y, dinv = problem
        buf = WorkBuffers.allocate(*X.shape)
        a = sample_beta_linear(X, dinv, y, 1.0, m_inverse(X, dinv), RngStream(5), buf)
        g = RngStream(5)
        r = g._normals(3).copy()
        xi = g._normals(4).copy()
        b = sample_beta_linear(X, dinv, y, 1.0, m_inverse(X, dinv), None, buf, r=r, xi=xi)
        np.testing.assert_array_equal(a, b)

    def test_moments(self, problem):
        X, y, dinv = problem
        sigma = 0.8
        inv = m_inverse(X, dinv)
        buf = WorkBuffers.allocate(*X.shape)
        rng = RngStream(11)
        N = 200_000
        draws = np.empty((N, 3))
        for i in range(N):
            draws[i] = sample_beta_linear(X, dinv, y, sigma, inv, rng, buf)
        mean, cov = posterior(X, dinv, y, sigma)
        se = np.sqrt(np.diag(cov) / N)
        assert np.all(np.abs(draws.mean(axis=0) - mean) <= 3 * se)
        emp = np.cov(draws.T)
        # var of a sample covariance entry: (s_ij^2 + s_ii s_jj) / N
        se_cov = np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / N)
        assert np.all(np.abs(emp - cov) <= 3 * se_cov)

    @pytest.mark.parametrize("which", ["dinv", "y", "buf"])
    def test_dimension_errors(self, problem, which):
        X, y, dinv = problem
        buf = WorkBuffers.allocate(*X.shape)
        if which == "dinv":
            dinv = dinv[:2]
        elif which == "y":
            y = y[:3]
        else:
            buf = WorkBuffers.allocate(4, 5)
        with pytest.raises(DimensionError):
            sample_beta_linear(X, dinv, y, 1.0, np.eye(4), RngStream(0), buf)


class TestWeighted:
    def test_unit_weights_match_linear(self, problem, rng):
        X, y, dinv = problem
        buf = WorkBuffers.allocate(*X.shape)
        r, xi = rng.standard_normal(3), rng.standard_normal(4)
        inv = m_inverse(X, dinv)
        a = sample_beta_weighted(X, dinv, np.ones(4), y, inv, None, buf, r=r, xi=xi)
        b = sample_beta_linear(X, dinv, y, 1.0, inv, None, buf, r=r, xi=xi)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_dense_agrees(self, rng):
        for _ in range(20):
            n, p = rng.integers(1, 8), rng.integers(1, 12)
            X = rng.standard_normal((n, p))
            yt = rng.standard_normal(n)
            dinv = 10 ** rng.uniform(-2, 2, p)
            winv = rng.uniform(0.1, 5, n)
            r, xi = rng.standard_normal(p), rng.standard_normal(n)
            buf = WorkBuffers.allocate(n, p)
            fast = sample_beta_weighted(X, dinv, winv, yt, m_inverse(X, dinv, winv), None, buf,
                                        r=r, xi=xi)
            dense = sample_beta_dense_weighted(X, dinv, winv, yt, None, buf, r=r, xi=xi)
            np.testing.assert_allclose(fast, dense, rtol=1e-8, atol=1e-10)

    def test_zero_noise_gives_mean(self, problem):
        X, y, dinv = problem
        winv = np.array([0.5, 1.0, 2.0, 4.0])
        buf = WorkBuffers.allocate(*X.shape)
        beta = sample_beta_weighted(X, dinv, winv, y, m_inverse(X, dinv, winv), None, buf,
                                    r=np.zeros(3), xi=np.zeros(4))
        Sigma = X.T @ (X * winv[:, None]) + np.diag(1 / dinv)
        np.testing.assert_allclose(beta, np.linalg.solve(Sigma, X.T @ (winv * y)), rtol=1e-10)

    def test_weight_shape(self, problem):
        X, y, dinv = problem
        with pytest.raises(DimensionError):
            sample_beta_weighted(X, dinv, np.ones(3), y, np.eye(4), RngStream(0),
                                 WorkBuffers.allocate(4, 3))
