from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikeslab.errors import ConfigError, StateError
from spikeslab.linalg import spd_factor, spd_solve
from spikeslab.precompute import (
    DELTA,
    SLAB,
    SPIKE,
    audit_residual,
    commit,
    dense_M,
    init_cache,
    refresh,
    select_branch,
    splus_solve,
    update_M,
    update_M_inv,
    update_M_logistic,
    woodbury_inverse,
)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def cache_at(X, z_prev, tau0sq=0.1, tau1sq=4.0, **kw):
    return init_cache(X, tau0sq, tau1sq, z0=z_prev, **kw)


class TestInitCache:
    def test_zero_design(self):
        c = init_cache(np.zeros((3, 4)), 0.5, 2.0)
        np.testing.assert_array_equal(c.Mtilde_tau0, np.eye(3))
        np.testing.assert_array_equal(c.Mtilde_tau1, np.eye(3))

    def test_small_literal(self):
        c = init_cache(np.array([[1.0], [2.0]]), 1.0, 2.0)
        np.testing.assert_array_equal(c.Mtilde_tau0, [[2, 2], [2, 5]])

    def test_inverses(self, rng):
        X = rng.standard_normal((4, 6))
        c = init_cache(X, 0.2, 3.0)
        for M, inv in ((c.Mtilde_tau0, c.inv_Mtilde_tau0), (c.Mtilde_tau1, c.inv_Mtilde_tau1)):
            np.testing.assert_allclose(inv, spd_solve(spd_factor(M), np.eye(4)), atol=1e-9)
            assert np.linalg.norm(M @ inv - np.eye(4)) <= 1e-8 * 2

    @pytest.mark.parametrize("t0,t1", [(1.0, 1.0), (2.0, 1.0), (0.0, 1.0)])
    def test_bad_taus(self, t0, t1):
        with pytest.raises(ConfigError):
            init_cache(np.ones((2, 2)), t0, t1)

    def test_default_state_is_all_spike(self, rng):
        c = init_cache(rng.standard_normal((3, 5)), 0.1, 1.0)
        assert not c.z_prev.any()
        assert c.M_prev is c.Mtilde_tau0
        assert c.gram is None and c.sandwich0 is None

    def test_splus_blocks(self, rng):
        X = rng.standard_normal((3, 5))
        c = init_cache(X, 0.1, 1.0, splus=True)
        np.testing.assert_allclose(c.gram, X.T @ X)
        np.testing.assert_allclose(c.sandwich1, X.T @ np.linalg.solve(c.Mtilde_tau1, X), atol=1e-12)

    def test_rolling_storage(self, rng):
        # rolling state is two n x n matrices and a length-p indicator vector
        c = init_cache(rng.standard_normal((3, 5)), 0.1, 1.0)
        assert c.M_prev.shape == c.invM_prev.shape == (3, 3)
        assert c.z_prev.shape == (5,) and c.z_prev.dtype == bool


class TestSelectBranch:
    def test_unchanged(self):
        z = np.array([1, 0, 1, 0], bool)
        s = select_branch(z, z)
        assert (s.branch, s.p_t, s.delta) == (DELTA, 0, 0)

    def test_empty_slab(self):
        s = select_branch(np.zeros(10, bool), np.ones(10, bool))
        assert (s.branch, s.p_t, s.delta) == (SLAB, 0, 10)

    def test_tie_prefers_delta(self):
        s = select_branch(np.array([1, 0, 1, 0], bool), np.array([1, 1, 0, 0], bool))
        assert (s.delta, s.norm_z, s.p_t, s.branch) == (2, 2, 2, DELTA)
        assert s.tau == s.tau_prev == 2.0 and s.rho == 0.0

    def test_tie_slab_before_spike(self):
        s = select_branch(np.array([1, 1, 0, 0], bool), np.array([0, 0, 1, 1], bool))
        assert s.branch == SLAB and s.p_t == 2

    def test_spike_wins(self):
        s = select_branch(np.array([1, 1, 1, 0], bool), np.array([0, 0, 0, 0], bool))
        assert s.branch == SPIKE and s.p_t == 1

    @given(st.lists(st.booleans(), min_size=1, max_size=64), st.randoms())
    @settings(max_examples=200, deadline=None)
    def test_p_t_is_min(self, zt, rnd):
        z_t = np.array(zt)
        z_prev = np.array([rnd.random() < 0.5 for _ in zt])
        s = select_branch(z_t, z_prev)
        assert s.p_t == min(s.norm_z, s.p - s.norm_z, s.delta)
        assert s.delta == int(np.sum(z_t != z_prev))
        cost = {DELTA: s.delta, SLAB: s.norm_z, SPIKE: s.p - s.norm_z}
        assert cost[s.branch] == s.p_t


class TestUpdateM:
    def test_unchanged_returns_previous(self, rng):
        X = rng.standard_normal((4, 6))
        z = np.array([1, 0, 0, 1, 0, 0], bool)
        c = cache_at(X, z)
        s = select_branch(z, z)
        assert update_M(c, z, s) is c.M_prev
        assert update_M_inv(c, c.M_prev, z, s) is c.invM_prev

    def test_all_spike_is_fixed_matrix(self, rng):
        X = rng.standard_normal((4, 6))
        c = cache_at(X, np.ones(6, bool))
        z = np.zeros(6, bool)
        M = update_M(c, z, select_branch(z, c.z_prev))
        np.testing.assert_allclose(M, c.Mtilde_tau0, rtol=1e-12)

    def test_one_flip(self, rng):
        X = rng.standard_normal((3, 5))
        z_prev = np.array([1, 0, 0, 1, 0], bool)
        c = cache_at(X, z_prev)
        z = z_prev.copy()
        z[2] = True
        s = select_branch(z, z_prev)
        M = update_M(c, z, s)
        assert rel(M, dense_M(X, c.dinv(z))) <= 1e-10

    def test_delta_touches_delta_columns(self, rng):
        X = rng.standard_normal((5, 12))
        z_prev = np.zeros(12, bool)
        z_prev[:6] = True
        c = cache_at(X, z_prev)
        z = z_prev.copy()
        z[[0, 7]] = ~z[[0, 7]]
        s = select_branch(z, z_prev)
        assert s.branch == DELTA
        update_M(c, z, s)
        assert c.last_columns == s.delta == 2

    def test_direct_path(self, rng):
        X = rng.standard_normal((3, 6))
        c = cache_at(X, np.zeros(6, bool))
        z = np.array([1, 1, 1, 0, 0, 0], bool)
        s = select_branch(z, c.z_prev)
        assert s.p_t >= 3
        M = update_M(c, z, s)
        inv = update_M_inv(c, M, z, s)
        np.testing.assert_allclose(inv, spd_solve(spd_factor(M), np.eye(3)), rtol=1e-10, atol=1e-12)

    def test_woodbury_one_flip(self, rng):
        X = rng.standard_normal((6, 10))
        z_prev = rng.random(10) < 0.5
        c = cache_at(X, z_prev)
        z = z_prev.copy()
        z[4] = ~z[4]
        s = select_branch(z, z_prev)
        M = update_M(c, z, s)
        inv = update_M_inv(c, M, z, s)
        assert rel(inv, np.linalg.inv(dense_M(X, c.dinv(z)))) <= 1e-9


def random_pair(rng):
    n = int(rng.integers(1, 9))
    p = int(rng.integers(1, 17))
    X = rng.standard_normal((n, p))
    z_prev = rng.random(p) < rng.random()
    z = rng.random(p) < rng.random()
    tau0sq = float(10 ** rng.uniform(-2, 0))
    tau1sq = tau0sq * float(10 ** rng.uniform(0.5, 3))
    return X, z_prev, z, tau0sq, tau1sq


class TestBranchEquivalence:
    @pytest.mark.parametrize("seed", range(40))
    def test_three_expressions_agree(self, seed):
        rng = np.random.default_rng(seed)
        X, z_prev, z, t0, t1 = random_pair(rng)
        c = init_cache(X, t0, t1, z0=z_prev)
        s = select_branch(z, z_prev)
        Ms = {b: update_M(c, z, replace(s, branch=b)) for b in (SLAB, SPIKE, DELTA)}
        dense = dense_M(X, c.dinv(z))
        for b, M in Ms.items():
            assert rel(M, dense) <= 1e-9, b
        dense_inv = np.linalg.inv(dense)
        for b in (SLAB, SPIKE, DELTA):
            assert rel(woodbury_inverse(c, z, b), dense_inv) <= 1e-8, b

    @pytest.mark.parametrize("seed", range(20))
    def test_logistic_expressions_agree(self, seed):
        rng = np.random.default_rng(1000 + seed)
        X, z_prev, z, t0, t1 = random_pair(rng)
        n = X.shape[0]
        W_prev, W = rng.uniform(0.3, 3.0, n), rng.uniform(0.3, 3.0, n)
        c = init_cache(X, t0, t1, z0=z_prev, W0=W_prev)
        s = select_branch(z, z_prev)
        dense = dense_M(X, c.dinv(z), W)
        for b in (SLAB, SPIKE, DELTA):
            M = update_M_logistic(c, z, W, W_prev, replace(s, branch=b))
            assert rel(M, dense) <= 1e-9, b


class TestLogistic:
    def test_unit_weights_reduce_to_linear(self, rng):
        X = rng.standard_normal((4, 7))
        z = rng.random(7) < 0.5
        c = init_cache(X, 0.1, 2.0, z0=z, W0=np.ones(4))
        s = select_branch(z, z)
        np.testing.assert_allclose(update_M_logistic(c, z, np.ones(4), np.ones(4), s),
                                   dense_M(X, c.dinv(z)), rtol=1e-12)

    def test_zero_design(self, rng):
        c = init_cache(np.zeros((3, 5)), 0.1, 2.0, W0=np.ones(3))
        z = rng.random(5) < 0.5
        M = update_M_logistic(c, z, rng.uniform(1, 2, 3), np.ones(3), select_branch(z, c.z_prev))
        np.testing.assert_allclose(M, np.eye(3), atol=1e-15)

    def test_two_flips_new_weights(self, rng):
        X = rng.standard_normal((4, 7))
        z_prev = np.array([1, 0, 0, 1, 0, 0, 1], bool)
        W_prev = rng.uniform(0.5, 2, 4)
        c = init_cache(X, 0.1, 2.0, z0=z_prev, W0=W_prev)
        z = z_prev.copy()
        z[[1, 3]] = ~z[[1, 3]]
        W = rng.uniform(0.5, 2, 4)
        s = select_branch(z, z_prev)
        assert s.branch == DELTA
        assert rel(update_M_logistic(c, z, W, W_prev, s), dense_M(X, c.dinv(z), W)) <= 1e-9

    def test_weighted_cache_rejected_by_linear_update(self, rng):
        c = init_cache(rng.standard_normal((3, 4)), 0.1, 2.0, W0=np.ones(3))
        z = np.zeros(4, bool)
        with pytest.raises(StateError):
            update_M(c, z, select_branch(z, z))

    def test_nonpositive_weight(self, rng):
        c = init_cache(rng.standard_normal((3, 4)), 0.1, 2.0, W0=np.ones(3))
        z = np.zeros(4, bool)
        with pytest.raises(StateError):
            update_M_logistic(c, z, np.array([1.0, 0.0, 1.0]), np.ones(3), select_branch(z, z))


class TestSplus:
    def test_all_spike(self, rng):
        X = rng.standard_normal((5, 9))
        c = init_cache(X, 0.1, 2.0, splus=True)
        r = rng.standard_normal(5)
        np.testing.assert_allclose(splus_solve(c, np.zeros(9, bool), r), c.inv_Mtilde_tau0 @ r)

    def test_zero_rhs(self, rng):
        c = init_cache(rng.standard_normal((5, 9)), 0.1, 2.0, splus=True)
        z = rng.random(9) < 0.3
        np.testing.assert_array_equal(splus_solve(c, z, np.zeros(5)), np.zeros(5))

    @pytest.mark.parametrize("k", [2, 7, 9])
    def test_dense_oracle(self, rng, k):
        X = rng.standard_normal((5, 9))
        c = init_cache(X, 0.1, 2.0, splus=True)
        z = np.zeros(9, bool)
        z[rng.permutation(9)[:k]] = True
        r = rng.standard_normal(5)
        ref = np.linalg.solve(dense_M(X, c.dinv(z)), r)
        np.testing.assert_allclose(splus_solve(c, z, r), ref, rtol=1e-9, atol=1e-12)

    def test_large_split_factorizes(self, rng):
        X = rng.standard_normal((3, 12))
        c = init_cache(X, 0.1, 2.0, splus=True)
        z = np.zeros(12, bool)
        z[:6] = True
        r = rng.standard_normal(3)
        np.testing.assert_allclose(splus_solve(c, z, r), np.linalg.solve(dense_M(X, c.dinv(z)), r),
                                   rtol=1e-9)

    def test_requires_splus_cache(self, rng):
        c = init_cache(rng.standard_normal((3, 4)), 0.1, 2.0)
        with pytest.raises(ConfigError):
            splus_solve(c, np.zeros(4, bool), np.ones(3))


class TestRefresh:
    def test_fresh_residual(self, rng):
        X = rng.standard_normal((6, 20))
        c = init_cache(X, 0.05, 30.0)
        z = rng.random(20) < 0.4
        refresh(c, z)
        assert audit_residual(c) <= 1e-10 * np.sqrt(6)

    def test_same_z_same_matrix(self, rng):
        X = rng.standard_normal((4, 8))
        z = rng.random(8) < 0.5
        c = init_cache(X, 0.05, 3.0, z0=z)
        M = c.M_prev.copy()
        refresh(c, z)
        np.testing.assert_allclose(c.M_prev, M, rtol=1e-12)

    def test_long_run_drift(self):
        rng = np.random.default_rng(3)
        n, p = 10, 40
        X = rng.standard_normal((n, p))
        c = init_cache(X, 0.01, 500.0, refresh_period=500)
        z = np.zeros(p, bool)
        worst = 0.0
        for t in range(2000):
            z_new = z.copy()
            flips = rng.integers(0, p, size=rng.integers(0, 4))
            z_new[flips] = ~z_new[flips]
            s = select_branch(z_new, c.z_prev)
            M = update_M(c, z_new, s)
            inv = update_M_inv(c, M, z_new, s)
            commit(c, z_new, M, inv)
            z = z_new
            if t % 50 == 0:
                worst = max(worst, audit_residual(c))
                assert np.linalg.norm(M @ inv - np.eye(n)) <= 1e-6 * np.sqrt(n)
        assert worst <= 1e-6 * np.sqrt(n)
        assert c.refreshes >= 4

    def test_commit_tracks_iterations(self, rng):
        X = rng.standard_normal((3, 6))
        c = init_cache(X, 0.1, 2.0, refresh_period=3)
        z = np.zeros(6, bool)
        for _ in range(6):
            s = select_branch(z, c.z_prev)
            M = update_M(c, z, s)
            commit(c, z, M, update_M_inv(c, M, z, s))
        assert c.refreshes == 2


class TestFallback:
    def setup_case(self, rng):
        X = rng.standard_normal((6, 12))
        c = init_cache(X, 0.1, 5.0)
        z = np.zeros(12, bool)
        z[3] = True
        s = select_branch(z, c.z_prev)
        return c, z, s, update_M(c, z, s)

    def test_inaccurate_woodbury_is_replaced(self, rng, monkeypatch, caplog):
        import spikeslab.precompute as pc

        c, z, s, M = self.setup_case(rng)
        good = pc.woodbury_inverse(c, z, s.branch)
        monkeypatch.setattr(pc, "woodbury_inverse", lambda *a: good * (1 + 1e-6))
        with caplog.at_level("INFO", logger=pc.log.name):
            inv = update_M_inv(c, M, z, s)
        assert c.fallbacks == 1
        assert "backward error" in caplog.text
        assert np.linalg.norm(M @ inv - np.eye(6)) <= 1e-12 * 6

    def test_singular_core_is_replaced(self, rng, monkeypatch):
        import spikeslab.precompute as pc

        c, z, s, M = self.setup_case(rng)

        def boom(*a):
            raise np.linalg.LinAlgError("singular core")

        monkeypatch.setattr(pc, "woodbury_inverse", boom)
        inv = update_M_inv(c, M, z, s)
        assert c.fallbacks == 1
        np.testing.assert_allclose(inv, np.linalg.inv(M), rtol=1e-9)

    def test_accurate_woodbury_kept(self, rng):
        c, z, s, M = self.setup_case(rng)
        update_M_inv(c, M, z, s)
        assert c.fallbacks == 0
