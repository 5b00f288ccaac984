import numpy as np
import pytest

from cpbs import (
    Cluster,
    ClusteredDataset,
    ModelParams,
    em_fit,
    gcd_one_step,
    pearson_residuals,
    posterior_moments,
    simulate_dataset,
    simulated_envelopes,
)
from cpbs.data import PHI_FLOOR
from cpbs.estimation import EmConfig
from conftest import S5_TRUTH


class TestPearsonResiduals:
    def test_zero_at_fitted_mean(self):
        X = np.array([[1.0], [1.0]])
        params = ModelParams(beta=np.array([0.0]), phi=0.4)
        lam = 1.0 * (1 + 0.4**2 / 2)
        # pick counts equal to the fitted mean is impossible for integers;
        # check the formula algebraically instead
        data = ClusteredDataset((Cluster(id="a", y=np.array([1, 3]), X=X),))
        res = pearson_residuals(data, params)
        np.testing.assert_allclose(res.lambda_hat, lam, rtol=1e-14)
        np.testing.assert_allclose(
            res.r, (np.array([1, 3]) - lam) / np.sqrt(res.sigma2_hat), rtol=1e-14
        )
        assert res.r[0] * res.r[1] < 0  # straddles the mean

    def test_floor_reduces_to_poisson_residual(self):
        rng = np.random.default_rng(2)
        X = np.column_stack([np.ones(10), rng.normal(size=10)])
        y = rng.poisson(1.0, size=10)
        data = ClusteredDataset((Cluster(id="a", y=y, X=X),))
        params = ModelParams(beta=np.array([0.1, 0.2]), phi=PHI_FLOOR)
        res = pearson_residuals(data, params)
        mu = np.exp(X @ params.beta)
        np.testing.assert_allclose(res.r, (y - mu) / np.sqrt(mu), rtol=1e-9)

    def test_large_sample_moments(self):
        # many clusters so the cluster-level effects average out in the
        # sample moments; n = 2100 total
        data = simulate_dataset(70, 30, S5_TRUTH, seed=414)
        res = pearson_residuals(data, S5_TRUTH)
        assert -0.05 < res.r.mean() < 0.05
        assert 0.8 < res.r.var() < 1.2

    def test_variance_identity(self):
        rng = np.random.default_rng(6)
        data = simulate_dataset(3, 20, S5_TRUTH, seed=88)
        for _ in range(5):
            params = ModelParams(beta=rng.normal(size=3), phi=float(rng.uniform(0.05, 1.5)))
            res = pearson_residuals(data, params)
            mu = np.exp(data.X_stacked @ params.beta)
            np.testing.assert_allclose(
                res.sigma2_hat - res.lambda_hat,
                (mu * params.phi) ** 2 * (1 + 1.25 * params.phi**2),
                rtol=1e-12,
            )


class TestSimulatedEnvelopes:
    def test_bit_identical_given_seed(self, s5_small, s5_small_fit):
        b1 = simulated_envelopes(s5_small, s5_small_fit, m=25, seed=9)
        b2 = simulated_envelopes(s5_small, s5_small_fit, m=25, seed=9)
        assert np.array_equal(b1.lo, b2.lo)
        assert np.array_equal(b1.hi, b2.hi)
        assert b1.coverage == b2.coverage

    def test_worker_independence(self, s5_small, s5_small_fit):
        b1 = simulated_envelopes(s5_small, s5_small_fit, m=22, seed=4, workers=1)
        b2 = simulated_envelopes(s5_small, s5_small_fit, m=22, seed=4, workers=2)
        assert np.array_equal(b1.lo, b2.lo)
        assert np.array_equal(b1.hi, b2.hi)

    def test_band_ordering_and_coverage(self, s5_small, s5_small_fit):
        bands = simulated_envelopes(s5_small, s5_small_fit, m=30, seed=77)
        assert np.all(bands.lo <= bands.hi)
        assert np.all(np.diff(bands.sorted_r) >= 0)
        assert 0.0 <= bands.coverage <= 1.0
        assert bands.sorted_r.shape == (s5_small.n,)

    def test_self_consistency_coverage(self, s5_small, s5_small_fit):
        bands = simulated_envelopes(s5_small, s5_small_fit, m=60, seed=123)
        assert bands.coverage >= 0.90

    def test_m_floor(self, s5_small, s5_small_fit):
        with pytest.raises(ValueError):
            simulated_envelopes(s5_small, s5_small_fit, m=10, seed=0)

    def test_bands_widen_with_dispersion(self):
        # matched design, fits pinned at increasing dispersion: the tail
        # band width grows
        data = simulate_dataset(4, 50, S5_TRUTH, seed=2027)
        tail_w, mean_w = [], []
        for phi in (0.1, 0.3, 0.6):
            params = ModelParams(beta=S5_TRUTH.beta, phi=phi)
            bands = simulated_envelopes(data, params, m=80, seed=5)
            k = data.n // 5
            tail_w.append(float(np.mean((bands.hi - bands.lo)[-k:])))
            mean_w.append(float(np.mean(bands.hi - bands.lo)))
        assert tail_w[0] < tail_w[1] < tail_w[2]
        assert mean_w[0] < mean_w[1] < mean_w[2]


class TestGcdOneStep:
    def test_zero_when_score_residual_zero(self):
        X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        params = ModelParams(beta=np.array([0.0, 0.0]), phi=0.3)
        # choose delta so the first observation's fitted value equals y
        data = ClusteredDataset((Cluster(id="a", y=np.array([2, 1, 0]), X=X),))
        infl = gcd_one_step(data, params, delta=np.array([2.0]))
        assert infl.a[0] == pytest.approx(0.0, abs=1e-14)
        assert infl.gcd1[0] == pytest.approx(0.0, abs=1e-14)

    def test_nonnegative(self, s5_small, s5_small_fit):
        delta = posterior_moments(s5_small, s5_small_fit.params).delta
        infl = gcd_one_step(s5_small, s5_small_fit, delta)
        assert np.all(infl.gcd1 >= 0.0)

    def test_reorder_invariance(self, s5_small, s5_small_fit):
        delta = posterior_moments(s5_small, s5_small_fit.params).delta
        infl = gcd_one_step(s5_small, s5_small_fit, delta)
        rng = np.random.default_rng(3)
        perms, shuffled = [], []
        for c in s5_small.clusters:
            p = rng.permutation(c.n)
            perms.append(p)
            shuffled.append(Cluster(id=c.id, y=c.y[p], X=c.X[p]))
        data2 = ClusteredDataset(tuple(shuffled))
        infl2 = gcd_one_step(data2, s5_small_fit, delta)
        pos = 0
        for c, p in zip(s5_small.clusters, perms):
            np.testing.assert_array_equal(
                infl.gcd1[pos : pos + c.n][p], infl2.gcd1[pos : pos + c.n]
            )
            pos += c.n

    def test_exact_deletion_oracle_rank_correlation(self):
        from scipy.stats import spearmanr

        data = simulate_dataset(2, 20, S5_TRUTH, seed=515)
        fit = em_fit(data)
        assert fit.converged and not fit.phi_at_floor
        delta = posterior_moments(data, fit.params).delta
        infl = gcd_one_step(data, fit, delta)

        # oracle: full leave-one-out refits and the exact quadratic form
        mu = np.exp(data.X_stacked @ fit.params.beta)
        g = np.repeat(delta, data.sizes) * mu
        X = data.X_stacked
        M = X.T @ (X * g[:, None])  # -Qdd at the fitted coefficients
        exact = np.empty(data.n)
        pos = 0
        for k, c in enumerate(data.clusters):
            for j in range(c.n):
                keep = np.ones(c.n, dtype=bool)
                keep[j] = False
                cl = [
                    Cluster(id=cc.id, y=cc.y[keep] if i == k else cc.y, X=cc.X[keep] if i == k else cc.X)
                    for i, cc in enumerate(data.clusters)
                ]
                refit = em_fit(ClusteredDataset(tuple(cl)), config=EmConfig(init=fit.params))
                d = refit.params.beta - fit.params.beta
                exact[pos] = d @ M @ d
                pos += 1
        rho = spearmanr(infl.gcd1, exact).statistic
        assert rho > 0.9
