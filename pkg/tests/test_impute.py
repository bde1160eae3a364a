import numpy as np
import pytest
from sklearn.linear_model import BayesianRidge

from tomoforge import datagen, impute, qmc
from tomoforge.errors import AllMissingRow, DegenerateDesign


class TestBayesRidge:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_sklearn(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((150, 6)) * rng.uniform(0.1, 3, 6)
        y = X @ rng.standard_normal(6) + 0.2 * rng.standard_normal(150) - 1.5
        ours = impute.fit_bayes_ridge(X, y, tol=1e-12, max_iter=3000)
        ref = BayesianRidge(tol=1e-12, max_iter=3000).fit(X, y)
        np.testing.assert_allclose(ours.coef, ref.coef_, rtol=1e-8, atol=1e-10)
        assert ours.intercept == pytest.approx(ref.intercept_, abs=1e-9)
        assert ours.alpha == pytest.approx(ref.alpha_, rel=1e-8)
        assert ours.lambda_ == pytest.approx(ref.lambda_, rel=1e-8)
        np.testing.assert_allclose(ours.sigma, ref.sigma_, rtol=1e-7, atol=1e-14)

    def test_noise_free_linear(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((200, 5))
        w = np.array([0.5, -2.0, 1.0, 0.0, 3.0])
        m = impute.fit_bayes_ridge(X, X @ w + 0.7)
        np.testing.assert_allclose(m.coef, w, atol=1e-4)
        assert m.intercept == pytest.approx(0.7, abs=1e-4)

    def test_constant_target(self):
        X = np.random.default_rng(4).standard_normal((50, 3))
        m = impute.fit_bayes_ridge(X, np.full(50, 2.5))
        np.testing.assert_allclose(m.coef, 0.0, atol=1e-8)
        assert m.intercept == pytest.approx(2.5, abs=1e-8)

    def test_predictive_std_positive(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((80, 4))
        m = impute.fit_bayes_ridge(X, X[:, 0] + 0.1 * rng.standard_normal(80))
        _, sd = m.predict(rng.standard_normal((30, 4)) * 10, return_std=True)
        assert np.all(sd > 0)
        assert m.alpha > 0 and m.lambda_ > 0
        assert np.linalg.eigvalsh(m.sigma).min() >= -1e-15

    def test_predictive_std_grows_away_from_data(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((100, 2))
        m = impute.fit_bayes_ridge(X, X.sum(1) + 0.1 * rng.standard_normal(100))
        _, near = m.predict(X.mean(0, keepdims=True), return_std=True)
        _, far = m.predict(X.mean(0, keepdims=True) + 50, return_std=True)
        assert far[0] > near[0]

    def test_degenerate_design(self):
        with pytest.raises(DegenerateDesign):
            impute.fit_bayes_ridge(np.ones((10, 3)), np.arange(10.0))

    def test_dict_round_trip(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((40, 3))
        m = impute.fit_bayes_ridge(X, X[:, 1])
        back = impute.BayesRidgeModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.predict(X), m.predict(X))


@pytest.fixture(scope="module")
def tomo_imputer():
    p = datagen.gen_noiseless("pure", 3000, seed=10)
    m = datagen.gen_noiseless("mixed", 3000, seed=11)
    return impute.fit_imputer(np.concatenate([p.X, m.X]))


@pytest.fixture(scope="module")
def tomo_test():
    return datagen.gen_noiseless("mixed", 300, seed=12).X


class TestImputation:
    def test_no_missing_is_identity(self, tomo_imputer, tomo_test):
        np.testing.assert_array_equal(impute.mice_impute(tomo_test, tomo_imputer), tomo_test)
        np.testing.assert_array_equal(impute.impute_once(tomo_test, tomo_imputer, 0), tomo_test)

    def test_all_missing_row(self, tomo_imputer, tomo_test):
        X = tomo_test.copy()
        X[4] = np.nan
        with pytest.raises(AllMissingRow):
            impute.mice_impute(X, tomo_imputer)
        with pytest.raises(AllMissingRow):
            impute.impute_once(X, tomo_imputer)

    def test_collinear_column_recovered(self):
        rng = np.random.default_rng(13)
        Z = rng.standard_normal((500, 5))
        X = np.column_stack([Z, Z @ [1.0, -0.5, 2.0, 0.0, 0.3]])
        imp = impute.fit_imputer(X, n_iterations=15, n_seeds=4)
        Q = X[:20].copy()
        Q[:, 5] = np.nan
        out = impute.impute_once(Q, imp, stochastic=False)
        np.testing.assert_allclose(out[:, 5], X[:20, 5], atol=1e-3)

    def test_deterministic_mode_idempotent(self, tomo_imputer, tomo_test):
        masked = qmc.apply_mask(tomo_test, qmc.gen_masks(1, 4, len(tomo_test))[0])
        a = impute.impute_once(masked, tomo_imputer, stochastic=False)
        b = impute.impute_once(masked, tomo_imputer, stochastic=False)
        np.testing.assert_array_equal(a, b)

    def test_observed_cells_untouched(self, tomo_imputer, tomo_test):
        for k in (1, 10, 30):
            masked = qmc.apply_mask(tomo_test, qmc.gen_masks(1, k, len(tomo_test), 17 * k)[0])
            out = impute.mice_impute(masked, tomo_imputer, seed=k)
            obs = ~np.isnan(masked)
            np.testing.assert_array_equal(out[obs], masked[obs])
            assert np.all(np.isfinite(out))
            assert np.all((out >= 0) & (out <= 1))

    def test_pooled_is_chain_mean(self, tomo_imputer, tomo_test):
        masked = qmc.apply_mask(tomo_test[:50], qmc.gen_masks(1, 8, 50)[0])
        out, chains = impute.mice_impute(masked, tomo_imputer, seed=3, clip=None,
                                         return_chains=True)
        assert len(chains) == 4
        miss = np.isnan(masked)
        np.testing.assert_allclose(out[miss], np.mean(chains, axis=0)[miss], atol=1e-15)

    def test_seeded(self, tomo_imputer, tomo_test):
        masked = qmc.apply_mask(tomo_test[:40], qmc.gen_masks(1, 6, 40)[0])
        np.testing.assert_array_equal(impute.mice_impute(masked, tomo_imputer, seed=9),
                                      impute.mice_impute(masked, tomo_imputer, seed=9))

    def test_few_missing_near_exact(self, tomo_imputer, tomo_test):
        for k in (1, 3, 5):
            masked = qmc.apply_mask(tomo_test, qmc.gen_masks(1, k, len(tomo_test), 1000 * k)[0])
            assert qmc.mse(tomo_test, impute.mice_impute(masked, tomo_imputer)) < 1e-4

    def test_pooling_reduces_variance(self, tomo_imputer, tomo_test):
        # spread over 100 repeated imputations of the same masked cells
        masked = qmc.apply_mask(tomo_test[:20], qmc.gen_masks(1, 12, 20, 5)[0])
        miss = np.isnan(masked)
        pooled, single = [], []
        for t in range(100):
            out, chains = impute.mice_impute(masked, tomo_imputer, seed=t, return_chains=True,
                                             clip=None)
            pooled.append(out[miss])
            single.append([c[miss] for c in chains])
        pooled_var = np.var(pooled, axis=0).mean()
        chain_var = np.var(np.array(single), axis=0).mean(axis=1).max()
        assert pooled_var <= chain_var

    def test_save_load(self, tmp_path, tomo_imputer, tomo_test):
        tomo_imputer.save(tmp_path / "imp.json")
        back = impute.ImputerModel.load(tmp_path / "imp.json")
        assert back.n_features == 36
        masked = qmc.apply_mask(tomo_test[:30], qmc.gen_masks(1, 5, 30)[0])
        np.testing.assert_array_equal(impute.mice_impute(masked, back, seed=1),
                                      impute.mice_impute(masked, tomo_imputer, seed=1))

    def test_fit_requires_complete_data(self):
        X = np.random.default_rng(0).random((10, 4))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            impute.fit_imputer(X)

    def test_custom_column_order(self, tomo_imputer, tomo_test):
        rev = impute.ImputerModel(tomo_imputer.models, tomo_imputer.means, 15, 4,
                                  list(range(35, -1, -1)))
        masked = qmc.apply_mask(tomo_test[:30], qmc.gen_masks(1, 5, 30)[0])
        out = impute.impute_once(masked, rev, stochastic=False)
        assert qmc.mse(tomo_test[:30], out) < 1e-4
