import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from refjournals import HypergeometricEM, PoissonBinomialHMC
from refjournals.exceptions import DataError
from refjournals.synthetic import make_synthetic


@pytest.fixture(scope="module")
def data():
    d = make_synthetic(15, 4, 30, seed=6)
    return d.counts.counts, np.array([p.y4 for p in d.profiles]), d


class TestParams:
    @pytest.mark.parametrize("cls", [PoissonBinomialHMC, HypergeometricEM])
    def test_clone_round_trip(self, cls):
        est = cls(seed=5)
        c = clone(est)
        assert c.get_params() == est.get_params() and c is not est

    def test_set_params(self):
        est = PoissonBinomialHMC().set_params(chains=2, warmup=50)
        assert est.chains == 2 and est.warmup == 50

    def test_not_fitted(self, data):
        with pytest.raises(NotFittedError):
            HypergeometricEM().predict(data[0])


class TestHypergeometricEM:
    def test_fit_predict(self, data):
        X, y, d = data
        est = HypergeometricEM(reference=3).fit(X, y)
        assert est.pi_.shape == (4,) and est.n_features_in_ == 4
        np.testing.assert_allclose(est.predict(X), X @ est.pi_)
        np.testing.assert_allclose(est.coef_, np.log(est.pi_ / (1 - est.pi_)), atol=1e-10)
        assert est.result_.fit.beta_hat[3] == 0

    def test_rejects_non_counts(self, data):
        X, y, _ = data
        with pytest.raises(DataError):
            HypergeometricEM().fit(X + 0.5, y)
        with pytest.raises(DataError):
            HypergeometricEM().fit(-X, y)
        est = HypergeometricEM().fit(X, y)
        with pytest.raises(DataError):
            est.predict(X[:, :3])


class TestPoissonBinomialHMC:
    def test_fit_predict(self, data):
        X, y, d = data
        est = PoissonBinomialHMC(chains=2, warmup=150, samples=100, seed=1).fit(X, y)
        assert est.pi_.shape == (4,)
        assert est.pi_draws().shape == (200, 4)
        assert set(est.summary_) >= {"pi[0]", "mu", "gamma", "alpha"}
        np.testing.assert_allclose(est.predict(X), X @ est.pi_)
        assert np.all((est.pi_ > 0) & (est.pi_ < 1))
        assert est.draws_.n_divergent == 0

    def test_short_run_skips_diagnostics(self, data):
        X, y, _ = data
        est = PoissonBinomialHMC(chains=1, warmup=20, samples=10, seed=2).fit(X, y)
        assert np.isnan(est.summary_["pi[0]"].rhat)

    def test_deterministic(self, data):
        X, y, _ = data
        a = PoissonBinomialHMC(chains=1, warmup=30, samples=20, seed=3).fit(X, y)
        b = clone(a).fit(X, y)
        assert np.array_equal(a.draws_.draws, b.draws_.draws)
