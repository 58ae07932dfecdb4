import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import gammaln

from vfae import tensor as T
from vfae.distributions import (
    CategoricalDist,
    DiagGaussian,
    Likelihood,
    gaussian_log_prob_pair,
    kl_categorical_uniform,
    kl_diag_gaussian_std,
    log_prob,
    sample_reparam,
)
from vfae.tensor import DomainError, Parameter, Tensor


def gaussian(mu, log_sigma):
    return DiagGaussian(Tensor(np.asarray(mu, float)), Tensor(np.asarray(log_sigma, float)))


class TestDiagGaussian:
    def test_log_sigma_clamped(self):
        d = gaussian([[0.0, 0.0]], [[-50.0, 50.0]])
        np.testing.assert_array_equal(d.log_sigma.data, [[-7.0, 7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            gaussian(np.zeros((2, 3)), np.zeros((2, 2)))


class TestSampleReparam:
    def test_degenerate_noise_limit(self, rng):
        mu = rng.standard_normal((4, 3))
        d = gaussian(mu, np.full((4, 3), -1e6))
        eps = np.random.default_rng(7).standard_normal((4, 3))
        z = sample_reparam(d, np.random.default_rng(7)).data
        assert np.all(np.abs(z - mu) <= np.exp(-7.0) * np.abs(eps) + 1e-15)

    def test_deterministic_under_seed(self, rng):
        d = gaussian(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
        a = sample_reparam(d, np.random.default_rng(3)).data
        b = sample_reparam(d, np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)
        assert a.shape == d.mu.shape

    def test_monte_carlo_mean(self):
        n = 100_000
        mu = np.array([0.3, -1.2, 2.0])
        log_sigma = np.array([0.0, -0.5, 0.7])
        d = gaussian(np.tile(mu, (n, 1)), np.tile(log_sigma, (n, 1)))
        z = sample_reparam(d, np.random.default_rng(11)).data
        assert np.all(np.abs(z.mean(axis=0) - mu) < 4 * np.exp(log_sigma) / np.sqrt(n))

    def test_gradient_of_sample_mean_wrt_mu_is_ones(self, rng):
        mu = Parameter(rng.standard_normal((1, 4)))
        ls = Parameter(rng.standard_normal((1, 4)) * 0.1)
        z = sample_reparam(DiagGaussian(mu, ls), np.random.default_rng(0))
        T.backward(T.sum(z))
        np.testing.assert_array_equal(mu.grad, np.ones((1, 4)))


class TestKlGaussian:
    def test_identical_is_zero(self):
        assert kl_diag_gaussian_std(gaussian(np.zeros((1, 5)), np.zeros((1, 5)))).data[0] == 0.0

    def test_unit_mean(self):
        assert kl_diag_gaussian_std(gaussian([[1.0]], [[0.0]])).data[0] == pytest.approx(0.5)

    def test_monte_carlo(self):
        rng = np.random.default_rng(5)
        mu = rng.standard_normal(3)
        ls = rng.uniform(-0.5, 0.5, 3)
        analytic = kl_diag_gaussian_std(gaussian(mu[None], ls[None])).data[0]
        n = 100_000
        z = mu + np.exp(ls) * rng.standard_normal((n, 3))
        log_q = -0.5 * (((z - mu) / np.exp(ls)) ** 2 + 2 * ls + np.log(2 * np.pi)).sum(axis=1)
        log_p = -0.5 * (z**2 + np.log(2 * np.pi)).sum(axis=1)
        diff = log_q - log_p
        se = diff.std(ddof=1) / np.sqrt(n)
        assert abs(diff.mean() - analytic) < 3 * se

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
    def test_nonnegative(self, mu, ls):
        kl = kl_diag_gaussian_std(gaussian(mu, ls)).data
        assert np.all(kl >= -1e-12)


class TestKlCategorical:
    def test_uniform_is_zero(self):
        kl = kl_categorical_uniform(CategoricalDist(Tensor(np.zeros((2, 4))))).data
        np.testing.assert_allclose(kl, 0.0, atol=1e-15)

    def test_one_hot_limit(self):
        kl = kl_categorical_uniform(CategoricalDist(Tensor(np.array([[60.0, -60.0]])))).data[0]
        assert kl == pytest.approx(np.log(2.0), abs=1e-12)

    def test_direct_summation(self, rng):
        logits = rng.standard_normal((5, 4)) * 2
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        oracle = np.array([sum(pi * (np.log(pi) - np.log(0.25)) for pi in row) for row in p])
        np.testing.assert_allclose(kl_categorical_uniform(CategoricalDist(Tensor(logits))).data, oracle, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (2, 3), elements=st.floats(-30, 30)))
    def test_nonnegative_and_bounded(self, logits):
        kl = kl_categorical_uniform(CategoricalDist(Tensor(logits))).data
        assert np.all(kl >= -1e-12) and np.all(kl <= np.log(3) + 1e-12)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
    def test_softmax_sums_to_one(self, logits):
        np.testing.assert_allclose(CategoricalDist(Tensor(logits)).probs().sum(axis=1), 1.0, atol=1e-9)


class TestLikelihood:
    def test_bernoulli_half(self, rng):
        x = (rng.random((3, 6)) < 0.5).astype(float)
        lik = Likelihood("bernoulli", {"logits": Tensor(np.zeros((3, 6)))})
        np.testing.assert_allclose(log_prob(lik, x).data, 6 * np.log(0.5))

    def test_poisson_unit_rate_at_zero(self):
        lik = Likelihood("poisson", {"log_rate": Tensor(np.zeros((1, 1)))})
        assert log_prob(lik, np.zeros((1, 1))).data[0] == pytest.approx(-1.0)

    def test_gaussian_at_mean(self):
        # sigmoid(0) = 0.5 is the mean
        lik = Likelihood("gaussian_sigmoid_mean", {"mean_logits": Tensor(np.zeros((1, 4))), "log_sigma": Tensor(np.zeros((1, 4)))})
        assert log_prob(lik, np.full((1, 4), 0.5)).data[0] == pytest.approx(-0.5 * 4 * np.log(2 * np.pi))

    def test_poisson_matches_formula(self, rng):
        log_rate = rng.standard_normal((4, 3))
        x = rng.poisson(3, (4, 3)).astype(float)
        lik = Likelihood("poisson", {"log_rate": Tensor(log_rate)})
        oracle = (x * log_rate - np.exp(log_rate) - gammaln(x + 1)).sum(axis=1)
        np.testing.assert_allclose(lik.log_prob(x).data, oracle, rtol=1e-12)

    @pytest.mark.parametrize(
        "kind,x,col",
        [("bernoulli", [[0.0, 0.5, 1.0]], 1), ("poisson", [[1.0, 2.0, -1.0]], 2), ("poisson", [[1.5, 0.0, 0.0]], 0)],
    )
    def test_support_violation_names_coordinate(self, kind, x, col):
        head = "logits" if kind == "bernoulli" else "log_rate"
        lik = Likelihood(kind, {head: Tensor(np.zeros((1, 3)))})
        with pytest.raises(DomainError, match=f"column {col}"):
            lik.log_prob(np.array(x))

    def test_means_in_range(self, rng):
        t = Tensor(rng.standard_normal((4, 3)) * 5)
        assert np.all((Likelihood("bernoulli", {"logits": t}).mean() > 0) & (Likelihood("bernoulli", {"logits": t}).mean() < 1))
        assert np.all(Likelihood("poisson", {"log_rate": t}).mean() > 0)

    def test_bernoulli_normalizes(self):
        lik = Likelihood("bernoulli", {"logits": Tensor(np.array([[0.7]]))})
        total = sum(np.exp(lik.log_prob(np.array([[v]])).data[0]) for v in (0.0, 1.0))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_poisson_normalizes(self):
        grid = np.arange(0, 10_001, dtype=float)[:, None]
        lik = Likelihood("poisson", {"log_rate": Tensor(np.full((len(grid), 1), np.log(4.2)))})
        assert np.exp(lik.log_prob(grid).data).sum() == pytest.approx(1.0, abs=1e-3)

    def test_gaussian_normalizes(self):
        grid = np.linspace(-10, 11, 20_001)[:, None]
        n = len(grid)
        lik = Likelihood(
            "gaussian_sigmoid_mean",
            {"mean_logits": Tensor(np.full((n, 1), 0.3)), "log_sigma": Tensor(np.full((n, 1), np.log(0.8)))},
        )
        dens = np.exp(lik.log_prob(grid).data)
        assert np.trapezoid(dens, grid[:, 0]) == pytest.approx(1.0, abs=1e-3)


class TestGaussianLogProb:
    def test_at_mean(self, rng):
        mu = rng.standard_normal((2, 5))
        out = gaussian_log_prob_pair(gaussian(mu, np.zeros((2, 5))), mu).data
        np.testing.assert_allclose(out, -0.5 * 5 * np.log(2 * np.pi))

    def test_identity_difference(self, rng):
        d = gaussian(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)))
        z = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(gaussian_log_prob_pair(d, z).data - gaussian_log_prob_pair(d, z).data, 0.0)

    def test_direct_summation(self, rng):
        mu, ls, z = rng.standard_normal((3, 4)), rng.standard_normal((3, 4)) * 0.5, rng.standard_normal((3, 4))
        oracle = np.array(
            [
                sum(-0.5 * np.log(2 * np.pi) - ls[i, j] - 0.5 * ((z[i, j] - mu[i, j]) / np.exp(ls[i, j])) ** 2 for j in range(4))
                for i in range(3)
            ]
        )
        np.testing.assert_allclose(gaussian_log_prob_pair(gaussian(mu, ls), z).data, oracle, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            gaussian_log_prob_pair(gaussian(np.zeros((2, 2)), np.zeros((2, 2))), np.zeros((2, 3)))
