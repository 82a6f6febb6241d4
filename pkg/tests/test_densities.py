import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import logsumexp
from scipy.stats import norm

from permvi.densities import (
    MallowsModel,
    RelaxedPermutationPrior,
    footrule_distance,
    mallows_fit_center,
    mallows_logpmf,
    mallows_mcmc,
    relaxed_prior_logpdf,
)
from permvi.errors import DimensionMismatch
from permvi.perm_core import PosteriorHistogram, enumerate_permutations, perm_to_matrix


def test_prior_matches_scipy_mixture():
    rng = np.random.default_rng(0)
    X = rng.uniform(-0.5, 1.5, (3, 3))
    eta = 0.4
    ref = np.log(0.5 * norm.pdf(X, 0, eta) + 0.5 * norm.pdf(X, 1, eta)).sum()
    assert relaxed_prior_logpdf(X, eta) == pytest.approx(ref, rel=1e-12)


def test_prior_coordinate_integrates_to_one():
    f = lambda x: math.exp(relaxed_prior_logpdf(np.array([[x]]), 0.3))
    total, _ = integrate.quad(f, -5, 6)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_prior_prefers_vertices():
    P = perm_to_matrix((1, 2, 0)).astype(float)
    # needs eta small enough that the two components do not merge into one hump
    assert relaxed_prior_logpdf(P, 0.25) > relaxed_prior_logpdf(np.full((3, 3), 1 / 3), 0.25)


def test_prior_gradient_finite_difference():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, (4, 4))
    _, g = relaxed_prior_logpdf(X, 0.25, return_grad=True)
    h = 1e-6
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = h
        fd = (relaxed_prior_logpdf(X + E, 0.25) - relaxed_prior_logpdf(X - E, 0.25)) / (2 * h)
        assert g[idx] == pytest.approx(fd, abs=1e-6)


def test_prior_batched():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(5, 3, 3))
    vals = relaxed_prior_logpdf(X)
    np.testing.assert_allclose(vals, [relaxed_prior_logpdf(x) for x in X])


def test_prior_rejects_bad_eta():
    with pytest.raises(ValueError):
        RelaxedPermutationPrior(0.0)


def test_footrule():
    assert footrule_distance((0, 1, 2), (0, 1, 2)) == 0
    assert footrule_distance((2, 1, 0), (0, 1, 2)) == 4
    with pytest.raises(DimensionMismatch):
        footrule_distance((0, 1), (0, 1, 2))


@given(st.integers(1, 7).flatmap(lambda n: st.tuples(st.permutations(range(n)), st.permutations(range(n)))))
def test_footrule_symmetric_and_even(pq):
    p, q = pq
    d = footrule_distance(p, q)
    assert d == footrule_distance(q, p) and d % 2 == 0


def test_mallows_normalized_pmf_sums_to_one():
    model = MallowsModel((2, 0, 1, 3), 0.7)
    total = sum(math.exp(mallows_logpmf(model, p)[0]) for p in enumerate_permutations(4))
    assert total == pytest.approx(1.0, abs=1e-12)
    assert mallows_logpmf(model, (2, 0, 1, 3))[1] is True


def test_mallows_large_n_unnormalized():
    model = MallowsModel(tuple(range(9)), 1.0)
    value, normalized = mallows_logpmf(model, tuple(range(9)))
    assert value == 0.0 and normalized is False


def test_mallows_theta_zero_is_uniform():
    model = MallowsModel((0, 1, 2), 0.0)
    assert model.log_normalizer == pytest.approx(math.log(6))


@pytest.mark.parametrize("theta", [0.3, 1.0])
def test_mallows_mcmc_matches_exact(theta):
    center = (1, 3, 0, 2)
    model = MallowsModel(center, theta)
    perms = enumerate_permutations(4)
    exact = PosteriorHistogram.from_log_weights(perms, [mallows_logpmf(model, p)[0] for p in perms])
    samples = mallows_mcmc(model, 60000, rng_seed=3)
    assert len(samples) == 54000
    emp = PosteriorHistogram.from_samples(samples)
    tv = 0.5 * sum(abs(exact.prob(p) - emp.prob(p)) for p in perms)
    assert tv < 0.03


def test_mallows_mcmc_deterministic_by_seed():
    model = MallowsModel((0, 1, 2, 3, 4), 0.5)
    assert mallows_mcmc(model, 500, 7) == mallows_mcmc(model, 500, 7)


def test_mallows_large_theta_stays_at_center():
    center = (3, 1, 0, 2)
    samples = mallows_mcmc(MallowsModel(center, 50.0), 2000, 0)
    assert set(samples) == {center}


def test_mallows_fit_center_is_ml_assignment():
    rng = np.random.default_rng(4)
    L = rng.standard_normal((5, 5))
    perms = enumerate_permutations(5)
    best = max(perms, key=lambda p: L[np.arange(5), p].sum())
    assert mallows_fit_center(L) == best


def test_logsumexp_normalizer_consistent():
    model = MallowsModel((0, 2, 1), 2.0)
    d = [footrule_distance(p, (0, 2, 1)) for p in enumerate_permutations(3)]
    assert model.log_normalizer == pytest.approx(logsumexp(-2.0 * np.array(d)))
