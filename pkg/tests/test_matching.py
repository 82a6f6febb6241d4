import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permvi.errors import DimensionTooLarge
from permvi.experiments.matching import (
    MatchingConfig,
    MatchingModel,
    matching_exact_posterior,
    matching_generate,
    matching_relaxed_logjoint,
    rounded_histogram,
    run_matching_experiment,
    run_matching_repetition,
)
from permvi.perm_core import perm_to_matrix
from permvi.transforms import RoundingParams


def test_generate_shapes_and_truth():
    m = matching_generate(5, 0.1, 3, center_scale=3.5)
    assert m.centers.shape == m.observations.shape == (5, 2)
    assert sorted(m.true_perm) == list(range(5))
    resid = m.observations - m.centers[list(m.true_perm)]
    assert np.abs(resid).max() < 1.0
    assert (m.centers >= 0).all() and (m.centers <= 3.5).all()


def test_generate_rejects_bad_input():
    with pytest.raises(ValueError):
        matching_generate(1, 0.1, 0)
    with pytest.raises(ValueError):
        MatchingModel(np.zeros((3, 2)), 0.0, np.zeros((3, 2)))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.05, 2.0))
def test_exact_posterior_sums_to_one(n, seed, sigma):
    post = matching_exact_posterior(matching_generate(n, sigma, seed))
    assert abs(post.mass.sum() - 1.0) < 1e-10
    assert len(post.support) == math.factorial(n)


def test_exact_posterior_matches_direct_likelihood():
    m = matching_generate(4, 0.4, 11)
    post = matching_exact_posterior(m)
    logw = []
    for phi in post.support:
        mu = m.centers[list(phi)]
        logw.append(-0.5 * ((m.observations - mu) ** 2).sum() / m.sigma**2)
    w = np.exp(np.array(logw) - max(logw))
    np.testing.assert_allclose(post.mass, w / w.sum(), atol=1e-12)


def test_identical_centers_give_uniform_posterior():
    centers = np.ones((4, 2))
    m = MatchingModel(centers, 0.3, centers + np.random.default_rng(0).normal(size=(4, 2)))
    post = matching_exact_posterior(m)
    np.testing.assert_allclose(post.mass, 1 / 24, atol=1e-12)


def test_exact_posterior_refuses_large_n():
    with pytest.raises(DimensionTooLarge):
        matching_exact_posterior(matching_generate(9, 0.1, 0))


def test_low_noise_posterior_concentrates_on_truth():
    m = matching_generate(5, 0.01, 4, center_scale=3.5)
    post = matching_exact_posterior(m)
    assert post.prob(m.true_perm) > 0.99


@pytest.mark.parametrize("eta", [None, 0.5])
def test_relaxed_logjoint_gradient(eta):
    m = matching_generate(4, 0.3, 2)
    X = np.random.default_rng(1).uniform(0.05, 0.5, (4, 4))
    _, g = matching_relaxed_logjoint(m, X, eta)
    h = 1e-6
    num = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        e = np.zeros_like(X)
        e[idx] = h
        num[idx] = (matching_relaxed_logjoint(m, X + e, eta)[0]
                    - matching_relaxed_logjoint(m, X - e, eta)[0]) / (2 * h)
    np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-6)


def test_relaxed_logjoint_batches():
    m = matching_generate(3, 0.3, 2)
    X = np.random.default_rng(1).uniform(0, 1, (5, 3, 3))
    v, g = matching_relaxed_logjoint(m, X)
    for s in range(5):
        vs, gs = matching_relaxed_logjoint(m, X[s])
        assert v[s] == pytest.approx(vs)
        np.testing.assert_allclose(g[s], gs)


def test_relaxed_logjoint_at_vertex_equals_exact_likelihood():
    m = matching_generate(4, 0.3, 5)
    phi = (2, 0, 3, 1)
    v, _ = matching_relaxed_logjoint(m, perm_to_matrix(phi).astype(float), eta=None)
    assert v == pytest.approx(m.loglik_matrix()[np.arange(4), list(phi)].sum())


def test_rounded_histogram_of_sharp_rounding_params():
    P = perm_to_matrix((1, 2, 0)).astype(float)
    params = RoundingParams(P * 50 + 1e-3, np.full((3, 3), 1e-3), 0.5, v_bounds=(1e-4, 1.0))
    hist = rounded_histogram(params, 200, 0)
    assert hist.prob((1, 2, 0)) == 1.0


def test_repetition_row_contract():
    cfg = MatchingConfig(repetitions=1, steps=5, eval_samples=50, mallows_thetas=(0.1, 2.0),
                         mallows_steps=200)
    rows, traces = run_matching_repetition(cfg, 0.5, 0, 0)
    assert [r[0] for r in rows] == ["stick-breaking", "rounding", "mallows(theta=0.1)",
                                    "mallows(theta=2)"]
    for _, bd, bd_log, ms in rows:
        assert 0 <= bd <= 1 and bd_log >= 0 and ms >= 0
        assert bd == pytest.approx(math.sqrt(1 - math.exp(-bd_log)))
    assert set(traces) == {"stick-breaking", "rounding"}
    assert all(len(t) == 5 for t in traces.values())


def test_experiment_is_deterministic_and_order_independent():
    cfg = MatchingConfig(repetitions=2, sigmas=(0.25,), steps=4, eval_samples=30,
                         mallows_thetas=(0.5,), mallows_steps=100)
    a = run_matching_experiment(cfg, metrics=("bd", "bd_log"))
    b = run_matching_experiment(cfg, metrics=("bd", "bd_log"), map_fn=lambda f, xs: list(map(f, xs)))
    assert [(r.label, r.metric, r.values) for r in a] == [(r.label, r.metric, r.values) for r in b]
    assert {r.metric for r in a} == {"bd", "bd_log"}
    assert all(len(r.values) == 2 for r in a)
