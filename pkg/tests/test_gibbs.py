import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pertgibbs.factor_graph import Factor, FactorGraph, gibbs_measure
from pertgibbs.gibbs import gibbs_kernel, gibbs_step, restricted_kernel, softmax
from pertgibbs.measures import StochasticKernel, conditional_marginal, stationary_distribution
from pertgibbs.random_models import random_factor_graph

from conftest import ALPHA, chain3, chi2_pvalue, ising_pair


def test_softmax():
    assert np.allclose(softmax([0, 0]), [0.5, 0.5])
    assert np.allclose(softmax([1000.0, 0.0]), [1.0, 0.0])
    assert np.array_equal(softmax([0.0, -np.inf]), [1.0, 0.0])
    with pytest.raises(ValueError):
        softmax([-np.inf, -np.inf])


def test_step_is_single_site(rng):
    g = chain3()
    sigma = (0, 1, 0)
    for _ in range(500):
        new = gibbs_step(g, sigma, rng)
        assert sum(a != b for a, b in zip(sigma, new)) <= 1
        sigma = new


def test_step_no_factors_uniform(rng):
    g = FactorGraph(["v"], 3)
    xs = [gibbs_step(g, (0,), rng)[0] for _ in range(30000)]
    assert chi2_pvalue(xs, [1 / 3] * 3) > ALPHA


def test_step_conditional_two_spin(rng):
    g = ising_pair(0.5)
    p_plus = math.exp(0.5) / (math.exp(0.5) + math.exp(-0.5))
    assert p_plus == pytest.approx(0.731059, abs=1e-6)
    # from (a=-, b=+), a moves to + with probability p_plus / 2
    hits = [gibbs_step(g, (0, 1), rng) for _ in range(100000)]
    K = gibbs_kernel(g)
    assert K.rows[g.space.position((0, 1)), g.space.position((1, 1))] == pytest.approx(p_plus / 2)
    idx = [g.space.position(s) for s in hits]
    assert chi2_pvalue(idx, K.rows[g.space.position((0, 1))]) > ALPHA


def test_step_strong_field(rng):
    g = FactorGraph(["v"], 2, [Factor(("v",), [-10.0, 10.0])])
    p = softmax(g.local_log_weights((0,), "v"))
    assert p[1] > 1 - 1e-8


def test_kernel_example():
    K = gibbs_kernel(ising_pair(0.5))
    sp = ising_pair(0.5).space
    assert np.allclose(K.rows.sum(axis=1), 1)
    # (+,+) -> (-,+)
    val = K.rows[sp.position((1, 1)), sp.position((0, 1))]
    assert val == pytest.approx(0.5 * (1 - 0.7310585786300049), abs=1e-15)
    assert val == pytest.approx(0.134471, abs=1e-6)


def test_kernel_stationary_and_reversible():
    g = chain3()
    mu = gibbs_measure(g).mass
    Q = gibbs_kernel(g).rows
    assert np.abs(mu @ Q - mu).max() <= 1e-12
    flow = mu[:, None] * Q
    assert np.abs(flow - flow.T).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(2, 5))
def test_kernel_stationary_random(seed, q, k):
    rng = np.random.default_rng(seed)
    g = random_factor_graph(k, q, rng)
    mu = gibbs_measure(g).mass
    Q = gibbs_kernel(g).rows
    assert np.abs(mu @ Q - mu).max() <= 1e-12
    flow = mu[:, None] * Q
    assert np.abs(flow - flow.T).max() <= 1e-12


def test_kernel_rows_match_steps(rng):
    g = random_factor_graph(3, 3, rng)
    K = gibbs_kernel(g)
    for row in (0, 13):
        sigma = g.space.label(row)
        xs = [g.space.position(gibbs_step(g, sigma, rng)) for _ in range(20000)]
        assert chi2_pvalue(xs, K.rows[row]) > ALPHA


def test_kernel_hard_constraint():
    g = FactorGraph(["a", "b"], 2, [Factor(("a", "b"), [[0.0, -np.inf], [-np.inf, 0.0]])])
    K = gibbs_kernel(g)
    assert np.allclose(K.rows.sum(axis=1), 1)
    # from a feasible state the chain never leaves the feasible set
    assert K.rows[0, 1] == 0 and K.rows[0, 2] == 0


def test_restricted_examples():
    g = chain3()
    assert np.allclose(restricted_kernel(g, set(g.vertices)).rows, gibbs_kernel(g).rows)
    assert np.array_equal(restricted_kernel(g, set()).rows, np.eye(8))
    with pytest.raises(ValueError):
        restricted_kernel(g, {"w"})


def test_restricted_stationary_is_conditional():
    g = chain3()
    mu = gibbs_measure(g)
    K = restricted_kernel(g, {"y"}).rows
    sp = g.space
    for x in (0, 1):
        for z in (0, 1):
            cls = [sp.position((x, y, z)) for y in (0, 1)]
            sub = K[np.ix_(cls, cls)]
            assert np.allclose(sub.sum(axis=1), 1)
            pi = stationary_distribution(StochasticKernel(sub)).mass
            cm = conditional_marginal(mu, {"y"}, {"x": x, "z": z}).mass
            assert np.allclose(pi, cm, atol=1e-12)
