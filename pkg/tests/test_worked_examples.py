import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pertgibbs.errors import BudgetExceededError, DomainError
from pertgibbs.measures import StochasticKernel, TV, kernel_distance, stationary_distribution
from pertgibbs.worked_examples import (
    adell_bound,
    adell_constant,
    binomial_tv,
    birth_death_analysis,
    birth_death_kernel,
    product_bernoulli_analysis,
    product_gibbs_tv,
    teleport_kernel,
    two_state_analysis,
)


# ---------------------------------------------------------------- two states


def test_two_state_identity():
    r = two_state_analysis(0.1, 1.0)
    assert r.kernel_dist == 0 and r.stat_dist == pytest.approx(0, abs=1e-15)
    assert math.isnan(r.ratio)


def test_two_state_worked_values():
    r = two_state_analysis(0.1, 2.0)
    assert np.allclose(r.nu, (1 / 3, 2 / 3), atol=1e-14)
    assert r.stat_dist == pytest.approx(1 / 3, abs=1e-12)
    assert r.kernel_dist == pytest.approx(0.2, abs=1e-12)
    assert r.rate_q == pytest.approx(0.2) and r.rate_k == pytest.approx(0.3)


def test_two_state_ratio_band():
    ratios = [two_state_analysis(0.1, C).ratio for C in np.linspace(1.01, 1.2, 20)]
    assert 0.05 <= min(ratios) and max(ratios) <= 20
    assert max(ratios) / min(ratios) < 2


def test_two_state_domain():
    with pytest.raises(DomainError):
        two_state_analysis(0.6, 1.0)
    with pytest.raises(DomainError):
        two_state_analysis(0.1, 11.0)


def test_two_state_row():
    r = two_state_analysis(0.1, 2.0)
    assert list(r.as_row()) == ["p", "C", "kernel_dist", "stat_dist", "mix_q", "mix_k", "ratio"]


# ---------------------------------------------------------------- birth-death


def test_birth_death_kernel_shape():
    Q = birth_death_kernel(5, 0.25)
    assert Q.size == 6
    assert Q.rows[0, 0] == pytest.approx(1 - 0.125)
    assert Q.rows[5, 5] == pytest.approx(1 - 0.375)
    assert Q.rows[2, 3] == 0.125 and Q.rows[2, 1] == 0.375


def test_teleport_distance_formula():
    Q = birth_death_kernel(10, 0.25)
    for eps in (0.05, 0.1, 0.3):
        K = teleport_kernel(Q, eps)
        assert kernel_distance(Q, K, TV) == pytest.approx(eps * (1 - Q.rows[:, -1].min()), abs=1e-15)


def test_birth_death_no_perturbation():
    r = birth_death_analysis(30, 0.25, 0.0)
    assert r.kernel_tv == 0 and r.tv_stat == pytest.approx(0, abs=1e-12)


def test_birth_death_large():
    r = birth_death_analysis(400, 0.25, 20)
    assert r.nu_low <= 3 / 20 == r.nu_low_bound
    assert r.mu_low >= 0.99
    assert r.tv_stat >= 0.8
    assert r.kernel_tv == pytest.approx(20 / 400 * (1 - 0.0), abs=1e-12)
    assert r.mix_k >= r.mix_k_lower


def test_birth_death_mixing_band():
    r = birth_death_analysis(60, 0.25, 6)
    assert 30 <= r.mix_q <= 600 and r.mix_q_in_band


@pytest.mark.parametrize("n,cn", [(30, 3), (60, 5), (90, 10), (120, 30)])
def test_birth_death_claim_bound(n, cn):
    assert birth_death_analysis(n, 0.25, cn).nu_low <= 3 / cn


def test_birth_death_lower_bound_is_valid():
    n, cn = 60, 6
    r = birth_death_analysis(n, 0.25, cn)
    K = teleport_kernel(birth_death_kernel(n, 0.25), cn / n)
    nu = stationary_distribution(K).mass
    row = np.zeros(n + 1)
    row[0] = 1
    for _ in range(r.mix_k_lower - 1):
        row = row @ K.rows
    assert 0.5 * np.abs(row - nu).sum() > 0.25


def test_birth_death_errors():
    with pytest.raises(BudgetExceededError):
        birth_death_analysis(6000, 0.25, 10)
    with pytest.raises(DomainError):
        birth_death_analysis(10, 0.25, 10)
    with pytest.raises(DomainError):
        birth_death_analysis(10, 0.7, 1)


# ---------------------------------------------------------------- product Bernoulli


def brute_product_tv(m, p, pt):
    total = 0.0
    for x in itertools.product((0, 1), repeat=m):
        k = sum(x)
        total += abs(p**k * (1 - p) ** (m - k) - pt**k * (1 - pt) ** (m - k))
    return 0.5 * total


def brute_product_kernel_tv(m, p, pt):
    # exact single-site Gibbs kernels on {0,1}^m, compared row by row
    n = 2**m
    rows = []
    for prob in (p, pt):
        K = np.zeros((n, n))
        for s in range(n):
            for i in range(m):
                bit = 1 << (m - 1 - i)
                K[s, s | bit] += prob / m
                K[s, s & ~bit] += (1 - prob) / m
        rows.append(StochasticKernel(K))
    return kernel_distance(rows[0], rows[1], TV)


def test_adell_values():
    assert adell_constant(10, 0.4, 0.01) == pytest.approx(0.01 * math.sqrt(102 / 0.48), abs=1e-15)
    assert adell_constant(10, 0.4, 0.01) == pytest.approx(0.145774, abs=1e-6)
    assert adell_bound(10, 0.4, 0.41) == pytest.approx(0.1647, abs=1e-3)
    assert adell_bound(10, 0.4, 0.6) == math.inf


def test_product_worked_example():
    r = product_bernoulli_analysis(10, 0.4, 0.41)
    assert r.exact_tv <= r.adell_bound
    assert r.kernel_tv == pytest.approx(0.01, abs=1e-15)


def test_product_identity():
    r = product_bernoulli_analysis(5, 0.3, 0.3)
    assert r.kernel_tv == 0 and r.exact_tv == 0 and r.adell_bound == 0


@pytest.mark.parametrize("m", [1, 2, 5, 9, 16])
def test_binomial_reduction_matches_enumeration(m):
    assert binomial_tv(m, 0.3, 0.37) == pytest.approx(brute_product_tv(m, 0.3, 0.37), abs=1e-12)


@pytest.mark.parametrize("m", [1, 3, 6])
def test_kernel_tv_matches_enumeration(m):
    assert product_gibbs_tv(m, 0.3, 0.37) == pytest.approx(brute_product_kernel_tv(m, 0.3, 0.37), abs=1e-12)


@pytest.mark.parametrize("p", [0.2, 0.4])
@pytest.mark.parametrize("gap", [0.005, 0.01])
@pytest.mark.parametrize("n", [5, 10])
def test_adell_dominates_exact(p, gap, n):
    r = product_bernoulli_analysis(n, p, p + gap)
    assert adell_constant(n, p, gap) < 1
    assert r.exact_tv <= r.adell_bound


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.floats(0.02, 0.9), st.floats(0, 0.08))
def test_kernel_tv_is_gap(n, p, gap):
    assert product_gibbs_tv(n * n, p, p + gap) == pytest.approx(gap, abs=1e-15)


def test_product_domain():
    with pytest.raises(DomainError):
        product_bernoulli_analysis(5, 0.5, 0.4)
    with pytest.raises(DomainError):
        product_bernoulli_analysis(0, 0.4, 0.5)
