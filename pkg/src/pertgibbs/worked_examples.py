"""Small chains where the effect of a kernel perturbation can be computed exactly.

* A two-state chain with one perturbed transition, compared in ``L^2(mu)``.
* A lazy birth-death chain with downward drift whose perturbation teleports
  to the top state: tiny kernel distance, stationary laws far apart.
* Product Bernoulli measures on ``n^2`` coordinates, where the stationary
  laws stay close even though the mixing time is long.

Each analysis returns a flat record that serializes to one CSV row.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import binom

from .errors import BudgetExceededError, DomainError
from .measures import (
    DenseDistribution,
    Metric,
    StochasticKernel,
    TV,
    kernel_distance,
    l2_distance,
    mixing_time,
    stationary_distribution,
    tv_distance,
)

BIRTH_DEATH_CAP = 5000


class _Record:
    CSV_FIELDS = ()

    def as_row(self):
        d = asdict(self)
        return {k: d[k] for k in self.CSV_FIELDS}

    def to_json(self):
        return asdict(self)


# --------------------------------------------------------------------------
# two states


@dataclass
class TwoStateRecord(_Record):
    p: float
    C: float
    kernel_dist: float
    stat_dist: float
    mix_q: int
    mix_k: int
    ratio: float
    nu: tuple
    rate_q: float
    rate_k: float

    CSV_FIELDS = ("p", "C", "kernel_dist", "stat_dist", "mix_q", "mix_k", "ratio")


def two_state_kernels(p, C):
    Q = StochasticKernel(np.array([[1 - p, p], [p, 1 - p]]))
    K = StochasticKernel(np.array([[1 - C * p, C * p], [p, 1 - p]]))
    return Q, K


def two_state_analysis(p, C, eps=0.25):
    """Two-state chains ``Q(1,2) = Q(2,1) = p`` and ``K(1,2) = Cp, K(2,1) = p``.

    Distances use ``L^2(mu)`` with ``mu`` uniform, the stationary law of
    ``Q``. ``ratio`` compares the stationary error with the perturbation
    bound's shape, ``d(mu, nu) / (min(tau_Q, tau_K) * d(Q, K))``; it is ``nan``
    when ``C = 1``. ``rate_q`` and ``rate_k`` are the spectral gaps
    ``1 - |lambda_2|`` of the two chains.
    """
    if not 0 < p < 0.5:
        raise DomainError("p must lie in (0, 0.5)")
    if not 0 < C < 1 / p:
        raise DomainError("C must lie in (0, 1/p)")
    Q, K = two_state_kernels(p, C)
    mu = DenseDistribution(np.array([0.5, 0.5]))
    nu = stationary_distribution(K)
    metric = Metric.l2(mu)
    kd = kernel_distance(Q, K, metric)
    sd = l2_distance(mu, nu, mu)
    mix_q = mixing_time(Q, metric, eps, pi=mu)
    mix_k = mixing_time(K, metric, eps, pi=nu)
    denom = min(mix_q, mix_k) * kd
    ratio = sd / denom if denom > 0 else math.nan
    return TwoStateRecord(
        p, C, kd, sd, mix_q, mix_k, ratio, tuple(nu.mass.tolist()), 2 * p, (1 + C) * p
    )


# --------------------------------------------------------------------------
# birth-death chain with teleport


@dataclass
class BirthDeathRecord(_Record):
    n: int
    p: float
    Cn: float
    kernel_tv: float
    mu_low: float
    nu_low: float
    tv_stat: float
    mix_q: int
    mix_k: int
    mix_k_lower: int
    nu_low_bound: float
    mix_q_in_band: bool

    CSV_FIELDS = ("n", "p", "Cn", "kernel_tv", "mu_low", "nu_low", "tv_stat", "mix_q")


def birth_death_kernel(n, p):
    """Lazy walk on ``0..n``: up ``p/2``, down ``(1-p)/2``, boundary holds absorb the rest."""
    Q = np.zeros((n + 1, n + 1))
    i = np.arange(n)
    Q[i, i + 1] = p / 2
    Q[i + 1, i] = (1 - p) / 2
    Q[np.arange(n + 1), np.arange(n + 1)] = 1 - Q.sum(axis=1)
    return StochasticKernel(Q)


def teleport_kernel(Q, eps, target=None):
    """``(1 - eps) Q + eps`` times a jump to ``target`` (default: the last state)."""
    rows = (1 - eps) * Q.rows
    rows[:, Q.size - 1 if target is None else target] += eps
    return StochasticKernel(rows, Q.index)


def birth_death_analysis(n, p, Cn, eps=0.25, band=(0.5, 10.0), cap=BIRTH_DEATH_CAP):
    """Exact comparison of the drifting walk and its teleporting perturbation.

    States are ``0..n`` and ``eps_n = Cn / n``. Reports the sup-row kernel TV
    (equal to ``eps_n (1 - min_i Q(i, n))``), ``mu([0, n/3])``,
    ``nu([0, 2n/3))`` with its bound ``3 / Cn``, the stationary TV, the exact
    mixing times, and the lower bound on ``tau(K)`` obtained from the start
    ``0``: for ``t < 2n/3`` the walk cannot reach ``[2n/3, n]`` without
    teleporting, so ``d_TV(K^t(0, .), nu) >= nu([2n/3, n]) - 1 + (1 - eps_n)^t``.
    ``mix_q_in_band`` checks ``band[0] n <= tau(Q) <= band[1] n``.

    Raises
    ------
    BudgetExceededError
        If ``n > cap``.
    """
    if n < 1:
        raise DomainError("n must be positive")
    if n > cap:
        raise BudgetExceededError(f"birth-death chain with n = {n} exceeds the cap", cap, n)
    if not 0 < p < 0.5:
        raise DomainError("p must lie in (0, 0.5)")
    e = Cn / n
    if not 0 <= e < 1:
        raise DomainError("need 0 <= Cn / n < 1")
    Q = birth_death_kernel(n, p)
    K = teleport_kernel(Q, e)
    mu = stationary_distribution(Q)
    nu = stationary_distribution(K)
    x = np.arange(n + 1)
    low_mu = float(mu.mass[x <= n / 3].sum())
    low_nu = float(nu.mass[x < 2 * n / 3].sum())
    mix_q = mixing_time(Q, TV, eps, pi=mu)
    mix_k = mixing_time(K, TV, eps, pi=nu)
    high = 1.0 - low_nu
    lower = 0
    for t in range(int(math.ceil(2 * n / 3))):
        if high - 1.0 + (1.0 - e) ** t > eps:
            lower = t + 1
    return BirthDeathRecord(
        n=n, p=p, Cn=Cn,
        kernel_tv=kernel_distance(Q, K, TV),
        mu_low=low_mu, nu_low=low_nu,
        tv_stat=tv_distance(mu, nu),
        mix_q=mix_q, mix_k=mix_k, mix_k_lower=lower,
        nu_low_bound=3.0 / Cn if Cn > 0 else math.inf,
        mix_q_in_band=bool(band[0] * n <= mix_q <= band[1] * n),
    )


# --------------------------------------------------------------------------
# product Bernoulli


@dataclass
class ProductBernoulliRecord(_Record):
    n: int
    p: float
    ptilde: float
    kernel_tv: float
    adell_bound: float
    exact_tv: float

    CSV_FIELDS = ("n", "p", "ptilde", "kernel_tv", "adell_bound", "exact_tv")


def adell_constant(n, p, x):
    """``C(x) = x sqrt((n^2 + 2) / (2 p (1 - p)))``."""
    return x * math.sqrt((n * n + 2) / (2 * p * (1 - p)))


def adell_bound(n, p, ptilde):
    """``(sqrt(e) / 2) C / (1 - C)^2`` with ``C = C(ptilde - p)``; ``inf`` once ``C >= 1``."""
    c = adell_constant(n, p, ptilde - p)
    if c >= 1:
        return math.inf
    return math.sqrt(math.e) / 2 * c / (1 - c) ** 2


def binomial_tv(m, p, ptilde):
    """TV between ``Bernoulli(p)^m`` and ``Bernoulli(ptilde)^m``.

    The likelihood ratio depends on a configuration only through its number
    of ones, so the distance equals the TV between the two binomial laws.
    """
    k = np.arange(m + 1)
    return 0.5 * float(np.abs(binom.pmf(k, m, p) - binom.pmf(k, m, ptilde)).sum())


def product_gibbs_tv(m, p, ptilde):
    """Sup-row TV between the single-site Gibbs samplers of the two product laws.

    From a configuration with ``k`` ones, both kernels pick a coordinate
    uniformly and redraw it; the row distance is
    ``(|ptilde - p| + |(m - 2k)(ptilde - p)| / m) / 2``, maximized over ``k``.
    """
    k = np.arange(m + 1)
    d = ptilde - p
    return float((0.5 * (abs(d) + np.abs((m - 2 * k) * d) / m)).max())


def product_bernoulli_analysis(n, p, ptilde):
    """Compare ``Bernoulli(p)^(n^2)`` with ``Bernoulli(ptilde)^(n^2)``."""
    if n < 1:
        raise DomainError("n must be positive")
    if not (0.01 < p <= ptilde < 0.99):
        raise DomainError("need 0.01 < p <= ptilde < 0.99")
    m = n * n
    return ProductBernoulliRecord(
        n=n, p=p, ptilde=ptilde,
        kernel_tv=product_gibbs_tv(m, p, ptilde),
        adell_bound=adell_bound(n, p, ptilde),
        exact_tv=binomial_tv(m, p, ptilde),
    )
