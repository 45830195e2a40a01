"""Seeded random distributions, kernels and factor graphs for audits and tests."""
from __future__ import annotations

import numpy as np

from .factor_graph import Factor, FactorGraph, FactorizationStructure
from .measures import DenseDistribution, StochasticKernel


def random_distribution(n, rng, sparsity=0.0):
    """Dirichlet(1) masses on ``n`` points; each point is zeroed with probability ``sparsity``."""
    w = rng.dirichlet(np.ones(n))
    if sparsity:
        w = np.where(rng.random(n) < sparsity, 0.0, w)
        if w.sum() == 0:
            w[rng.integers(n)] = 1.0
    return DenseDistribution(w / w.sum())


def random_kernel(n, rng, concentration=1.0):
    """Stochastic matrix with independent Dirichlet rows."""
    return StochasticKernel(rng.dirichlet(np.full(n, concentration), size=n))


def random_tree(k, rng):
    """Edges of a uniformly random recursive tree on ``0..k-1`` (``v`` joins an earlier vertex)."""
    return [(int(rng.integers(v)), v) for v in range(1, k)]


def random_tree_graph(k, q, rng, scale=1.0, edges=None):
    """Factor graph on a random tree with Gaussian edge and field tables."""
    if edges is None:
        edges = random_tree(k, rng)
    factors = [Factor(e, rng.normal(0, scale, (q, q))) for e in edges]
    factors += [Factor((v,), rng.normal(0, scale, q)) for v in range(k)]
    return FactorGraph(range(k), q, factors, edges)


def random_tree_pair(k, q, rng, scale=1.0):
    """Two measures on the same random tree plus its parent factorization structure."""
    edges = random_tree(k, rng)
    g1 = random_tree_graph(k, q, rng, scale, edges)
    g2 = random_tree_graph(k, q, rng, scale, edges)
    fs = FactorizationStructure(tuple([({0}, set())] + [({v}, {u}) for u, v in edges]))
    return g1, g2, fs


def random_factor_graph(k, q, rng, n_factors=None, max_scope=3, scale=1.0):
    """Factor graph with random scopes of size 1..``max_scope``; every vertex gets a field."""
    if n_factors is None:
        n_factors = k
    factors = [Factor((v,), rng.normal(0, scale, q)) for v in range(k)]
    for _ in range(n_factors):
        size = int(rng.integers(1, min(max_scope, k) + 1))
        scope = tuple(int(v) for v in rng.choice(k, size=size, replace=False))
        factors.append(Factor(scope, rng.normal(0, scale, (q,) * size)))
    return FactorGraph(range(k), q, factors)
