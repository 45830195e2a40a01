"""Single-site Gibbs sampling on factor graphs: random steps and exact kernels."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .factor_graph import _local_scores, broadcast_table, check_budget
from .measures import StochasticKernel

KERNEL_CAP = 2**12


def softmax(scores):
    """Normalized ``exp(scores)`` with max subtraction; ``-inf`` scores get zero mass."""
    scores = np.asarray(scores, dtype=float)
    top = scores.max()
    if top == -np.inf:
        raise ValueError("every label has zero weight")
    w = np.exp(scores - top)
    return w / w.sum()


def gibbs_step(g, sigma, rng):
    """One step of the standard single-site Gibbs sampler.

    A site ``x`` is drawn uniformly from ``V`` and relabelled with
    ``p(i) ~ exp(s_i)`` where ``s_i`` sums only the factors depending on
    ``x``, evaluated at ``sigma`` with ``x`` set to ``i``.

    Parameters
    ----------
    g : FactorGraph
    sigma : sequence of int
        Current configuration, ordered like ``g.vertices``.
    rng : numpy.random.Generator

    Returns
    -------
    tuple of int
        The new configuration; it differs from ``sigma`` in at most one site.
    """
    a = int(rng.integers(len(g.vertices)))
    p = softmax(_local_scores(g, sigma, a))
    j = int(rng.choice(g.q, p=p))
    out = list(sigma)
    out[a] = j
    return tuple(out)


def site_conditionals(g, sites=None):
    """Conditional label laws at each site for every configuration.

    Returns a dict mapping site position ``a`` to an array of shape
    ``(q,) * |V|`` whose entry at ``sigma`` is ``p_a(sigma[a] | sigma)``.
    Sites where every label is impossible get ``nan``.
    """
    n = len(g.vertices)
    shape = (g.q,) * n
    if sites is None:
        sites = range(n)
    out = {}
    for a in sites:
        local = np.zeros((1,) * n)
        for k in g.dependency[a]:
            local = local + broadcast_table(g.factors[k], n)
        local = np.broadcast_to(local, shape)
        norm = logsumexp(local, axis=a, keepdims=True)
        with np.errstate(invalid="ignore"):
            out[a] = np.exp(local - norm)
    return out


def _site_kernel(g, sites, cap):
    check_budget(g.n_states, cap)
    n = len(g.vertices)
    N = g.n_states
    rows = np.zeros((N, N))
    if not sites:
        return StochasticKernel(np.eye(N), g.space)
    configs = g.space.all_configurations()
    idx = np.arange(N)
    strides = [g.q ** (n - 1 - a) for a in range(n)]
    conds = site_conditionals(g, sites)
    w = 1.0 / len(sites)
    for a in sites:
        cond = conds[a].reshape(-1)
        dead = np.isnan(cond)
        for i in range(g.q):
            tgt = idx + (i - configs[:, a]) * strides[a]
            prob = cond[tgt]
            # a site with no feasible label holds
            prob = np.where(dead[idx], float(i == 0), prob)
            tgt = np.where(dead[idx], idx, tgt)
            rows[idx, tgt] += w * prob
    return StochasticKernel(rows, g.space)


def gibbs_kernel(g, cap=KERNEL_CAP):
    """Exact transition matrix of :func:`gibbs_step` over ``[q]^V``.

    ``Q(sigma, sigma_{x->j}) = (1/|V|) exp(s_j) / sum_i exp(s_i)``, with every
    move that leaves ``sigma`` unchanged accumulated on the diagonal.
    """
    return _site_kernel(g, list(range(len(g.vertices))), cap)


def restricted_kernel(g, B, cap=KERNEL_CAP):
    """Gibbs sampler that only updates the vertices in ``B``.

    Sites are drawn uniformly from ``B``; labels outside ``B`` never change.
    An empty ``B`` gives the identity kernel.
    """
    B = set(B)
    if not B <= set(g.vertices):
        raise ValueError("B must be a subset of V")
    sites = [g.position[v] for v in g.vertices if v in B]
    return _site_kernel(g, sites, cap)
