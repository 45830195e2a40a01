"""Noisy-observation Ising model on a complete binary tree.

Vertices are heap ordered: ``0`` is the root and the children of ``v`` are
``2v + 1`` and ``2v + 2``, so a tree of depth ``d`` has ``Gamma = 2^(d+1) - 1``
vertices. Label ``1`` stands for spin ``+1`` and label ``0`` for spin ``-1``.
The prior is ``f(sigma) ~ exp(beta * sum_edges s(v) s(w))``; each vertex
carries ``n_i`` independent reports of its spin, each flipped with
probability ``delta``.

Exact quantities on the tree (marginals, path laws, the Omega marginal of the
pseudo-marginal target) come from one upward pass of subtree partition
functions followed by a downward pass of parent-to-child transition
matrices. The posterior given the data is again a tree Ising model with a
field at every vertex, and so is the Omega marginal of the pseudo-marginal
target, so both are handled by the same routine.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _fast
from .errors import BudgetExceededError, DomainError
from .factor_graph import Factor, FactorGraph, FactorizationStructure
from .pseudo_marginal import ObservationSet, posterior_graph as _with_likelihood

BETA_STAR = math.log(2) / 6
SIGMA_ENUMERATION_CAP = 2**15


# --------------------------------------------------------------------------
# geometry


def n_vertices(depth):
    return 2 ** (depth + 1) - 1


def parent(v):
    return (v - 1) // 2


def tree_edges(depth):
    return [(parent(v), v) for v in range(1, n_vertices(depth))]


def root_to_leaf(depth, leaf=None):
    """Vertices on the path from the root to ``leaf`` (default: the leftmost leaf)."""
    if leaf is None:
        leaf = n_vertices(depth - 1) if depth > 0 else 0
    path = [leaf]
    while path[-1] > 0:
        path.append(parent(path[-1]))
    return path[::-1]


def tree_structure(depth):
    """Blocks ``({0}, {})`` and ``({v}, {parent(v)})`` in heap order."""
    blocks = [({0}, set())] + [({v}, {parent(v)}) for v in range(1, n_vertices(depth))]
    return FactorizationStructure(tuple(blocks))


def _coupling(beta):
    return np.array([[beta, -beta], [-beta, beta]])


def prior_graph(depth, beta):
    edges = tree_edges(depth)
    table = _coupling(beta)
    return FactorGraph(range(n_vertices(depth)), 2, [Factor(e, table) for e in edges], edges)


# --------------------------------------------------------------------------
# data


def _check_delta(delta):
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")


def generate(depth, beta, delta, counts, seed):
    """Draw ``sigma_true`` from the prior and noisy reports of every spin.

    The root is uniform and each child copies its parent's spin with
    probability ``e^beta / (e^beta + e^-beta)``, which samples the tree
    prior exactly. Each report equals the true label with probability
    ``1 - delta``.

    Parameters
    ----------
    depth : int
    beta : float
    delta : float
    counts : int or sequence of int
        Reports per vertex.
    seed : int or numpy.random.SeedSequence or numpy.random.Generator

    Returns
    -------
    sigma_true : tuple of int
    Z : ObservationSet
    """
    if depth < 0:
        raise DomainError("depth must be non-negative")
    if beta < 0:
        raise DomainError("beta must be non-negative")
    _check_delta(delta)
    n = n_vertices(depth)
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (n,))
    if np.any(counts < 0):
        raise DomainError("counts must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sigma = np.empty(n, dtype=int)
    sigma[0] = rng.integers(2)
    keep = math.exp(beta) / (math.exp(beta) + math.exp(-beta))
    same = rng.random(n) < keep
    for v in range(1, n):
        sigma[v] = sigma[parent(v)] if same[v] else 1 - sigma[parent(v)]
    obs = []
    for v in range(n):
        flips = rng.random(counts[v]) < delta
        obs.append(tuple(int(x) for x in np.where(flips, 1 - sigma[v], sigma[v])))
    return tuple(int(s) for s in sigma), ObservationSet.flip_noise(range(n), obs, delta)


def _with_delta(Z, delta):
    _check_delta(delta)
    if Z.delta == delta:
        return Z
    return ObservationSet.flip_noise(Z.vertices, Z.obs, delta, Z.q)


def posterior_graph(depth, beta, delta, Z):
    """Prior edge factors plus one field factor per observed vertex."""
    if len(Z.vertices) != n_vertices(depth):
        raise DomainError("observation set does not match the tree size")
    return _with_likelihood(prior_graph(depth, beta), _with_delta(Z, delta))


# --------------------------------------------------------------------------
# exact tree computations


def posterior_fields(Z):
    """``(Gamma, 2)`` log field of the exact posterior, ``phi_v(label)``."""
    ones = np.array([sum(zs) for zs in Z.obs], dtype=float)
    n = np.array(Z.counts, dtype=float)
    ll = Z.loglik
    return np.stack([ones * ll[s, 1] + (n - ones) * ll[s, 0] for s in (0, 1)], axis=1)


def pseudo_fields(Z, m):
    """Log field of the Omega marginal of the pseudo-marginal target, uniform subsampling.

    Summing ``exp(L_hat)`` over subsets of size ``m_v`` depends only on how many
    label-1 reports the subset holds, so the sum runs over a hypergeometric
    count. The result is the log of the average of ``exp(L_hat_v)``.
    """
    counts = np.array(Z.counts)
    m = np.broadcast_to(np.asarray(m, dtype=int), counts.shape)
    ll = Z.loglik
    out = np.zeros((len(counts), 2))
    for v, zs in enumerate(Z.obs):
        n, mv = counts[v], int(min(m[v], counts[v]))
        if n == 0:
            continue
        c1 = sum(zs)
        k = np.arange(max(0, mv - (n - c1)), min(mv, c1) + 1)
        logc = (
            _log_binom(c1, k) + _log_binom(n - c1, mv - k) - _log_binom(n, mv)
        )
        for s in (0, 1):
            out[v, s] = logsumexp(logc + n / mv * (k * ll[s, 1] + (mv - k) * ll[s, 0]))
    return out


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def upward_messages(beta, fields):
    """``log U_v(s)``: log partition function of the subtree at ``v`` with ``sigma(v) = s``."""
    fields = np.asarray(fields, dtype=float)
    n = fields.shape[0]
    J = _coupling(beta)
    logU = fields.copy()
    for v in range(n - 1, -1, -1):
        for c in (2 * v + 1, 2 * v + 2):
            if c < n:
                logU[v] += logsumexp(J + logU[c][None, :], axis=1)
    return logU


def child_transitions(beta, fields, logU=None):
    """``T[c, s, t] = P(sigma(c) = t | sigma(parent(c)) = s)``; ``T[0]`` is unused."""
    if logU is None:
        logU = upward_messages(beta, fields)
    J = _coupling(beta)
    w = J[None, :, :] + logU[:, None, :]
    return np.exp(w - logsumexp(w, axis=2, keepdims=True))


def tree_marginals(beta, fields):
    """Exact root law and parent-child pair laws of a tree Ising model.

    Returns
    -------
    root : numpy.ndarray, shape (2,)
    pairs : numpy.ndarray, shape (Gamma, 2, 2)
        ``pairs[v, s, t] = P(sigma(parent(v)) = s, sigma(v) = t)``; ``pairs[0]`` is zero.
    """
    logU = upward_messages(beta, fields)
    T = child_transitions(beta, fields, logU)
    n = logU.shape[0]
    single = np.zeros((n, 2))
    single[0] = np.exp(logU[0] - logsumexp(logU[0]))
    pairs = np.zeros((n, 2, 2))
    for v in range(1, n):
        pairs[v] = single[parent(v)][:, None] * T[v]
        single[v] = pairs[v].sum(axis=0)
    return single[0], pairs


def block_marginals(beta, fields):
    """Laws of the blocks ``S_j u Pi_j``: root (2 states), then ``(parent, v)`` (4 states)."""
    root, pairs = tree_marginals(beta, fields)
    return [root] + [pairs[v].reshape(4) for v in range(1, len(pairs))]


def _hellinger2(p, q):
    return float(((np.sqrt(p) - np.sqrt(q)) ** 2).sum())


def hellinger_upper_exact(beta, mu_fields, nu_fields):
    """``sqrt(sum_j d_H^2)`` over the tree blocks, from exact block marginals."""
    a = block_marginals(beta, mu_fields)
    b = block_marginals(beta, nu_fields)
    return math.sqrt(sum(_hellinger2(x, y) for x, y in zip(a, b)))


def path_law(beta, fields, path, root_label, start=1, cap=2**20):
    """Exact joint law of the labels at ``path[start:]`` given ``sigma(path[0]) = root_label``.

    ``path`` must be a root-to-leaf style chain of parent-child pairs. The
    returned array has one axis per listed vertex.
    """
    k = len(path) - start
    if 2**k > cap:
        raise BudgetExceededError("path law exceeds the enumeration cap", cap, 2**k)
    T = child_transitions(beta, fields)
    law = np.zeros(2)
    law[root_label] = 1.0
    for v in path[1:start + 1]:
        law = law @ T[v]
    for v in path[start + 1:]:
        law = law[..., :, None] * T[v]
    return law


def path_decay_check(depth, beta, delta, Z, path=None, cap=2**20):
    """Root-clamp influence along a root-to-leaf path against ``(1 - e^{-6 beta})^{j-1}``.

    For each position ``j = 1..k`` of ``path = (gamma_1 = root, ..., gamma_k)``
    computes the exact TV distance between the posterior laws of
    ``(sigma(gamma_j), ..., sigma(gamma_k))`` under the root clamps ``+1`` and
    ``-1``. At ``j = 1`` the clamped root itself is included, so the distance
    is 1.

    Returns
    -------
    list of (int, float, float)
        ``(j, exact_tv, bound)``.
    """
    if path is None:
        path = root_to_leaf(depth)
    path = list(path)
    n = n_vertices(depth)
    if path[0] != 0 or any(parent(path[i + 1]) != path[i] for i in range(len(path) - 1)):
        raise DomainError("path must start at the root and follow parent-child edges")
    if path[-1] >= n:
        raise DomainError("path leaves the tree")
    if len(Z.vertices) != n:
        raise DomainError("observation set does not match the tree size")
    fields = posterior_fields(_with_delta(Z, delta))
    eps = math.exp(-6 * beta)
    out = [(1, 1.0, 1.0)]
    for j in range(2, len(path) + 1):
        plus = path_law(beta, fields, path, 1, start=j - 1, cap=cap)
        minus = path_law(beta, fields, path, 0, start=j - 1, cap=cap)
        tv = 0.5 * float(np.abs(plus - minus).sum())
        out.append((j, tv, (1 - eps) ** (j - 1)))
    return out


# --------------------------------------------------------------------------
# kernel perturbation on the tree


def _flip_gaps(Z, m):
    """Per vertex, the exact gap ``phi(1) - phi(0)`` and every attainable estimated gap."""
    ll = Z.loglik
    counts = np.array(Z.counts)
    m = np.broadcast_to(np.asarray(m, dtype=int), counts.shape)
    exact = posterior_fields(Z) @ np.array([-1.0, 1.0])
    est = []
    for v, zs in enumerate(Z.obs):
        n, mv = counts[v], int(min(m[v], counts[v]))
        if n == 0:
            est.append(np.zeros(1))
            continue
        c1 = sum(zs)
        k = np.arange(max(0, mv - (n - c1)), min(mv, c1) + 1)
        gap = n / mv * (k * (ll[1, 1] - ll[0, 1]) + (mv - k) * (ll[1, 0] - ll[0, 0]))
        est.append(gap)
    return exact, est


def _neighbour_spin_sums(depth):
    n = n_vertices(depth)
    out = []
    for v in range(n):
        deg = (v > 0) + 2 * (2 * v + 1 < n)
        out.append(np.arange(-deg, deg + 1, 2))
    return out


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def perturbation_proxy(beta, Z, m, depth=None, cap=SIGMA_ENUMERATION_CAP):
    """Sup-row TV between the exact-posterior Gibbs kernel and the alternating kernel.

    Both rows put mass ``p_x / Gamma`` on flipping site ``x``. Writing
    ``d_x`` for the difference of flip probabilities, the row distance is
    ``(sum |d_x| + |sum d_x|) / (2 Gamma)``, and because each ``a_x`` moves
    only ``d_x`` the supremum over ``a`` is
    ``max(sum_x max(max d_x, 0), sum_x max(-min d_x, 0)) / Gamma``.

    When ``2^Gamma <= cap`` this is maximized exactly over ``sigma``. Beyond
    that every site is maximized on its own over its neighbour spins, which
    gives an upper bound.

    Returns
    -------
    (float, bool)
        The value and whether it is exact.
    """
    n = len(Z.vertices)
    if depth is None:
        depth = int(round(math.log2(n + 1))) - 1
    exact_gap, est_gaps = _flip_gaps(Z, m)
    if 2**n > cap:
        sums = _neighbour_spin_sums(depth)
        total = 0.0
        for v in range(n):
            p = _expit(2 * beta * sums[v][:, None] + exact_gap[v])
            ph = _expit(2 * beta * sums[v][:, None] + est_gaps[v][None, :])
            total += float(np.abs(p - ph).max())
        return total / n, False
    configs = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    spins = 2 * configs - 1
    pos = np.zeros(2**n)
    neg = np.zeros(2**n)
    for v in range(n):
        h = np.zeros(2**n)
        if v > 0:
            h += spins[:, parent(v)]
        for c in (2 * v + 1, 2 * v + 2):
            if c < n:
                h += spins[:, c]
        p1 = _expit(2 * beta * h + exact_gap[v])
        ph1 = _expit(2 * beta * h[:, None] + est_gaps[v][None, :])
        # moving mass is p(1) from label 0 and p(0) = 1 - p(1) from label 1
        sign = np.where(configs[:, v] == 0, 1.0, -1.0)[:, None]
        d = sign * (p1[:, None] - ph1)
        pos += np.maximum(d.max(axis=1), 0.0)
        neg += np.maximum(-d.min(axis=1), 0.0)
    return float(np.maximum(pos, neg).max()) / n, True


# --------------------------------------------------------------------------
# subsample rules


def fixed_m(m):
    """Rule that uses the same subsample size at every tree size."""

    def rule(gamma, proxy):
        return int(m)

    rule.description = f"fixed m={m}"
    return rule


def polynomial_f(r):
    return r * r


def perturbation_target(c, f=polynomial_f):
    """Rule picking the smallest ``m`` whose perturbation proxy is at most ``c / (sqrt(Gamma) f(log Gamma))``.

    ``proxy(m)`` is supplied by the caller; ``proxy.max_m`` caps the search
    and is used when no smaller size meets the target.
    """

    def rule(gamma, proxy):
        target = c / (math.sqrt(gamma) * f(math.log(gamma)))
        for m in range(1, proxy.max_m + 1):
            if proxy(m) <= target:
                return m
        return proxy.max_m

    rule.description = f"perturbation target c={c}"
    return rule


# --------------------------------------------------------------------------
# scaling study


@dataclass
class ScalingRecord:
    depth: int
    gamma: int
    subsample_m: int
    perturbation_proxy: float
    proxy_exact: bool
    hellinger_upper: float
    stderr: float
    hellinger_exact: float
    status: str = "ok"
    replica_values: list = field(default_factory=list, repr=False)

    CSV_FIELDS = ("depth", "gamma", "subsample_m", "perturbation_proxy", "hellinger_upper", "stderr")

    def as_row(self):
        return {k: getattr(self, k) for k in self.CSV_FIELDS}

    def to_json(self):
        out = self.as_row()
        out.update(proxy_exact=self.proxy_exact, hellinger_exact=self.hellinger_exact, status=self.status)
        return out


def _hellinger_from_counts(occ_q, occ_k):
    """``sqrt(sum_j d_H^2)`` between smoothed block frequencies of the two chains."""
    total = 0.0
    for b, k in ((0, 2), (None, 4)):
        rows = slice(0, 1) if b == 0 else slice(1, None)
        p = occ_q[rows, :k] + 0.5
        q = occ_k[rows, :k] + 0.5
        p = p / p.sum(axis=1, keepdims=True)
        q = q / q.sum(axis=1, keepdims=True)
        total += float(((np.sqrt(p) - np.sqrt(q)) ** 2).sum())
    return math.sqrt(total)


def _run_replica(beta, Z, m, steps, burn, seq, chunk=1 << 15):
    n = len(Z.vertices)
    counts = np.array(Z.counts, dtype=np.int64)
    m = np.minimum(np.broadcast_to(np.asarray(m, dtype=np.int64), counts.shape), counts).copy()
    nmax = max(int(counts.max()), 1)
    z = np.zeros((n, nmax), dtype=np.int64)
    for v, zs in enumerate(Z.obs):
        z[v, : len(zs)] = zs
    phi_gap = posterior_fields(Z) @ np.array([-1.0, 1.0])
    ll = np.ascontiguousarray(Z.loglik)

    init_seq, shared_seq, aux_seq = seq.spawn(3)
    init = np.random.default_rng(init_seq)
    shared = np.random.default_rng(shared_seq)
    aux = np.random.default_rng(aux_seq)
    sigma0, _ = generate(int(round(math.log2(n + 1))) - 1, beta, 0.5, 0, init)
    sig_q = np.array(sigma0, dtype=np.int64)
    sig_k = sig_q.copy()
    perm = np.zeros((n, nmax), dtype=np.int64)
    k1 = np.zeros(n, dtype=np.int64)
    for v in range(n):
        perm[v, : counts[v]] = init.permutation(counts[v])
        k1[v] = z[v, perm[v, : m[v]]].sum()

    occ_q = np.zeros((n, 4))
    occ_k = np.zeros((n, 4))
    last_q = np.zeros(n, dtype=np.int64)
    last_k = np.zeros(n, dtype=np.int64)
    t = 0
    while t < steps:
        size = min(chunk, steps - t)
        _fast.advance_pair(beta, phi_gap, counts, m, ll, z, sig_q, sig_k, perm, k1,
                           shared.random((size, 2)), aux.random((size, 4)), t, burn,
                           occ_q, occ_k, last_q, last_k)
        t += size
    _fast.finish(occ_q, last_q, sig_q, steps, burn)
    _fast.finish(occ_k, last_k, sig_k, steps, burn)
    return occ_q, occ_k


def _jackknife(occ_q, occ_k):
    R = len(occ_q)
    total_q = sum(occ_q)
    total_k = sum(occ_k)
    full = _hellinger_from_counts(total_q, total_k)
    if R < 2:
        return full, math.nan, []
    loo = np.array([_hellinger_from_counts(total_q - a, total_k - b) for a, b in zip(occ_q, occ_k)])
    est = R * full - (R - 1) * loo.mean()
    se = math.sqrt((R - 1) / R * float(((loo - loo.mean()) ** 2).sum()))
    return max(est, 0.0), se, loo.tolist()


class _Proxy:
    def __init__(self, beta, Z, depth, cap):
        self.beta, self.Z, self.depth, self.cap = beta, Z, depth, cap
        self.max_m = max(Z.counts)
        self._cache = {}

    def value(self, m):
        if m not in self._cache:
            self._cache[m] = perturbation_proxy(self.beta, self.Z, m, self.depth, self.cap)
        return self._cache[m]

    def __call__(self, m):
        return self.value(m)[0]


def scaling_study(depths, beta, delta, subsample_rule, replicas=32, steps=10**6, seed=0, *,
                  counts=8, burn_in=0.2, threads=None, max_steps=None, cap=SIGMA_ENUMERATION_CAP):
    """Hellinger error of the alternating sampler's stationary law across tree sizes.

    For every depth the data are drawn with :func:`generate`, the subsample
    size comes from ``subsample_rule(Gamma, proxy)``, and ``replicas`` pairs
    of chains (exact posterior Gibbs and alternating) run for ``steps``
    steps each after a uniform prior start. The first ``burn_in`` fraction is
    discarded. The two chains share the site and label uniforms.

    ``hellinger_upper`` is ``sqrt(sum_j d_H^2)`` over the tree blocks between
    the two chains' pooled block frequencies (add-1/2 smoothing), bias
    corrected by a leave-one-replica-out jackknife; ``stderr`` is the
    jackknife standard error. ``hellinger_exact`` is the same quantity from
    exact block marginals.

    Seeds: ``SeedSequence(seed)`` spawns one child per depth, which spawns a
    data stream and one stream per replica. The depth children do not depend
    on the rule, so two studies with the same seed see the same data and
    uniforms.

    ``max_steps`` bounds the total number of simulated steps; depths beyond
    the budget come back with ``status="budget"`` and ``nan`` values.
    """
    if beta > BETA_STAR:
        raise DomainError(f"beta must not exceed ln(2)/6 = {BETA_STAR:.6f}")
    _check_delta(delta)
    if replicas < 1 or steps < 1:
        raise DomainError("replicas and steps must be positive")
    burn = int(burn_in * steps)
    root = np.random.SeedSequence(seed)
    children = root.spawn(max(depths) + 1)
    used = 0
    records = []
    for depth in depths:
        gamma = n_vertices(depth)
        data_seq, rep_seq = children[depth].spawn(2)
        _, Z = generate(depth, beta, delta, counts, np.random.default_rng(data_seq))
        proxy = _Proxy(beta, Z, depth, cap)
        m = int(subsample_rule(gamma, proxy))
        if not 1 <= m <= proxy.max_m:
            raise DomainError("subsample rule must return 1 <= m <= n_i")
        value, exact = proxy.value(m)
        h_exact = hellinger_upper_exact(beta, posterior_fields(Z), pseudo_fields(Z, m))
        if max_steps is not None and used + replicas * steps > max_steps:
            records.append(ScalingRecord(depth, gamma, m, value, exact, math.nan, math.nan, h_exact, "budget"))
            continue
        used += replicas * steps
        seqs = rep_seq.spawn(replicas)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda s: _run_replica(beta, Z, m, steps, burn, s), seqs))
        h, se, loo = _jackknife([r[0] for r in runs], [r[1] for r in runs])
        records.append(ScalingRecord(depth, gamma, m, value, exact, h, se, h_exact, "ok", loo))
    return records


def trend(records):
    """OLS slope of ``hellinger_upper`` on depth and its standard error from the per-depth errors."""
    ok = [r for r in records if r.status == "ok"]
    x = np.array([r.depth for r in ok], dtype=float)
    y = np.array([r.hellinger_upper for r in ok])
    se = np.array([r.stderr for r in ok])
    if len(ok) < 2:
        return math.nan, math.nan
    w = (x - x.mean()) / ((x - x.mean()) ** 2).sum()
    return float(w @ y), float(math.sqrt((w**2 * se**2).sum()))
