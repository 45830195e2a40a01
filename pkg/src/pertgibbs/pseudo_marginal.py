"""Subsampled-likelihood (pseudo-marginal) Gibbs samplers on an augmented space.

The model is a prior factor graph ``g`` (factors ``Phi_1``) plus per-vertex
observations ``Z``. The log-likelihood of vertex ``i`` is
``phi_i(sigma) = sum_j loglik[sigma(i), z_ij]``; these factors form
``Phi_2``. A subsample vector ``a`` picks ``m_i`` observation indices at every
vertex, and the likelihood factor is replaced by the inflated subsample sum

    L_hat_i(sigma, a) = (n_i / m_i) * sum_{j in a_i} loglik[sigma(i), z_ij].

The alternating sampler updates one site of ``sigma`` given ``a`` and then
proposes to swap one element of one ``a_i``. Its stationary law on
``Omega x A`` is ``nu_hat(sigma, a) ~ g(a) exp(sum_phi L_hat_phi(sigma, a))``.

Subsample vectors are tuples (in vertex order) of sorted tuples of
0-based observation indices.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .factor_graph import Factor, _local_scores, broadcast_table, check_budget
from .gibbs import softmax
from .errors import SubsampleError
from .measures import DenseDistribution, StochasticKernel, TV, _l2_rows

AUGMENTED_CAP = 2**22
KERNEL_CAP = 2**12


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observations ``z_ij`` in ``[q]`` for each vertex and the table ``loglik[i, j]``.

    ``obs`` is ordered like ``vertices``; ``loglik[i, j]`` is the log
    probability of observing label ``j`` when the latent label is ``i``.
    """

    vertices: tuple
    obs: tuple
    loglik: np.ndarray
    delta: float | None = None

    def __post_init__(self):
        vertices = tuple(self.vertices)
        obs = tuple(tuple(int(z) for z in zs) for zs in self.obs)
        if len(obs) != len(vertices):
            raise ValueError("need one observation list per vertex")
        loglik = np.array(self.loglik, dtype=float)
        if loglik.ndim != 2 or loglik.shape[0] != loglik.shape[1]:
            raise ValueError("loglik must be a q x q table")
        if not np.all(np.isfinite(loglik)):
            raise ValueError("loglik entries must be finite")
        q = loglik.shape[0]
        for zs in obs:
            if any(not 0 <= z < q for z in zs):
                raise ValueError("observations must be labels in [q]")
        loglik.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "loglik", loglik)

    @classmethod
    def flip_noise(cls, vertices, obs, delta, q=2):
        """Observations that report the latent label with probability ``1 - delta``.

        A wrong report is uniform over the other ``q - 1`` labels.
        """
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        table = np.full((q, q), math.log(delta / (q - 1)))
        np.fill_diagonal(table, math.log(1 - delta))
        return cls(vertices, obs, table, delta)

    @property
    def q(self):
        return self.loglik.shape[0]

    @property
    def counts(self):
        return tuple(len(zs) for zs in self.obs)

    def log_likelihood(self, i, label):
        """Exact ``phi_i`` at latent ``label`` for the vertex at position ``i``."""
        return float(sum(self.loglik[label, z] for z in self.obs[i]))

    def likelihood_factors(self):
        """The ``Phi_2`` factors, one single-vertex table per vertex with data."""
        out = []
        for v, zs in zip(self.vertices, self.obs):
            if zs:
                table = self.loglik[:, list(zs)].sum(axis=1)
                out.append(Factor((v,), table))
        return out

    def to_json(self):
        return {
            "delta": self.delta,
            "counts": {str(v): len(zs) for v, zs in zip(self.vertices, self.obs)},
            "obs": {str(v): list(zs) for v, zs in zip(self.vertices, self.obs)},
            "loglik": self.loglik.tolist(),
        }

    @classmethod
    def from_json(cls, obj, vertices=None, q=2):
        """Inverse of :meth:`to_json`; ``vertices`` maps the string keys back."""
        keys = list(obj["obs"].keys())
        if vertices is None:
            vertices = keys
        lookup = {str(v): v for v in vertices}
        obs = [tuple(obj["obs"].get(str(v), [])) for v in vertices]
        counts = obj.get("counts")
        if counts is not None:
            for v, zs in zip(vertices, obs):
                if int(counts.get(str(v), len(zs))) != len(zs):
                    raise ValueError(f"count for vertex {v!r} does not match its observations")
        unknown = set(keys) - set(lookup)
        if unknown:
            raise ValueError(f"observations for unknown vertices {sorted(unknown)}")
        if obj.get("loglik") is not None:
            return cls(vertices, obs, obj["loglik"], obj.get("delta"))
        return cls.flip_noise(vertices, obs, obj["delta"], q)

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)


@dataclass(frozen=True)
class LikelihoodFactor:
    """The data factor ``phi_i`` of the vertex at position ``axis``."""

    vertex: object
    axis: int


class AugmentedState(NamedTuple):
    sigma: tuple
    a: tuple


def likelihood_factor(Z, vertex):
    return LikelihoodFactor(vertex, Z.vertices.index(vertex))


def full_subsample(Z):
    return tuple(tuple(range(n)) for n in Z.counts)


def check_subsample(a, Z, sizes=None):
    """Validate a subsample vector against the observation counts."""
    if len(a) != len(Z.vertices):
        raise SubsampleError("subsample vector needs one subset per vertex")
    for i, (ai, n) in enumerate(zip(a, Z.counts)):
        if len(set(ai)) != len(ai) or any(not 0 <= j < n for j in ai):
            raise SubsampleError(f"subset at vertex position {i} is not a subset of [n_i]")
        if n > 0 and not ai:
            raise SubsampleError(f"empty subsample at vertex position {i} with n_i = {n}")
        if sizes is not None and len(ai) != sizes[i]:
            raise SubsampleError(f"subset at vertex position {i} has size {len(ai)}, expected {sizes[i]}")


def random_subsample(Z, sizes, rng):
    """Uniformly random subsample vector with the given per-vertex sizes."""
    sizes = _sizes(Z, sizes)
    return tuple(
        tuple(sorted(int(j) for j in rng.choice(n, size=m, replace=False))) if n else ()
        for n, m in zip(Z.counts, sizes)
    )


def _sizes(Z, m):
    if isinstance(m, (int, np.integer)):
        sizes = tuple(min(int(m), n) for n in Z.counts)
    else:
        sizes = tuple(int(x) for x in m)
    if len(sizes) != len(Z.counts):
        raise ValueError("need one subsample size per vertex")
    for n, s in zip(Z.counts, sizes):
        if n and not 1 <= s <= n:
            raise SubsampleError("subsample sizes must satisfy 1 <= m_i <= n_i")
        if not n and s:
            raise SubsampleError("a vertex without observations has an empty subsample")
    return sizes


# --------------------------------------------------------------------------
# estimator


def _lhat(Z, i, label, subset):
    if not subset:
        if Z.counts[i]:
            raise SubsampleError(f"empty subsample at vertex position {i} with n_i = {Z.counts[i]}")
        return 0.0
    zs = Z.obs[i]
    total = sum(Z.loglik[label, zs[j]] for j in subset)
    return Z.counts[i] / len(subset) * float(total)


def estimate_log_likelihood(phi, sigma, a, Z):
    """Plug-in value of one factor at ``(sigma, a)``.

    Prior factors (:class:`~pertgibbs.factor_graph.Factor`) are returned
    exactly; a :class:`LikelihoodFactor` is estimated from its subsample as
    ``(n_i / |a_i|) * sum_{j in a_i} loglik[sigma(i), z_ij]``.

    Raises
    ------
    SubsampleError
        If ``a_i`` is empty while the vertex has observations.
    """
    if isinstance(phi, LikelihoodFactor):
        return _lhat(Z, phi.axis, sigma[phi.axis], a[phi.axis])
    return phi(sigma)


def _weight(weights, i, subset):
    if weights is None:
        return 1.0
    w = float(weights(i, subset))
    if not w > 0:
        raise ValueError("subsample weights must be positive")
    return w


# --------------------------------------------------------------------------
# the alternating sampler


def alternating_step(g, state, Z, rng, weights=None):
    """One step of the alternating Gibbs sampler on ``Omega x A``.

    1. Draw a site ``v`` uniformly and relabel it with
       ``p1(i) ~ exp(s_i^a)``, where ``s_i^a`` adds the prior factors
       depending on ``v`` and the subsample estimate of ``phi_v``.
    2. Draw a site ``v'`` uniformly, pick ``z1`` uniformly from ``a_{v'}`` and
       ``z2`` uniformly from its complement, and keep or swap them with
       ``p2(i) ~ g_{v'}(a^(i)) exp(l_i)``. When the complement is empty the
       swap phase does nothing.

    Parameters
    ----------
    g : FactorGraph
        Prior graph (the ``Phi_1`` factors).
    state : AugmentedState
    Z : ObservationSet
    rng : numpy.random.Generator
    weights : callable, optional
        ``weights(i, subset) -> g_i(subset)``; uniform when omitted.
    """
    sigma, a = state
    n = len(g.vertices)
    v = int(rng.integers(n))
    s = _local_scores(g, sigma, v)
    if Z.counts[v]:
        s = s + np.array([_lhat(Z, v, i, a[v]) for i in range(g.q)])
    k = int(rng.choice(g.q, p=softmax(s)))
    eta = list(sigma)
    eta[v] = k
    eta = tuple(eta)

    vp = int(rng.integers(n))
    cur = a[vp]
    nv = Z.counts[vp]
    if len(cur) == nv:
        return AugmentedState(eta, a)
    outside = [j for j in range(nv) if j not in cur]
    z1 = cur[int(rng.integers(len(cur)))]
    z2 = outside[int(rng.integers(len(outside)))]
    alt = tuple(sorted([j for j in cur if j != z1] + [z2]))
    l1 = _lhat(Z, vp, eta[vp], cur)
    l2 = _lhat(Z, vp, eta[vp], alt)
    w1 = math.log(_weight(weights, vp, cur)) + l1
    w2 = math.log(_weight(weights, vp, alt)) + l2
    p_swap = 1.0 / (1.0 + math.exp(w1 - w2)) if w1 - w2 < 700 else 0.0
    if rng.random() < p_swap:
        b = list(a)
        b[vp] = alt
        return AugmentedState(eta, tuple(b))
    return AugmentedState(eta, a)


# --------------------------------------------------------------------------
# exact enumeration


class AugmentedSpace:
    """State index over ``Omega x A`` with ``sigma`` as the slow coordinate.

    ``A`` is the product over vertices of all ``m_i``-subsets of ``[n_i]`` in
    lexicographic order.
    """

    def __init__(self, omega, subsets):
        self.omega = omega
        self.subsets = tuple(tuple(s) for s in subsets)
        self.radix = tuple(len(s) for s in self.subsets)
        self.n_aux = int(np.prod(self.radix, dtype=np.int64)) if self.radix else 1
        self._subset_pos = [{c: k for k, c in enumerate(s)} for s in self.subsets]

    def __len__(self):
        return len(self.omega) * self.n_aux

    def __eq__(self, other):
        return isinstance(other, AugmentedSpace) and self.omega == other.omega and self.subsets == other.subsets

    def __hash__(self):
        return hash((self.omega, self.subsets))

    def __repr__(self):
        return f"AugmentedSpace(|Omega|={len(self.omega)}, |A|={self.n_aux})"

    def aux_label(self, k):
        digits = np.unravel_index(k, self.radix) if self.radix else ()
        return tuple(self.subsets[i][int(d)] for i, d in enumerate(digits))

    def aux_position(self, a):
        digits = tuple(self._subset_pos[i][tuple(ai)] for i, ai in enumerate(a))
        return int(np.ravel_multi_index(digits, self.radix)) if self.radix else 0

    def label(self, i):
        s, k = divmod(i, self.n_aux)
        return AugmentedState(self.omega.label(s), self.aux_label(k))

    def position(self, state):
        sigma, a = state
        return self.omega.position(sigma) * self.n_aux + self.aux_position(a)

    def labels(self):
        return [self.label(i) for i in range(len(self))]


def augmented_space(g, Z, m):
    sizes = _sizes(Z, m)
    subsets = [list(itertools.combinations(range(n), s)) for n, s in zip(Z.counts, sizes)]
    return AugmentedSpace(g.space, subsets)


def _lhat_tables(Z, space):
    """Per vertex, array ``[label, subset]`` of subsample estimates."""
    out = []
    for i, subs in enumerate(space.subsets):
        n = Z.counts[i]
        t = np.zeros((Z.q, len(subs)))
        if n:
            zs = np.asarray(Z.obs[i])
            for c, sub in enumerate(subs):
                t[:, c] = n / len(sub) * Z.loglik[:, zs[list(sub)]].sum(axis=1)
        out.append(t)
    return out


def _log_g_tables(weights, space):
    return [
        np.array([math.log(_weight(weights, i, sub)) for sub in subs]) for i, subs in enumerate(space.subsets)
    ]


def augmented_log_weights(g, Z, m, weights=None, cap=AUGMENTED_CAP):
    """Unnormalized ``log nu_hat`` as an array with axes ``(sigma_1..sigma_n, a_1..a_n)``."""
    if Z.q != g.q or Z.vertices != g.vertices:
        raise ValueError("observations and graph disagree on vertices or labels")
    space = augmented_space(g, Z, m)
    check_budget(len(space), cap)
    n = len(g.vertices)
    logw = g.log_weights(cap).reshape(g.space.shape + (1,) * n)
    lhat = _lhat_tables(Z, space)
    logg = _log_g_tables(weights, space)
    for i in range(n):
        t = lhat[i] + logg[i][None, :]
        shape = [1] * (2 * n)
        shape[i] = g.q
        shape[n + i] = t.shape[1]
        logw = logw + t.reshape(shape)
    return logw, space


def exact_targets(g, Z, m, weights=None, cap=AUGMENTED_CAP):
    """Enumerated stationary law of the alternating sampler and its ``Omega`` marginal.

    Returns
    -------
    nu_hat : DenseDistribution
        ``nu_hat(sigma, a) ~ g(a) exp(sum_phi L_hat_phi(sigma, a))`` over an
        :class:`AugmentedSpace`.
    nu : DenseDistribution
        Its marginal over ``[q]^V``.
    """
    logw, space = augmented_log_weights(g, Z, m, weights, cap)
    nu_hat = DenseDistribution.from_log_weights(logw.reshape(-1), space)
    nu = nu_hat.mass.reshape(len(space.omega), space.n_aux).sum(axis=1)
    return nu_hat, DenseDistribution(nu / nu.sum(), space.omega)


def posterior_graph(g, Z):
    """Prior graph with the exact likelihood factors ``Phi_2`` added."""
    return g.with_factors(Z.likelihood_factors())


def _sigma_phase_conditionals(g, Z, space):
    """``p1`` for every site: array ``[sigma..., a_v, label]`` per site ``v``."""
    n = len(g.vertices)
    lhat = _lhat_tables(Z, space)
    out = []
    for v in range(n):
        local = np.zeros((1,) * n)
        for k in g.dependency[v]:
            local = local + broadcast_table(g.factors[k], n)
        local = np.broadcast_to(local, g.space.shape)
        # move the label of v to the last axis, then add the estimate
        local = np.moveaxis(local, v, -1)[..., None, :] + lhat[v].T[(None,) * (n - 1)]
        local = local - local.max(axis=-1, keepdims=True)
        p = np.exp(local)
        out.append(p / p.sum(axis=-1, keepdims=True))
    return out


def alternating_phase_kernels(g, Z, m, weights=None, cap=KERNEL_CAP):
    """Exact matrices of the two phases, ``(K_sigma, K_a)``, over the augmented space."""
    space = augmented_space(g, Z, m)
    check_budget(len(space), cap)
    n = len(g.vertices)
    N = len(space)
    A = space.n_aux
    aux = [space.aux_label(k) for k in range(A)]
    lhat = _lhat_tables(Z, space)
    logg = _log_g_tables(weights, space)
    p1 = _sigma_phase_conditionals(g, Z, space)
    radix = space.radix
    digits = [np.unravel_index(k, radix) if radix else () for k in range(A)]
    strides = [g.q ** (n - 1 - v) for v in range(n)]

    Ks = np.zeros((N, N))
    Ka = np.zeros((N, N))
    for s in range(len(space.omega)):
        sigma = space.omega.label(s)
        rest = [tuple(sigma[:v] + sigma[v + 1:]) for v in range(n)]
        for k in range(A):
            row = s * A + k
            for v in range(n):
                probs = p1[v][rest[v] + (int(digits[k][v]),)]
                for i in range(g.q):
                    t = s + (i - sigma[v]) * strides[v]
                    Ks[row, t * A + k] += probs[i] / n
            for vp in range(n):
                cur = aux[k][vp]
                nv = Z.counts[vp]
                if len(cur) == nv:
                    Ka[row, row] += 1.0 / n
                    continue
                c1 = space._subset_pos[vp][cur]
                outside = [j for j in range(nv) if j not in cur]
                pick = 1.0 / (n * len(cur) * len(outside))
                for z1 in cur:
                    for z2 in outside:
                        alt = tuple(sorted([j for j in cur if j != z1] + [z2]))
                        c2 = space._subset_pos[vp][alt]
                        w1 = logg[vp][c1] + lhat[vp][sigma[vp], c1]
                        w2 = logg[vp][c2] + lhat[vp][sigma[vp], c2]
                        p_swap = 1.0 / (1.0 + math.exp(min(w1 - w2, 700.0)))
                        d = list(digits[k])
                        d[vp] = c2
                        k2 = int(np.ravel_multi_index(tuple(d), radix))
                        Ka[row, s * A + k2] += pick * p_swap
                        Ka[row, row] += pick * (1.0 - p_swap)
    return StochasticKernel(Ks, space), StochasticKernel(Ka, space)


def alternating_kernel(g, Z, m, weights=None, cap=KERNEL_CAP):
    """Exact transition matrix ``K = K_sigma K_a`` of :func:`alternating_step`."""
    Ks, Ka = alternating_phase_kernels(g, Z, m, weights, cap)
    prod = Ks.rows @ Ka.rows
    return StochasticKernel(prod / prod.sum(axis=1, keepdims=True), Ks.index)


# --------------------------------------------------------------------------
# kernel perturbation


def _compact_rows(p, sigma, q):
    """Compact Gibbs rows from site conditionals.

    ``p`` has shape ``(..., n, q)``; the result has shape ``(..., 1 + n(q-1))``
    with the holding mass first and then every single-site move in
    ``(site, label != sigma[site])`` order.
    """
    n = p.shape[-2]
    stay = np.zeros(p.shape[:-2])
    moves = []
    for v in range(n):
        stay = stay + p[..., v, sigma[v]]
        for i in range(q):
            if i != sigma[v]:
                moves.append(p[..., v, i])
    return np.concatenate([stay[..., None], np.stack(moves, axis=-1)], axis=-1) / n


def _compact_targets(space, sigma, q):
    n = len(sigma)
    out = [space.position(sigma)]
    for v in range(n):
        for i in range(q):
            if i != sigma[v]:
                s = list(sigma)
                s[v] = i
                out.append(space.position(tuple(s)))
    return out


def perturbation_sup(g, Z, m, metric=TV, weights=None, cap=AUGMENTED_CAP):
    """``max over (sigma, a)`` of ``d(Q(sigma, .), K((sigma, a), .)|_Omega)``.

    ``Q`` is the exact-posterior Gibbs sampler and ``K`` the alternating
    sampler; only the ``sigma`` phase of ``K`` affects its ``Omega`` marginal.
    Both rows are supported on ``sigma`` and its single-site neighbours, so
    they are compared on that support.
    """
    space = augmented_space(g, Z, m)
    check_budget(len(space), cap)
    n = len(g.vertices)
    q = g.q
    post = posterior_graph(g, Z)
    lhat = _lhat_tables(Z, space)
    aux_digits = (
        np.stack(np.unravel_index(np.arange(space.n_aux), space.radix), axis=1)
        if space.radix else np.zeros((1, 0), dtype=int)
    )
    ref = None if metric.reference is None else metric.reference.mass
    worst = 0.0
    for s in range(len(space.omega)):
        sigma = space.omega.label(s)
        exact = np.stack([softmax(_local_scores(post, sigma, v)) for v in range(n)])
        prior = [_local_scores(g, sigma, v) for v in range(n)]
        est = np.empty((space.n_aux, n, q))
        for v in range(n):
            scores = prior[v][None, :] + lhat[v].T  # [subset, label]
            scores = scores - scores.max(axis=1, keepdims=True)
            pv = np.exp(scores)
            pv /= pv.sum(axis=1, keepdims=True)
            est[:, v, :] = pv[aux_digits[:, v]]
        q_row = _compact_rows(exact, sigma, q)[None, :]
        k_rows = _compact_rows(est, sigma, q)
        qb = np.broadcast_to(q_row, k_rows.shape)
        if ref is None:
            d = metric.rowwise(qb, k_rows)
        else:
            d = _l2_rows(qb, k_rows, ref[_compact_targets(space.omega, sigma, q)])
        worst = max(worst, float(d.max()))
    return worst
