"""Greedy Markovian coupling, coupling-time tails and decay-of-correlation checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .factor_graph import broadcast_table, check_budget, graph_ball, ENUMERATION_CAP
from .measures import StochasticKernel

MAX_EXACT_BOUNDARY = 12
FIT_FLOOR = 1e-12


# --------------------------------------------------------------------------
# greedy coupling


@dataclass(frozen=True)
class _Overlap:
    delta: float
    common: np.ndarray  # cdf of the overlap measure, or None
    resid_x: np.ndarray  # cdf of the x residual, or None
    resid_y: np.ndarray


def _cdf(w):
    c = np.cumsum(w)
    return c / c[-1]


def _overlap(K, x, y):
    hit = K._overlaps.get((x, y))
    if hit is not None:
        return hit
    a, b = K.rows[x], K.rows[y]
    m = np.minimum(a, b)
    delta = float(m.sum())
    common = _cdf(m) if delta > 0 else None
    if delta < 1:
        rx, ry = _cdf(a - m), _cdf(b - m)
    else:
        rx = ry = None
    hit = _Overlap(min(delta, 1.0), common, rx, ry)
    K._overlaps[(x, y)] = hit
    return hit


def _draw(cdf, u):
    return int(min(np.searchsorted(cdf, u, side="right"), cdf.size - 1))


def greedy_coupled_step(K, x, y, rng):
    """One step of the greedy Markovian coupling of two copies of ``K``.

    With probability ``delta = 1 - d_TV(K(x, .), K(y, .))`` both copies move
    to a common state drawn from the normalized overlap ``min(K(x, .), K(y, .))``;
    otherwise they move independently according to the normalized residuals.
    Each output is marginally distributed as the corresponding row of ``K``.
    Overlap decompositions are memoized per ordered pair on the kernel.

    Parameters
    ----------
    K : StochasticKernel
    x, y : int
        Current positions of the two copies.
    rng : numpy.random.Generator

    Returns
    -------
    (int, int)
    """
    if x == y:
        z = _draw(_cdf(K.rows[x]), rng.random())
        return z, z
    ov = _overlap(K, x, y)
    if rng.random() < ov.delta:
        z = _draw(ov.common, rng.random())
        return z, z
    return _draw(ov.resid_x, rng.random()), _draw(ov.resid_y, rng.random())


def _sample_rows(weights, u):
    """Inverse-cdf draws from the rows of a non-negative weight matrix."""
    c = np.cumsum(weights, axis=1)
    total = c[:, -1:]
    idx = (c < u[:, None] * total).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1)


def coupled_steps(K, xs, ys, rng):
    """Vectorized :func:`greedy_coupled_step` over arrays of current positions."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    a, b = K.rows[xs], K.rows[ys]
    m = np.minimum(a, b)
    delta = m.sum(axis=1)
    same = xs == ys
    meet = same | (rng.random(xs.size) < delta)
    common = _sample_rows(np.where(same[:, None], a, m), rng.random(xs.size))
    ux, uy = rng.random(xs.size), rng.random(xs.size)
    nx = np.where(meet, common, _sample_rows(np.maximum(a - m, 0.0), ux))
    ny = np.where(meet, common, _sample_rows(np.maximum(b - m, 0.0), uy))
    return nx, ny


def coupling_tail(K, x, y, t_max, replicas, rng):
    """Monte Carlo survival curve ``P(tau > t)`` of the greedy coupling, ``t = 0..t_max``.

    ``tau`` is the first time the two copies agree. ``K`` may also be a
    sequence of kernels on a common space, in which case step ``t -> t + 1``
    uses ``K[t]`` (a time-inhomogeneous chain).

    Returns
    -------
    numpy.ndarray
        Length ``t_max + 1``, non-increasing.
    """
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    kernels = [K] * t_max if isinstance(K, StochasticKernel) else list(K)
    if len(kernels) < t_max:
        raise ValueError("need one kernel per step")
    xs = np.full(replicas, x)
    ys = np.full(replicas, y)
    met = xs == ys
    surv = np.empty(t_max + 1)
    surv[0] = 1.0 - met.mean()
    for t in range(t_max):
        xs, ys = coupled_steps(kernels[t], xs, ys, rng)
        met |= xs == ys
        surv[t + 1] = 1.0 - met.mean()
    return surv


def survival_stderr(surv, replicas):
    """Binomial standard error of each survival estimate."""
    surv = np.asarray(surv)
    return np.sqrt(surv * (1.0 - surv) / replicas)


# --------------------------------------------------------------------------
# decay of correlations


@dataclass(frozen=True)
class DecayEstimate:
    """Worst boundary-pair Hellinger distances for one block, by ball radius.

    ``rows`` holds ``(r, distance, exact)`` where ``exact`` is False when the
    boundary was too large to enumerate and the distance is a sampled lower
    bound. ``fitted_m`` and ``fitted_C1`` fit ``distance ~ C1 exp(-m r)``;
    ``fitted_m`` is ``inf`` when every distance is (numerically) zero and
    ``nan`` when only one radius has a positive distance.
    """

    block: int
    rows: tuple
    fitted_m: float
    fitted_C1: float

    @property
    def distances(self):
        return [d for _, d, _ in self.rows]

    def decays(self, min_rate=0.25):
        """Whether the fitted rate indicates decay of correlations."""
        if math.isinf(self.fitted_m):
            return True
        return bool(self.fitted_m > min_rate)


def fit_decay(r_values, distances):
    """Least-squares fit of ``log d = log C1 - m r`` on distances above 1e-12."""
    pts = [(r, d) for r, d in zip(r_values, distances) if d > FIT_FLOOR]
    if not pts:
        return math.inf, 0.0
    if len(pts) == 1:
        return math.nan, math.nan
    r = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(r, y, 1)
    return float(-slope), float(math.exp(intercept))


def worst_pair_hellinger(conds):
    """Largest Hellinger distance between any two rows of a matrix of distributions."""
    conds = np.asarray(conds, dtype=float)
    if conds.shape[0] < 2:
        return 0.0
    s = np.sqrt(conds)
    gram = s @ s.T
    d2 = 2.0 - 2.0 * gram
    # the Gram form cancels badly near zero; recompute the winning pair directly
    i, k = np.unravel_index(int(np.argmax(d2)), d2.shape)
    return float(math.sqrt(((s[i] - s[k]) ** 2).sum()))


def boundary_conditionals(g, U, ball, *, cap=ENUMERATION_CAP, max_boundary=MAX_EXACT_BOUNDARY,
                          n_random=256, rng=None):
    """Conditional laws of the vertices ``U`` given each labelling of the ball's outer boundary.

    Returns ``(conds, exact)`` where ``conds`` has one row per boundary
    labelling with positive probability, columns indexing ``[q]^U`` in graph
    vertex order.
    """
    ball = set(ball)
    boundary = set()
    for v in ball:
        boundary |= g.neighbors[v] - ball
    local = [v for v in g.vertices if v in ball or v in boundary]
    check_budget(g.q ** len(local), cap)
    pos = {v: i for i, v in enumerate(local)}
    n = len(local)
    logw = np.zeros((g.q,) * n)
    for f in g.factors:
        if not set(f.scope) & ball:
            continue
        sub = type(f)(f.scope, f.table, tuple(pos[v] for v in f.scope))
        logw = logw + broadcast_table(sub, n)
    logw = np.broadcast_to(logw, (g.q,) * n)
    u_ax = [pos[v] for v in local if v in U]
    b_ax = [pos[v] for v in local if v in boundary]
    drop = tuple(pos[v] for v in local if v in ball and v not in U)
    if drop:
        logw = logsumexp(logw, axis=drop, keepdims=True)
    # reorder to (boundary..., U...) and flatten
    keep_axes = b_ax + u_ax
    logw = logw.squeeze(axis=drop) if drop else logw
    remaining = [a for a in range(n) if a not in drop]
    perm = [remaining.index(a) for a in keep_axes]
    logw = np.transpose(logw, perm).reshape(g.q ** len(b_ax), g.q ** len(u_ax))

    exact = len(b_ax) <= max_boundary
    if not exact:
        rng = np.random.default_rng(0) if rng is None else rng
        picks = rng.integers(g.q, size=(n_random, len(b_ax)))
        rows = np.ravel_multi_index(picks.T, (g.q,) * len(b_ax))
        logw = logw[np.unique(rows)]
    norm = logsumexp(logw, axis=1, keepdims=True)
    ok = np.isfinite(norm[:, 0])
    conds = np.exp(logw[ok] - norm[ok])
    return conds, exact


def decay_estimate(g, fs, j, r_values, *, cap=ENUMERATION_CAP, max_boundary=MAX_EXACT_BOUNDARY,
                   n_random=256, rng=None):
    """Exact worst-case boundary influence on block ``j`` at each radius.

    For each ``r`` computes the maximum over boundary clamps ``sigma, eta`` of
    ``d_H(mu|_{S_j u Pi_j}^{sigma}, mu|_{S_j u Pi_j}^{eta})`` where the clamps
    fix everything outside ``B_r(S_j u Pi_j)``. Only the outer boundary of the
    ball matters, so clamps range over its labellings: exhaustively up to
    ``max_boundary`` sites, by ``n_random`` random labellings beyond that (the
    reported value is then a lower bound).

    Returns
    -------
    DecayEstimate
    """
    U = fs.block_vertices(j)
    rows = []
    for r in r_values:
        ball = graph_ball(g, U, r)
        conds, exact = boundary_conditionals(
            g, U, ball, cap=cap, max_boundary=max_boundary, n_random=n_random, rng=rng
        )
        rows.append((int(r), worst_pair_hellinger(conds), exact))
    m, c1 = fit_decay([r for r, _, _ in rows], [d for _, d, _ in rows])
    return DecayEstimate(j, tuple(rows), m, c1)


def worst_block_decay(g, fs, r_values, blocks=None, **kwargs):
    """:func:`decay_estimate` for every block (or ``blocks``), returning the slowest one.

    Blocks are ranked by fitted rate; a block whose rate could not be fitted
    (``nan``) counts as the slowest.
    """
    if blocks is None:
        blocks = range(len(fs))
    ests = [decay_estimate(g, fs, j, r_values, **kwargs) for j in blocks]
    return min(ests, key=lambda e: -math.inf if math.isnan(e.fitted_m) else e.fitted_m)
