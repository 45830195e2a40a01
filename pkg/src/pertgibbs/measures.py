r"""Exact distances, stationary laws and mixing times on finite state spaces.

Everything here works on explicitly enumerated spaces. A distribution is a
mass vector paired with a *state index* (a bijection between abstract states
and positions); a kernel is a dense row-stochastic matrix sharing the same
kind of index.

Two state indices are provided:

* :class:`LabelIndex` for arbitrary hashable labels, and
* :class:`ConfigurationSpace` for :math:`[q]^V`, laid out row-major with the
  first vertex as the slowest-varying coordinate (the layout of
  ``np.ravel_multi_index``).

Total variation uses the half-L1 convention, :math:`d_{TV} = \tfrac12\sum_i|p_i-q_i|`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    BudgetExceededError,
    ConditioningError,
    ConvergenceError,
    DimensionError,
    DomainError,
    ReferenceMeasureError,
    StructureError,
)

MASS_TOL = 1e-12
DIRECT_SOLVE_MAX = 4096
POWER_TOL = 1e-13
POWER_MAX_ITER = 10**7
MIXING_CAP = 10**6


# --------------------------------------------------------------------------
# state indices


class LabelIndex:
    """State index over an explicit list of hashable labels."""

    def __init__(self, labels):
        self._labels = tuple(labels)
        self._pos = {lab: i for i, lab in enumerate(self._labels)}
        if len(self._pos) != len(self._labels):
            raise ValueError("state labels must be distinct")

    @classmethod
    def range(cls, n):
        return cls(range(n))

    def __len__(self):
        return len(self._labels)

    def __eq__(self, other):
        return isinstance(other, LabelIndex) and self._labels == other._labels

    def __hash__(self):
        return hash(self._labels)

    def __repr__(self):
        if len(self) <= 6:
            return f"LabelIndex({list(self._labels)!r})"
        return f"LabelIndex(<{len(self)} labels>)"

    def label(self, i):
        return self._labels[i]

    def position(self, label):
        try:
            return self._pos[label]
        except KeyError:
            raise KeyError(f"unknown state {label!r}") from None

    def labels(self):
        return list(self._labels)


class ConfigurationSpace:
    """The product space ``[q]^V`` with labels ``0..q-1`` at each vertex.

    Configurations are tuples of labels ordered like ``vertices``. Position
    ``i`` corresponds to ``np.unravel_index(i, (q,) * len(vertices))``.
    """

    def __init__(self, vertices, q):
        self.vertices = tuple(vertices)
        self.q = int(q)
        if self.q < 1:
            raise ValueError("label count must be positive")
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError("vertices must be distinct")
        self.shape = (self.q,) * len(self.vertices)

    def __len__(self):
        return self.q ** len(self.vertices)

    def __eq__(self, other):
        return (
            isinstance(other, ConfigurationSpace)
            and self.vertices == other.vertices
            and self.q == other.q
        )

    def __hash__(self):
        return hash((self.vertices, self.q))

    def __repr__(self):
        return f"ConfigurationSpace(vertices={list(self.vertices)!r}, q={self.q})"

    def axis(self, vertex):
        return self.vertices.index(vertex)

    def label(self, i):
        return tuple(int(x) for x in np.unravel_index(i, self.shape))

    def position(self, config):
        if len(config) != len(self.vertices):
            raise DimensionError("configuration length does not match the vertex set")
        return int(np.ravel_multi_index(tuple(config), self.shape))

    def labels(self):
        return [self.label(i) for i in range(len(self))]

    def all_configurations(self):
        """Array of shape ``(q**|V|, |V|)`` listing every configuration."""
        grids = np.indices(self.shape).reshape(len(self.vertices), -1)
        return grids.T.copy()


def _check_index(index, n):
    if index is None:
        return LabelIndex.range(n)
    if len(index) != n:
        raise DimensionError(f"state index has {len(index)} states, mass has {n}")
    return index


# --------------------------------------------------------------------------
# distributions and kernels


@dataclass(frozen=True, eq=False)
class DenseDistribution:
    """Probability vector over an explicitly indexed finite space."""

    mass: np.ndarray
    index: object = None

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float, copy=True).reshape(-1)
        if mass.size < 1:
            raise ValueError("support_size must be at least 1")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise ValueError("masses must be finite and non-negative")
        total = mass.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total!r}, not 1")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "index", _check_index(self.index, mass.size))

    @classmethod
    def normalized(cls, weights, index=None):
        """Build a distribution from non-negative weights by normalizing them."""
        w = np.asarray(weights, dtype=float).reshape(-1)
        total = w.sum()
        if not total > 0:
            raise ValueError("weights must have positive total")
        return cls(w / total, index)

    @classmethod
    def from_log_weights(cls, logw, index=None):
        logw = np.asarray(logw, dtype=float).reshape(-1)
        top = np.max(logw)
        if not np.isfinite(top):
            raise ValueError("all log weights are -inf")
        w = np.exp(logw - top)
        return cls(w / w.sum(), index)

    @property
    def support_size(self):
        return self.mass.size

    def __len__(self):
        return self.mass.size

    def __repr__(self):
        return f"DenseDistribution(support_size={self.support_size}, index={self.index!r})"

    def prob(self, state):
        return float(self.mass[self.index.position(state)])

    def probability_of(self, positions):
        """Total mass of a collection of positions."""
        return float(self.mass[np.asarray(list(positions), dtype=int)].sum())


@dataclass(frozen=True, eq=False)
class StochasticKernel:
    """Dense row-stochastic matrix over an indexed state space."""

    rows: np.ndarray
    index: object = None
    _overlaps: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, copy=True)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] < 1:
            raise ValueError("kernel must be a non-empty square matrix")
        if not np.all(np.isfinite(rows)) or np.any(rows < 0):
            raise ValueError("kernel entries must be finite and non-negative")
        sums = rows.sum(axis=1)
        bad = np.abs(sums - 1.0) > MASS_TOL
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValueError(f"row {i} sums to {sums[i]!r}, not 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "index", _check_index(self.index, rows.shape[0]))

    @classmethod
    def normalized(cls, weights, index=None):
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(axis=1, keepdims=True), index)

    @property
    def size(self):
        return self.rows.shape[0]

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"StochasticKernel(size={self.size}, index={self.index!r})"

    def row(self, x):
        """Row ``x`` (a position) as a :class:`DenseDistribution`."""
        return DenseDistribution(self.rows[x], self.index)

    def identity_like(self):
        return StochasticKernel(np.eye(self.size), self.index)


def _same_space(a, b, what="distributions"):
    if len(a) != len(b) or a.index != b.index:
        raise DimensionError(f"{what} live on different state spaces")


# --------------------------------------------------------------------------
# distances


def _tv_rows(p, q):
    return 0.5 * np.abs(p - q).sum(axis=-1)


def _hellinger_rows(p, q):
    d = np.sqrt(p) - np.sqrt(q)
    return np.sqrt((d * d).sum(axis=-1))


def _l2_rows(p, q, ref):
    diff = p - q
    if ref is None:
        return np.sqrt((diff * diff).sum(axis=-1))
    ref = np.asarray(ref, dtype=float)
    zero = ref <= 0
    if np.any(zero):
        offending = np.broadcast_to(zero, diff.shape) & (diff != 0)
        if np.any(offending):
            raise ReferenceMeasureError(
                "reference measure has zero mass at a point where the two measures differ"
            )
        ref = np.where(zero, 1.0, ref)
        diff = np.where(zero, 0.0, diff)
    return np.sqrt((diff * diff / ref).sum(axis=-1))


def tv_distance(p, q):
    """Total variation distance, ``0.5 * sum(|p_i - q_i|)``.

    Raises
    ------
    DimensionError
        If ``p`` and ``q`` are indexed differently.
    """
    _same_space(p, q)
    return float(_tv_rows(p.mass, q.mass))


def hellinger_distance(p, q):
    r"""Hellinger distance :math:`\sqrt{\sum_i(\sqrt{p_i}-\sqrt{q_i})^2}`, in ``[0, sqrt(2)]``."""
    _same_space(p, q)
    return float(_hellinger_rows(p.mass, q.mass))


def l2_distance(p, q, reference=None):
    r"""L2 distance between the densities of ``p`` and ``q`` relative to ``reference``.

    Computes :math:`\sqrt{\sum_i (p_i/\lambda_i - q_i/\lambda_i)^2\,\lambda_i}`.
    With ``reference=None`` the counting measure is used, which reduces to
    the Euclidean norm of ``p - q``.

    Raises
    ------
    ReferenceMeasureError
        If the reference has zero mass at a point where ``p`` and ``q`` differ.
    """
    _same_space(p, q)
    ref = None
    if reference is not None:
        _same_space(p, reference)
        ref = reference.mass
    return float(_l2_rows(p.mass, q.mass, ref))


@dataclass(frozen=True, eq=False)
class Metric:
    """A distance between probability vectors: ``tv``, ``hellinger`` or ``l2``.

    For ``l2`` the ``reference`` is the measure densities are taken against;
    ``None`` means the counting measure.
    """

    kind: str
    reference: DenseDistribution | None = None

    def __post_init__(self):
        if self.kind not in ("tv", "hellinger", "l2"):
            raise ValueError(f"unknown metric {self.kind!r}")
        if self.kind != "l2" and self.reference is not None:
            raise ValueError("only the l2 metric takes a reference measure")

    @classmethod
    def l2(cls, reference=None):
        return cls("l2", reference)

    @classmethod
    def l2_stationary(cls, kernel):
        """L2 against the stationary law of ``kernel`` (the unperturbed chain)."""
        return cls("l2", stationary_distribution(kernel))

    @classmethod
    def parse(cls, name, reference=None):
        name = name.lower().replace("_", "-")
        if name in ("tv", "total-variation"):
            return TV
        if name in ("h", "hellinger"):
            return HELLINGER
        if name in ("l2", "l2-counting"):
            return cls.l2(reference)
        raise ValueError(f"unknown metric {name!r}")

    def __repr__(self):
        if self.kind == "l2":
            ref = "counting" if self.reference is None else "custom"
            return f"Metric('l2', reference={ref})"
        return f"Metric({self.kind!r})"

    def rowwise(self, p, q):
        """Vectorized distance between matching rows of two arrays."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind == "tv":
            return _tv_rows(p, q)
        if self.kind == "hellinger":
            return _hellinger_rows(p, q)
        ref = None if self.reference is None else self.reference.mass
        return _l2_rows(p, q, ref)

    def __call__(self, p, q):
        _same_space(p, q)
        if self.reference is not None:
            _same_space(p, self.reference)
        return float(self.rowwise(p.mass, q.mass))


TV = Metric("tv")
HELLINGER = Metric("hellinger")


def kernel_distance(Q, K, metric=TV):
    """Largest row-wise distance ``max_x d(Q(x, .), K(x, .))``."""
    _same_space(Q, K, "kernels")
    if metric.reference is not None:
        _same_space(Q, metric.reference, "kernel and reference")
    return float(np.max(metric.rowwise(Q.rows, K.rows)))


# --------------------------------------------------------------------------
# stationary laws and mixing


def _closed_classes(rows):
    graph = csr_matrix(rows > 0)
    ncomp, labels = connected_components(graph, directed=True, connection="strong")
    if ncomp == 1:
        return 1
    # a class is closed when no edge leaves it
    src, dst = graph.nonzero()
    leaving = np.zeros(ncomp, dtype=bool)
    leaving[labels[src][labels[src] != labels[dst]]] = True
    return int(np.count_nonzero(~leaving))


def _finish_stationary(pi, K):
    if np.any(pi < -1e-10):
        raise ConvergenceError("linear solve produced a signed vector; kernel is not ergodic")
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    resid = np.abs(pi @ K.rows - pi).sum()
    if resid > MASS_TOL:
        raise ConvergenceError(f"stationary residual {resid:.3e} exceeds {MASS_TOL}")
    return DenseDistribution(pi, K.index)


def stationary_distribution(K, *, max_iter=POWER_MAX_ITER):
    """Unique stationary law of ``K``.

    Kernels with at most 4096 states are solved directly from
    ``(K^T - I) pi = 0`` with the last equation replaced by normalization,
    followed by iterative refinement. Larger kernels use power iteration with
    tolerance 1e-13.

    Raises
    ------
    ConvergenceError
        If the kernel has more than one closed class, or power iteration does
        not converge within ``max_iter`` steps.
    """
    n = K.size
    if _closed_classes(K.rows) != 1:
        raise ConvergenceError("kernel is reducible: it has several closed classes")
    if n == 1:
        return DenseDistribution([1.0], K.index)
    if n <= DIRECT_SOLVE_MAX:
        A = K.rows.T - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        try:
            lu = scipy.linalg.lu_factor(A, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise ConvergenceError(str(exc)) from exc
        pi = scipy.linalg.lu_solve(lu, b)
        for _ in range(3):
            r = b - A @ pi
            if np.abs(r).sum() < 1e-15:
                break
            pi = pi + scipy.linalg.lu_solve(lu, r)
        return _finish_stationary(pi, K)

    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ K.rows
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < POWER_TOL:
            return _finish_stationary(nxt, K)
        pi = nxt
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def worst_start_distance(K, t, metric=TV, pi=None):
    """``sup_x d(K^t(x, .), pi)`` by exact matrix powering."""
    if pi is None:
        pi = stationary_distribution(K)
    P = np.linalg.matrix_power(K.rows, int(t))
    return float(np.max(metric.rowwise(P, pi.mass[None, :])))


def mixing_time(K, metric=TV, eps=0.25, *, cap=MIXING_CAP, pi=None):
    """Smallest ``t`` with ``sup_x d(K^t(x, .), pi) < eps``.

    The worst-start distance is non-increasing in ``t`` for every supported
    metric, so after a short linear scan the search proceeds by repeated
    squaring followed by bisection. All powers are exact dense products.

    Raises
    ------
    DomainError
        If ``eps`` is not in ``(0, 1)``.
    BudgetExceededError
        If the distance is still at least ``eps`` after ``cap`` steps.
    """
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    if pi is None:
        pi = stationary_distribution(K)
    target = pi.mass[None, :]
    rows = K.rows

    def dist(P):
        return float(np.max(metric.rowwise(P, target)))

    P = rows.copy()
    scan = min(64, cap)
    for t in range(1, scan + 1):
        if dist(P) < eps:
            return t
        P = P @ rows
    if scan == cap:
        raise BudgetExceededError(f"mixing time exceeds cap {cap}", cap)

    # powers[k] = K^(2^k)
    powers = [rows]
    while (1 << (len(powers) - 1)) < scan:
        powers.append(powers[-1] @ powers[-1])
    hi = 1 << (len(powers) - 1)
    while True:
        if hi >= cap:
            if dist(np.linalg.matrix_power(rows, cap)) >= eps:
                raise BudgetExceededError(f"mixing time exceeds cap {cap}", cap)
            hi = cap
            break
        if dist(powers[-1]) < eps:
            break
        powers.append(powers[-1] @ powers[-1])
        hi <<= 1

    def power(t):
        out = None
        k = 0
        while t:
            if t & 1:
                out = powers[k] if out is None else out @ powers[k]
            t >>= 1
            k += 1
        return out

    lo = scan  # dist(K^lo) >= eps
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if dist(power(mid)) < eps:
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------------------
# restrictions and conditionals


def _config_space(mu):
    if not isinstance(mu.index, ConfigurationSpace):
        raise TypeError("operation needs a distribution over a ConfigurationSpace")
    return mu.index


def conditional_marginal(mu, A, clamp=None):
    """Marginal of ``mu`` on vertex set ``A``, optionally after conditioning.

    Parameters
    ----------
    mu : DenseDistribution
        Distribution over a :class:`ConfigurationSpace`.
    A : iterable
        Vertices to keep. The result is ordered like the parent space.
    clamp : mapping, optional
        Labels for vertices outside ``A`` to condition on.

    Returns
    -------
    DenseDistribution
        Over ``ConfigurationSpace(A, q)``.

    Raises
    ------
    ConditioningError
        If the clamped event has probability zero.
    """
    space = _config_space(mu)
    keep = set(A)
    unknown = keep.difference(space.vertices)
    if unknown:
        raise ValueError(f"vertices {sorted(map(str, unknown))} are not in the space")
    clamp = dict(clamp or {})
    if keep & clamp.keys():
        raise ValueError("clamped vertices must lie outside A")
    for v, lab in clamp.items():
        if v not in space.vertices:
            raise ValueError(f"clamped vertex {v!r} is not in the space")
        if not 0 <= lab < space.q:
            raise ValueError(f"label {lab!r} out of range for q={space.q}")

    arr = mu.mass.reshape(space.shape)
    free = [v for v in space.vertices if v not in clamp]
    if clamp:
        sl = tuple(clamp[v] if v in clamp else slice(None) for v in space.vertices)
        arr = arr[sl]
    drop = tuple(i for i, v in enumerate(free) if v not in keep)
    out = arr.sum(axis=drop) if drop else arr
    total = out.sum()
    if not total > 0:
        raise ConditioningError("clamped event has probability zero")
    kept = tuple(v for v in space.vertices if v in keep)
    return DenseDistribution(np.asarray(out).reshape(-1) / total, ConfigurationSpace(kept, space.q))


def marginal(mu, A):
    """Restriction ``mu|_A``."""
    return conditional_marginal(mu, A)


def subadditivity_gap(mu, nu, fs):
    r"""Both sides of the Hellinger subadditivity inequality.

    Returns ``(lhs, rhs)`` with ``lhs = d_H^2(mu, nu)`` and
    ``rhs = sum_j d_H^2(mu|_{S_j u Pi_j}, nu|_{S_j u Pi_j})``.

    Raises
    ------
    StructureError
        If ``fs`` does not describe a factorization of either measure.
    """
    from .factor_graph import validate_factorization

    _same_space(mu, nu)
    for name, m in (("mu", mu), ("nu", nu)):
        check = validate_factorization(m, fs)
        if not check:
            raise StructureError(f"structure does not factorize {name}: {check.reason}")
    lhs = hellinger_distance(mu, nu) ** 2
    rhs = 0.0
    for S, P in fs.blocks:
        block = set(S) | set(P)
        rhs += hellinger_distance(marginal(mu, block), marginal(nu, block)) ** 2
    return lhs, rhs


# --------------------------------------------------------------------------
# closed-form bounds


def l2_perturbation_bound(kernel_dist, rho):
    """Upper bound ``d / sqrt((1 - rho)^2 - d^2)`` on the L2 distance of stationary laws.

    ``kernel_dist`` is the L2 kernel distance and ``rho`` the geometric
    convergence factor of the unperturbed chain.
    """
    if not 0 < rho < 1:
        raise DomainError("rho must lie in (0, 1)")
    if kernel_dist < 0:
        raise DomainError("kernel distance must be non-negative")
    if kernel_dist >= 1 - rho:
        raise DomainError("kernel distance must be below 1 - rho; the bound is vacuous")
    return kernel_dist / math.sqrt((1 - rho) ** 2 - kernel_dist**2)


def worst_pair_tv_bound(r):
    """``(1 - r) / (1 + r)``: largest TV between two laws on two points whose
    pointwise likelihood ratio stays within ``[r, 1/r]``."""
    if not 0 < r <= 1:
        raise DomainError("r must lie in (0, 1]")
    # same value as (1 - r) / (1 + r), but exact at r = 1/3
    return 2 / (1 + r) - 1


def worst_pair(r):
    """The extremal pair ``((delta, 1 - delta), (1 - delta, delta))`` with ``delta = r / (1 + r)``."""
    if not 0 < r <= 1:
        raise DomainError("r must lie in (0, 1]")
    delta = r / (1 + r)
    return (
        DenseDistribution([delta, 1 - delta], LabelIndex([1, -1])),
        DenseDistribution([1 - delta, delta], LabelIndex([1, -1])),
    )


# --------------------------------------------------------------------------
# JSON


def _jsonable(label):
    if isinstance(label, tuple):
        return [_jsonable(x) for x in label]
    if isinstance(label, np.integer):
        return int(label)
    return label


def _hashable(label):
    if isinstance(label, list):
        return tuple(_hashable(x) for x in label)
    return label


def distribution_to_json(d):
    return {"states": [_jsonable(s) for s in d.index.labels()], "mass": [float(x) for x in d.mass]}


def distribution_from_json(obj):
    states = [_hashable(s) for s in obj["states"]]
    return DenseDistribution(obj["mass"], LabelIndex(states))


def kernel_to_json(K):
    return {
        "states": [_jsonable(s) for s in K.index.labels()],
        "rows": [[float(x) for x in row] for row in K.rows],
    }


def kernel_from_json(obj):
    states = [_hashable(s) for s in obj["states"]]
    return StochasticKernel(obj["rows"], LabelIndex(states))
