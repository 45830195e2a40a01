"""Factor graphs over ``[q]^V`` and their Gibbs measures.

Factors are dense tables over their scope, so dependence on a vertex can be
decided exactly and the Gibbs measure can be enumerated. Configurations are
plain tuples of labels ``0..q-1`` ordered like ``FactorGraph.vertices``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetExceededError, StructureError
from .measures import ConfigurationSpace, DenseDistribution

ENUMERATION_CAP = 2**20
MAX_SCOPE = 6


@dataclass(frozen=True, eq=False)
class Factor:
    """Real-valued potential on the labels of ``scope``.

    ``table`` has shape ``(q,) * len(scope)``; a flat row-major table is
    reshaped when ``q`` can be inferred from its size. Entries may be ``-inf``
    (hard constraints) but not ``+inf`` or NaN.
    """

    scope: tuple
    table: np.ndarray
    axes: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        scope = tuple(self.scope)
        if len(set(scope)) != len(scope):
            raise ValueError("factor scope has repeated vertices")
        if len(scope) > MAX_SCOPE:
            raise ValueError(f"factor scopes are limited to {MAX_SCOPE} vertices")
        table = np.array(self.table, dtype=float, copy=True)
        k = len(scope)
        if k == 0:
            table = table.reshape(())
        elif table.ndim != k:
            q = round(table.size ** (1.0 / k))
            if q**k != table.size:
                raise ValueError(f"table of size {table.size} does not fit a scope of {k} vertices")
            table = table.reshape((q,) * k)
        if k and len(set(table.shape)) != 1:
            raise ValueError("every axis of a factor table must have length q")
        if np.any(np.isnan(table)) or np.any(table == np.inf):
            raise ValueError("factor entries must be finite or -inf")
        table.setflags(write=False)
        object.__setattr__(self, "scope", scope)
        object.__setattr__(self, "table", table)

    @property
    def q(self):
        return self.table.shape[0] if self.table.ndim else None

    def depends_on(self, vertex):
        """Whether changing the label of ``vertex`` alone can change the value."""
        if vertex not in self.scope:
            return False
        ax = self.scope.index(vertex)
        first = np.take(self.table, [0], axis=ax)
        return not np.array_equal(self.table, np.broadcast_to(first, self.table.shape))

    def tightened(self):
        """Copy whose scope lists exactly the vertices the factor depends on."""
        keep = [v for v in self.scope if self.depends_on(v)]
        if len(keep) == len(self.scope):
            return self
        sl = tuple(slice(None) if v in keep else 0 for v in self.scope)
        return Factor(tuple(keep), self.table[sl])

    def __call__(self, sigma):
        """Value at a full configuration; requires a factor bound to a graph."""
        if self.axes is None:
            raise ValueError("factor is not bound to a graph; use FactorGraph.factors")
        return float(self.table[tuple(sigma[a] for a in self.axes)])

    def __repr__(self):
        return f"Factor(scope={list(self.scope)!r})"


class FactorGraph:
    """Vertices, label count, factors and an undirected edge set.

    Factors are tightened on construction, so ``factor.scope`` is the set of
    vertices the factor genuinely depends on. Edges are stored as unordered
    pairs.

    Parameters
    ----------
    vertices : sequence
        Distinct hashable vertex names; their order fixes configuration layout.
    q : int
        Number of labels per vertex (at least 2).
    factors : iterable of Factor
    edges : iterable of pairs, optional
    """

    def __init__(self, vertices, q, factors=(), edges=()):
        self.vertices = tuple(vertices)
        self.q = int(q)
        if self.q < 2:
            raise ValueError("label count q must be at least 2")
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError("vertices must be distinct")
        self.position = {v: i for i, v in enumerate(self.vertices)}
        es = set()
        for u, v in edges:
            if u == v:
                raise ValueError("edges join distinct vertices")
            if u not in self.position or v not in self.position:
                raise ValueError(f"edge ({u!r}, {v!r}) has an endpoint outside V")
            es.add(frozenset((u, v)))
        self.edges = frozenset(es)
        bound = []
        for f in factors:
            if not isinstance(f, Factor):
                f = Factor(*f)
            for v in f.scope:
                if v not in self.position:
                    raise ValueError(f"factor scope vertex {v!r} is not in V")
            if f.scope and f.q != self.q:
                raise ValueError(f"factor table has {f.q} labels per axis, graph has q={self.q}")
            f = f.tightened()
            bound.append(replace(f, axes=tuple(self.position[v] for v in f.scope)))
        self.factors = tuple(bound)

    def __repr__(self):
        return (
            f"FactorGraph(|V|={len(self.vertices)}, q={self.q}, "
            f"|factors|={len(self.factors)}, |E|={len(self.edges)})"
        )

    @property
    def space(self):
        return ConfigurationSpace(self.vertices, self.q)

    @property
    def n_states(self):
        return self.q ** len(self.vertices)

    @cached_property
    def dependency(self):
        """Tuple indexed by vertex position of factor indices depending on it."""
        deps = [[] for _ in self.vertices]
        for k, f in enumerate(self.factors):
            for a in f.axes:
                deps[a].append(k)
        return tuple(tuple(d) for d in deps)

    @cached_property
    def neighbors(self):
        """Union adjacency: shared edge or shared (tight) factor scope."""
        nb = {v: set() for v in self.vertices}
        for e in self.edges:
            u, v = tuple(e)
            nb[u].add(v)
            nb[v].add(u)
        for f in self.factors:
            for u in f.scope:
                nb[u].update(w for w in f.scope if w != u)
        return {v: frozenset(s) for v, s in nb.items()}

    def local_log_weights(self, sigma, x):
        """``s_i = sum over factors depending on x of phi(sigma_{x->i})`` for each label ``i``."""
        return _local_scores(self, sigma, self.position[x])

    def log_weights(self, cap=ENUMERATION_CAP):
        """Unnormalized log Gibbs weights as an array of shape ``(q,) * |V|``."""
        check_budget(self.n_states, cap)
        n = len(self.vertices)
        out = np.zeros((self.q,) * n)
        for f in self.factors:
            out = out + broadcast_table(f, n)
        return out

    def with_factors(self, extra):
        """New graph with additional factors and the same vertices and edges."""
        return FactorGraph(
            self.vertices, self.q, list(self.factors) + list(extra), [tuple(e) for e in self.edges]
        )

    # -- JSON -------------------------------------------------------------

    def to_json(self):
        return {
            "q": self.q,
            "vertices": list(self.vertices),
            "edges": sorted([sorted(e, key=str) for e in self.edges], key=lambda e: [str(x) for x in e]),
            "factors": [
                {"scope": list(f.scope), "table": [float(x) for x in f.table.reshape(-1)]}
                for f in self.factors
            ],
        }

    @classmethod
    def from_json(cls, obj):
        factors = [Factor(tuple(f["scope"]), np.asarray(f["table"], dtype=float)) for f in obj.get("factors", [])]
        return cls(obj["vertices"], obj["q"], factors, [tuple(e) for e in obj.get("edges", [])])


def _local_scores(g, sigma, a):
    s = np.zeros(g.q)
    cfg = list(sigma)
    for k in g.dependency[a]:
        f = g.factors[k]
        for i in range(g.q):
            cfg[a] = i
            s[i] += f.table[tuple(cfg[b] for b in f.axes)]
    return s


def broadcast_table(f, n):
    """Factor table reshaped to broadcast against an ``n``-axis configuration array."""
    if not f.axes:
        return f.table.reshape((1,) * n)
    order = np.argsort(f.axes)
    t = np.transpose(f.table, order)
    shape = [1] * n
    for a in f.axes:
        shape[a] = f.table.shape[0]
    return t.reshape(shape)


def check_budget(n_states, cap):
    if n_states > cap:
        raise BudgetExceededError(f"state space of size {n_states} exceeds cap {cap}", cap, n_states)


def gibbs_measure(g, cap=ENUMERATION_CAP):
    """Enumerated Gibbs measure ``mu(sigma) ~ exp(sum_phi phi(sigma))``.

    Normalization is done with log-sum-exp.

    Raises
    ------
    BudgetExceededError
        If ``q**|V|`` exceeds ``cap``.
    """
    logw = g.log_weights(cap).reshape(-1)
    logz = logsumexp(logw)
    if not np.isfinite(logz):
        raise ValueError("every configuration has zero weight")
    mass = np.exp(logw - logz)
    return DenseDistribution(mass / mass.sum(), g.space)


def dependency_sets(g):
    """Dependency maps of a factor graph.

    Returns
    -------
    A : dict
        Vertex -> frozenset of indices of the factors that depend on it.
    S : dict
        Factor index -> frozenset of vertices it depends on.
    """
    A = {v: frozenset(g.dependency[i]) for i, v in enumerate(g.vertices)}
    S = {k: frozenset(f.scope) for k, f in enumerate(g.factors)}
    return A, S


def graph_ball(g, A, r):
    """Vertices at graph distance less than ``r`` from the set ``A``.

    Distance uses the union adjacency of :attr:`FactorGraph.neighbors`, so
    ``graph_ball(g, A, 1) == A``.
    """
    if r < 1 or int(r) != r:
        raise ValueError("r must be a positive integer")
    A = set(A)
    if not A <= set(g.vertices):
        raise ValueError("A must be a subset of V")
    dist = {v: 0 for v in A}
    frontier = deque(A)
    while frontier:
        u = frontier.popleft()
        if dist[u] + 1 >= r:
            continue
        for w in g.neighbors[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                frontier.append(w)
    return frozenset(dist)


# --------------------------------------------------------------------------
# factorization structures


@dataclass(frozen=True)
class FactorizationStructure:
    """Ordered blocks ``(S_j, Pi_j)``.

    The ``S_j`` are disjoint, ``Pi_1`` is empty and each ``Pi_j`` lies inside
    the union of the earlier ``S_i``. Whether the ``S_j`` cover a given vertex
    set is checked by :func:`validate_factorization`.
    """

    blocks: tuple

    def __post_init__(self):
        blocks = tuple((frozenset(S), frozenset(P)) for S, P in self.blocks)
        if not blocks:
            raise StructureError("a factorization structure needs at least one block")
        seen = set()
        for j, (S, P) in enumerate(blocks):
            if not S:
                raise StructureError(f"block {j} has an empty S")
            if S & seen:
                raise StructureError(f"block {j} overlaps an earlier block")
            if j == 0 and P:
                raise StructureError("the first block must have an empty parent set")
            if not P <= seen:
                raise StructureError(f"parent set of block {j} is not contained in earlier blocks")
            seen |= S
        object.__setattr__(self, "blocks", blocks)

    def __len__(self):
        return len(self.blocks)

    @property
    def vertices(self):
        return frozenset().union(*(S for S, _ in self.blocks))

    def block_vertices(self, j):
        S, P = self.blocks[j]
        return S | P

    @classmethod
    def from_tree(cls, edges, root):
        """Breadth-first blocks ``({v}, {parent(v)})`` for a tree given by its edges."""
        nb = {}
        for u, v in edges:
            nb.setdefault(u, set()).add(v)
            nb.setdefault(v, set()).add(u)
        blocks = [({root}, set())]
        seen = {root}
        frontier = deque([root])
        while frontier:
            u = frontier.popleft()
            for w in sorted(nb.get(u, ()), key=repr):
                if w in seen:
                    continue
                seen.add(w)
                blocks.append(({w}, {u}))
                frontier.append(w)
        return cls(tuple(blocks))


@dataclass(frozen=True)
class FactorizationCheck:
    """Outcome of :func:`validate_factorization`; truthy when the structure holds."""

    ok: bool
    block: int | None = None
    witness: tuple | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def validate_factorization(target, fs, *, rtol=1e-9, cap=ENUMERATION_CAP):
    """Check ``mu(sigma) = prod_j mu|_{S_j}^{sigma|_{Pi_j}}(sigma)`` for every ``sigma``.

    Parameters
    ----------
    target : FactorGraph or DenseDistribution
        A factor graph (its Gibbs measure is enumerated) or a distribution
        over a :class:`ConfigurationSpace`.
    fs : FactorizationStructure

    Returns
    -------
    FactorizationCheck
        On failure, ``block`` is the first block whose partial product
        disagrees with the joint marginal of the blocks so far and
        ``witness`` a configuration where it does.
    """
    mu = gibbs_measure(target, cap) if isinstance(target, FactorGraph) else target
    space = mu.index
    if not isinstance(space, ConfigurationSpace):
        raise TypeError("validate_factorization needs a distribution over a ConfigurationSpace")
    covered = fs.vertices
    if covered != frozenset(space.vertices):
        return FactorizationCheck(False, reason="blocks do not partition the vertex set")
    for S, P in fs.blocks:
        if not (S | P) <= frozenset(space.vertices):
            raise StructureError("block mentions vertices outside the space")

    n = len(space.vertices)
    arr = mu.mass.reshape(space.shape)
    all_axes = set(range(n))
    prod = np.ones((1,) * n)
    so_far = set()
    for j, (S, P) in enumerate(fs.blocks):
        s_ax = {space.axis(v) for v in S}
        p_ax = {space.axis(v) for v in P}
        m_sp = arr.sum(axis=tuple(all_axes - s_ax - p_ax), keepdims=True)
        m_p = m_sp.sum(axis=tuple(s_ax), keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(m_p > 0, m_sp / np.where(m_p > 0, m_p, 1.0), 0.0)
        prod = prod * cond
        so_far |= s_ax
        joint = arr.sum(axis=tuple(all_axes - so_far), keepdims=True)
        err = np.abs(prod - joint)
        bad = err > rtol * np.maximum(np.abs(joint), np.abs(prod)) + 1e-300
        if np.any(bad):
            flat = np.unravel_index(int(np.argmax(np.where(bad, err, -1.0))), bad.shape)
            witness = tuple(int(flat[a]) if a in so_far else 0 for a in range(n))
            return FactorizationCheck(
                False, block=j, witness=witness, reason=f"block {j} breaks the factorization"
            )
    return FactorizationCheck(True)

