"""Subsampled-likelihood sampler on two spins: exact targets, perturbation size and a simulation."""
import numpy as np

from pertgibbs.factor_graph import Factor, FactorGraph
from pertgibbs.measures import DenseDistribution, tv_distance
from pertgibbs.pseudo_marginal import (
    AugmentedState, ObservationSet, alternating_step, exact_targets, perturbation_sup, posterior_graph,
)
from pertgibbs.factor_graph import gibbs_measure

g = FactorGraph(["a", "b"], 2, [Factor(("a", "b"), [[0.5, -0.5], [-0.5, 0.5]])], [("a", "b")])
# three noisy readings of each spin, each flipped with probability 0.2
Z = ObservationSet.flip_noise(g.vertices, [(1, 0, 1), (0, 0, 1)], 0.2)
posterior = gibbs_measure(posterior_graph(g, Z))
for m in (1, 2, 3):
    _, nu = exact_targets(g, Z, m)
    print("m=%d  TV(posterior, nu)=%.4f  sup kernel TV=%.4f" % (m, tv_distance(posterior, nu), perturbation_sup(g, Z, m)))

rng = np.random.default_rng(4)
state = AugmentedState((0, 0), ((0,), (0,)))
counts = np.zeros(4)
for _ in range(200_000):
    state = alternating_step(g, state, Z, rng)
    counts[g.space.position(state.sigma)] += 1
_, nu = exact_targets(g, Z, 1)
print("m=1 simulated vs exact: TV %.4f" % tv_distance(DenseDistribution(counts / counts.sum(), nu.index), nu))
