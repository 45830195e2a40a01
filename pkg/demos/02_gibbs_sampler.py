"""Single-site Gibbs sampling on a small factor graph, checked against exact enumeration."""
import numpy as np

from pertgibbs.factor_graph import Factor, FactorGraph, gibbs_measure
from pertgibbs.gibbs import gibbs_kernel, gibbs_step
from pertgibbs.measures import DenseDistribution, tv_distance

# three spins on a path with ferromagnetic couplings and a field on the middle one
J = np.array([[0.6, -0.6], [-0.6, 0.6]])
g = FactorGraph("xyz", 2, [Factor(("x", "y"), J), Factor(("y", "z"), J), Factor(("y",), [-0.4, 0.4])],
                [("x", "y"), ("y", "z")])
mu = gibbs_measure(g)
Q = gibbs_kernel(g)
print("max |mu Q - mu| =", np.abs(mu.mass @ Q.rows - mu.mass).max())

rng = np.random.default_rng(0)
sigma = (0, 0, 0)
counts = np.zeros(len(mu.mass))
for _ in range(100_000):
    sigma = gibbs_step(g, sigma, rng)
    counts[g.space.position(sigma)] += 1
emp = DenseDistribution(counts / counts.sum(), mu.index)
print("TV(empirical, exact) after 1e5 steps = %.4f" % tv_distance(emp, mu))
