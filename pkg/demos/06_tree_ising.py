"""Noisy Ising model on a binary tree: decay along a path and the scaling study.

The scaling run here is shorter than the acceptance run, which uses 32 replicas of 10^6 steps.
"""
import numpy as np

from pertgibbs import tree_ising as ti

_, Z = ti.generate(4, 0.1, 0.3, 4, np.random.default_rng(6))
for j, tv, bound in ti.path_decay_check(4, 0.1, 0.3, Z):
    print("j=%d  root-clamp TV %.2e  bound %.3f" % (j, tv, bound))

for rule in (ti.perturbation_target(5), ti.fixed_m(2)):
    recs = ti.scaling_study([2, 3, 4], 0.1, 0.4, rule, replicas=8, steps=400_000, seed=0)
    print(rule.description)
    for r in recs:
        print("  depth %d  m=%d  H upper %.4f +- %.4f  exact %.4f"
              % (r.depth, r.subsample_m, r.hellinger_upper, r.stderr, r.hellinger_exact))
    print("  slope %.4f +- %.4f" % ti.trend(recs))
