"""Greedy coupling of two copies of a random kernel and the coupling inequality."""
import numpy as np

from pertgibbs.coupling import coupling_tail
from pertgibbs.random_models import random_kernel

rng = np.random.default_rng(3)
K = random_kernel(6, rng, concentration=0.3)
surv = coupling_tail(K, 0, 5, 8, 50_000, rng)
P = np.eye(6)
print(" t  P(tau>t)  TV(K^t(0,.), K^t(5,.))")
for t, s in enumerate(surv):
    print("%2d  %.4f    %.4f" % (t, s, 0.5 * np.abs(P[0] - P[5]).sum()))
    P = P @ K.rows
