"""Distances between laws and kernels, and the stationary law of a perturbed chain.

A lazy birth-death chain is perturbed by a small teleport to state 0; we
compare the kernels and their stationary laws in several metrics.
"""
from pertgibbs.measures import HELLINGER, TV, Metric, kernel_distance, mixing_time, stationary_distribution
from pertgibbs.measures import hellinger_distance, l2_distance, tv_distance
from pertgibbs.worked_examples import birth_death_kernel, teleport_kernel

Q = birth_death_kernel(20, 0.25)
K = teleport_kernel(Q, 0.05)
mu, nu = stationary_distribution(Q), stationary_distribution(K)

print("kernel distance  TV %.4f  Hellinger %.4f" % (kernel_distance(Q, K, TV), kernel_distance(Q, K, HELLINGER)))
print("stationary laws  TV %.4f  Hellinger %.4f  L2(mu) %.4f"
      % (tv_distance(mu, nu), hellinger_distance(mu, nu), l2_distance(mu, nu, mu)))
print("mixing times     Q %d  K %d" % (mixing_time(Q, pi=mu), mixing_time(K, pi=nu)))
print("mixing of K in L2(nu):", mixing_time(K, Metric.l2(nu), pi=nu))
