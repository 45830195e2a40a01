"""The three worked examples: two states, birth-death with teleport, product Bernoulli."""
from pertgibbs.worked_examples import birth_death_analysis, product_bernoulli_analysis, two_state_analysis

for C in (1.05, 1.5, 2.0):
    r = two_state_analysis(0.1, C)
    print("two-state C=%.2f  d(Q,K)=%.3f  d(mu,nu)=%.3f  ratio=%.3f" % (C, r.kernel_dist, r.stat_dist, r.ratio))

r = birth_death_analysis(400, 0.25, 20)
print("birth-death n=400: kernel TV %.3f but stationary TV %.3f" % (r.kernel_tv, r.tv_stat))

r = product_bernoulli_analysis(10, 0.4, 0.41)
print("product Bernoulli n=10: kernel TV %.3f, exact TV %.4f, Adell bound %.4f" % (r.kernel_tv, r.exact_tv, r.adell_bound))
