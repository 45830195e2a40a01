import numpy as np
import pytest
from scipy.stats import chisquare

from pertgibbs.factor_graph import Factor, FactorGraph

ALPHA = 1e-3


def ising_pair(beta=0.5):
    """Two spins ``a, b`` with factor ``beta * s(a) s(b)``; label 1 is spin +1."""
    table = np.array([[beta, -beta], [-beta, beta]])
    return FactorGraph(["a", "b"], 2, [Factor(("a", "b"), table)], [("a", "b")])


def chain3(beta=0.7, h=0.3):
    table = np.array([[beta, -beta], [-beta, beta]])
    fields = [Factor((v,), np.array([-h, h]) * (i + 1)) for i, v in enumerate("xyz")]
    edges = [("x", "y"), ("y", "z")]
    return FactorGraph("xyz", 2, [Factor(e, table) for e in edges] + fields, edges)


def chi2_pvalue(samples, probs):
    """Goodness-of-fit p-value of integer ``samples`` against ``probs``, pooling cells with expectation < 5."""
    probs = np.asarray(probs, dtype=float)
    counts = np.bincount(np.asarray(samples), minlength=probs.size).astype(float)
    n = counts.sum()
    exp = probs * n
    if np.any(counts[exp == 0] > 0):
        return 0.0
    keep = exp >= 5
    obs = list(counts[keep])
    ex = list(exp[keep])
    if (~keep).any() and exp[~keep].sum() > 0:
        obs.append(counts[~keep].sum())
        ex.append(exp[~keep].sum())
    if len(obs) < 2:
        return 1.0
    return float(chisquare(obs, ex).pvalue)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
