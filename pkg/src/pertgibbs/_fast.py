"""Compiled inner loops for the tree Ising scaling study.

Both chains live on the heap-ordered binary tree (children of ``v`` are
``2v+1`` and ``2v+2``) with labels in ``{0, 1}`` standing for spins ``-1``
and ``+1``. The exact-posterior Gibbs chain and the alternating chain read
the same site and label uniforms, so they stay close when the estimator is
accurate and coincide when it is exact.

Block ``0`` is the root (states ``0, 1``); block ``v > 0`` is the pair
``(parent(v), v)`` with state ``2 * label(parent) + label(v)``. Occupancy is
time-weighted: a block's counter is only touched when its state changes.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _block_state(sigma, b):
    if b == 0:
        return sigma[0]
    return 2 * sigma[(b - 1) // 2] + sigma[b]


@njit(cache=True, nogil=True)
def _flush(occ, last, sigma, b, t, burn):
    start = max(last[b], burn)
    if t > start:
        occ[b, _block_state(sigma, b)] += t - start
    last[b] = t


@njit(cache=True, nogil=True)
def _relabel(occ, last, sigma, v, new, t, burn, n):
    # blocks whose state depends on v: its own and its children's
    _flush(occ, last, sigma, v, t, burn)
    c = 2 * v + 1
    if c < n:
        _flush(occ, last, sigma, c, t, burn)
        _flush(occ, last, sigma, c + 1, t, burn)
    sigma[v] = new


@njit(cache=True, nogil=True)
def _field_gap(beta, sigma, v, n):
    """``2 * beta * (sum of neighbour spins)``, the label-1 minus label-0 coupling score."""
    h = 0.0
    if v > 0:
        h += 2 * sigma[(v - 1) // 2] - 1
    c = 2 * v + 1
    if c < n:
        h += 2 * sigma[c] - 1
        h += 2 * sigma[c + 1] - 1
    return 2.0 * beta * h


@njit(cache=True, nogil=True)
def _lhat(counts, m, k1, ll, s, v):
    return counts[v] / m[v] * (k1[v] * ll[s, 1] + (m[v] - k1[v]) * ll[s, 0])


@njit(cache=True, nogil=True)
def advance_pair(beta, phi_gap, counts, m, ll, z, sig_q, sig_k, perm, k1,
                 u_shared, u_aux, t0, burn, occ_q, occ_k, last_q, last_k):
    """Advance both chains by ``len(u_shared)`` steps starting at time ``t0``.

    ``phi_gap[v]`` is the exact ``phi_v(1) - phi_v(0)``. ``perm[v]`` lists the
    observation indices of ``v`` with the current subsample in its first
    ``m[v]`` slots; ``k1[v]`` counts the label-1 observations among them.
    """
    n = sig_q.shape[0]
    for s in range(u_shared.shape[0]):
        t = t0 + s + 1
        v = min(int(u_shared[s, 0] * n), n - 1)
        u = u_shared[s, 1]
        # exact chain
        g = _field_gap(beta, sig_q, v, n) + phi_gap[v]
        new = 1 if u * (1.0 + math.exp(-g)) < 1.0 else 0
        if new != sig_q[v]:
            _relabel(occ_q, last_q, sig_q, v, new, t - 1, burn, n)
        # alternating chain: sigma phase
        g = _field_gap(beta, sig_k, v, n)
        if counts[v] > 0:
            g += _lhat(counts, m, k1, ll, 1, v) - _lhat(counts, m, k1, ll, 0, v)
        new = 1 if u * (1.0 + math.exp(-g)) < 1.0 else 0
        if new != sig_k[v]:
            _relabel(occ_k, last_k, sig_k, v, new, t - 1, burn, n)
        # alternating chain: swap phase
        w = min(int(u_aux[s, 0] * n), n - 1)
        mw = m[w]
        out = counts[w] - mw
        if out > 0:
            i1 = min(int(u_aux[s, 1] * mw), mw - 1)
            i2 = mw + min(int(u_aux[s, 2] * out), out - 1)
            j1 = perm[w, i1]
            j2 = perm[w, i2]
            lab = sig_k[w]
            l1 = _lhat(counts, m, k1, ll, lab, w)
            k_old = k1[w]
            k1[w] = k_old - z[w, j1] + z[w, j2]
            l2 = _lhat(counts, m, k1, ll, lab, w)
            d = l1 - l2
            p_swap = 0.0 if d > 700.0 else 1.0 / (1.0 + math.exp(d))
            if u_aux[s, 3] < p_swap:
                perm[w, i1] = j2
                perm[w, i2] = j1
            else:
                k1[w] = k_old


@njit(cache=True, nogil=True)
def finish(occ, last, sigma, t_end, burn):
    for b in range(sigma.shape[0]):
        _flush(occ, last, sigma, b, t_end, burn)
