"""Lower-envelope kernel for quadratic min-convolutions on a lattice.

Computes, for every output node u on the same lattice as v,

    T[l, u] = min_v  W[l, v] + alpha * (x[u] - x[v])**2

exactly (the minimum over the node set), in O(M) per line via the
parabola-envelope sweep. +inf entries are skipped; a line with no finite
entry stays +inf.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def quad_minconv_lines(W, x, alpha):
    L, M = W.shape
    out = np.empty((L, M))
    v = np.empty(M, dtype=np.int64)   # parabola roots in the envelope
    z = np.empty(M + 1)               # boundaries between parabolas
    for l in range(L):
        k = -1
        for q in range(M):
            wq = W[l, q]
            if not np.isfinite(wq):
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            p = v[k]
            s = ((wq + alpha * x[q] * x[q]) - (W[l, p] + alpha * x[p] * x[p])) \
                / (2.0 * alpha * (x[q] - x[p]))
            while s <= z[k]:
                k -= 1
                p = v[k]
                s = ((wq + alpha * x[q] * x[q]) -
                     (W[l, p] + alpha * x[p] * x[p])) \
                    / (2.0 * alpha * (x[q] - x[p]))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        if k < 0:
            for u in range(M):
                out[l, u] = np.inf
            continue
        j = 0
        for u in range(M):
            while z[j + 1] < x[u]:
                j += 1
            p = v[j]
            d = x[u] - x[p]
            out[l, u] = W[l, p] + alpha * d * d
    return out


def quad_minconv_axis(W, nodes, alpha, axis):
    """Apply the envelope sweep along one axis of an nd array."""
    Wm = np.moveaxis(np.asarray(W, dtype=float), axis, -1)
    shape = Wm.shape
    flat = np.ascontiguousarray(Wm.reshape(-1, shape[-1]))
    out = quad_minconv_lines(flat, np.ascontiguousarray(nodes, dtype=float),
                             float(alpha))
    return np.moveaxis(out.reshape(shape), -1, axis)
