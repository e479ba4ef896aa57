"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``SEMCERT_BACKEND=python``
is set. Signatures and tie-breaking match ``_kernels.pyx``.
"""

import numpy as np

# cap on temporary (rows x centroids x dims) buffers, in float64 elements
_CHUNK_ELEMS = 1 << 21


def sq_dists(X, q):
    out = np.empty(X.shape[0], dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, X.shape[1]))
    for start in range(0, X.shape[0], step):
        diff = X[start:start + step] - q
        out[start:start + step] = np.einsum("ij,ij->i", diff, diff)
    return out


def assign(X, C):
    n, d = X.shape
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, k * d))
    for start in range(0, n, step):
        diff = X[start:start + step, None, :] - C[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        # argmin returns the first minimum, i.e. the lowest index on ties
        lab = np.argmin(d2, axis=1)
        labels[start:start + step] = lab
        dists[start:start + step] = d2[np.arange(lab.shape[0]), lab]
    return labels, dists


def adc_table(q, centroids):
    m, k, s_dim = centroids.shape
    diff = q.reshape(m, 1, s_dim) - centroids
    return np.einsum("ijk,ijk->ij", diff, diff)


def adc_scan(codes, table):
    m = table.shape[0]
    out = np.zeros(codes.shape[0], dtype=np.float64)
    for sub in range(m):
        out += table[sub, codes[:, sub]]
    return out
