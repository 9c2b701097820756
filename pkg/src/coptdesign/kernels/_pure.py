"""NumPy reference implementations of the inverse-update kernels.

These are the hot operations of the search algorithms: removing an
observation from a cached inverse covariance matrix (rank-1 downdate) and
appending one (two chained Sherman-Morrison updates, written in closed
form). The compiled extension in ``_fast.pyx`` implements the same
contracts; either module can back ``coptdesign.kernels``.

Kernels raise plain ``ValueError`` on singular pivots; callers translate
into package exceptions.
"""

import numpy as np

PIVOT_TOL = 1e-12


def downdate_inverse(sinv, pos):
    """Inverse of the covariance with observation ``pos`` removed.

    ``sinv`` is the inverse covariance of the current selection. Writing it
    in block form with row/column ``pos`` moved last, ``[[C, d], [d^T, e]]``,
    the downdated inverse is ``C - d d^T / e``. Cost O(n^2).
    """
    e = sinv[pos, pos]
    if not np.isfinite(e) or abs(e) < PIVOT_TOL:
        raise ValueError(f"downdate pivot {e!r} at position {pos} is too small")
    d = np.delete(sinv[:, pos], pos)
    c = np.delete(np.delete(sinv, pos, axis=0), pos, axis=1)
    c -= np.outer(d, d) / e
    return c


def extend_inverse(sinv, f, h):
    """Inverse of the covariance extended by one observation.

    ``f`` holds the covariances between the current selection and the new
    observation, ``h`` its own variance. The result is the composition of
    the two Sherman-Morrison rank-1 updates for appending a bordered
    row/column, evaluated in closed form:

        [[sinv + g g^T / s,  -g / s],
         [      -g^T / s,     1 / s]]   with g = sinv f, s = h - f^T g.

    ``s`` is the Schur complement of the new observation; ``s / h`` is the
    Sherman-Morrison denominator, so near-zero ``s / h`` means the extended
    covariance is numerically singular. Cost O(n^2).
    """
    if h <= 0 or not np.isfinite(h):
        raise ValueError(f"new observation variance must be positive, got {h!r}")
    n = sinv.shape[0]
    g = sinv @ f
    s = h - float(f @ g)
    if abs(s / h) < PIVOT_TOL:
        raise ValueError("extended covariance is singular (zero Schur complement)")
    out = np.empty((n + 1, n + 1), dtype=np.float64)
    out[:n, :n] = sinv + np.outer(g, g) / s
    out[:n, n] = -g / s
    out[n, :n] = -g / s
    out[n, n] = 1.0 / s
    return out
