"""Non-negative linear least squares (Lawson-Hanson active set)."""

from __future__ import annotations

import warnings

import numpy as np


def nnls(A, b, *, tol: float = 1e-10, max_iter: int = 500):
    """Solve ``min ||A x - b||_2`` subject to ``x >= 0``.

    Deterministic: ties in the dual vector resolve to the lowest column index
    and every subproblem is solved by SVD-based ``lstsq``.

    Returns ``(x, iterations)``.  ``tol`` bounds the largest entry of the
    gradient ``A.T (b - A x)`` on the zero set at convergence, relative to
    ``max(1, ||b||)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if b.shape != (m,):
        raise ValueError(f"b must have shape ({m},), got {b.shape}")

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    threshold = tol * max(1.0, float(np.linalg.norm(b)))
    iterations = 0

    w = A.T @ (b - A @ x)
    while not passive.all() and np.max(np.where(passive, -np.inf, w)) > threshold:
        if iterations >= max_iter:
            warnings.warn(f"nnls stopped after {max_iter} iterations", RuntimeWarning, stacklevel=2)
            break
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True

        while True:
            iterations += 1
            s = np.zeros(n)
            idx = np.flatnonzero(passive)
            s[idx] = np.linalg.lstsq(A[:, idx], b, rcond=None)[0]
            if np.all(s[idx] > 0):
                x = s
                break
            if iterations >= max_iter:
                x = np.clip(s, 0.0, None)
                break
            # step back toward x until the first passive entry hits zero
            blocking = idx[s[idx] <= 0]
            denom = x[blocking] - s[blocking]
            ratios = np.divide(x[blocking], denom, out=np.zeros_like(denom), where=denom > 0)
            alpha = float(np.min(ratios))
            x = x + alpha * (s - x)
            drop = passive & (x <= tol * max(1.0, float(np.max(np.abs(x)))))
            x[drop] = 0.0
            passive &= ~drop
            if not passive.any():
                break

        w = A.T @ (b - A @ x)

    return x, iterations
