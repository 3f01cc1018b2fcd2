"""Finite-difference weights on arbitrary nodes (Fornberg's recursion)."""
from __future__ import annotations

import numpy as np


def fd_weights(nodes, x0: float, order: int) -> np.ndarray:
    """Weights ``w[k, j]`` so that ``sum_j w[k, j] f(nodes[j])`` approximates
    the k-th derivative at ``x0`` for k = 0..order."""
    x = np.asarray(nodes, dtype=float)
    n = x.size
    c = np.zeros((order + 1, n))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def derivative_matrix(x, order: int, width: int = 5) -> np.ndarray:
    """Dense matrix of the ``order``-th derivative on nodes ``x`` using
    ``width``-point stencils, centred where possible and one-sided at the ends."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < width:
        raise ValueError(f"need at least {width} nodes for a {width}-point stencil")
    D = np.zeros((n, n))
    half = width // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        D[i, lo : lo + width] = fd_weights(x[lo : lo + width], x[i], order)[order]
    return D


def periodic_derivative(values: np.ndarray, h: float, order: int, width: int = 5, axis: int = -1) -> np.ndarray:
    """Centred ``width``-point difference on a periodic uniform grid."""
    half = width // 2
    w = fd_weights(np.arange(-half, half + 1) * h, 0.0, order)[order]
    out = np.zeros_like(values, dtype=float)
    for k, wk in zip(range(-half, half + 1), w):
        if wk != 0.0:
            out = out + wk * np.roll(values, -k, axis=axis)
    return out
