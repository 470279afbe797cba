"""Gauss-Legendre helpers used by profile averages and the identity verifiers."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def gauss_legendre(n: int):
    """Nodes and weights of the n-point rule on (0, 1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def composite_rule(edges, n: int):
    """Composite n-point Gauss rule on the panels delimited by ``edges``.

    Returns flattened nodes and weights (panel-major order).
    """
    edges = np.asarray(edges, dtype=float)
    t, w = gauss_legendre(n)
    a = edges[:-1, None]
    length = np.diff(edges)[:, None]
    return (a + length * t).ravel(), (length * w).ravel()


def split_panels(edges, pieces: int):
    """Subdivide every panel of ``edges`` into ``pieces`` equal parts."""
    edges = np.asarray(edges, dtype=float)
    if pieces == 1:
        return edges
    s = np.arange(pieces) / pieces
    inner = (edges[:-1, None] + np.diff(edges)[:, None] * s).ravel()
    return np.append(inner, edges[-1])


def adaptive_integrate(func, edges, rtol: float = 1e-10, order: int = 5,
                       max_level: int = 22):
    """Integrate a vectorized ``func`` over the panels ``edges``.

    Composite ``order``-point Gauss-Legendre, every panel halved until the
    relative change between two levels drops below ``rtol``.
    """
    edges = np.asarray(edges, dtype=float)
    x, w = composite_rule(edges, order)
    prev = float(np.dot(w, func(x)))
    for _ in range(max_level):
        edges = split_panels(edges, 2)
        x, w = composite_rule(edges, order)
        cur = float(np.dot(w, func(x)))
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def merge_close(points, tol: float):
    """Sorted unique points with near-duplicates (closer than tol) removed."""
    pts = np.sort(np.asarray(points, dtype=float))
    if pts.size == 0:
        return pts
    keep = np.ones(pts.size, dtype=bool)
    keep[1:] = np.diff(pts) > tol
    return pts[keep]
