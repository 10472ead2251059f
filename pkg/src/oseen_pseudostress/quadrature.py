"""Positive-weight quadrature on the reference triangle ``{x, y >= 0, x + y <= 1}``.

Rules are collapsed (Stroud conical) products: Gauss-Legendre in the
collapsed direction and Gauss-Jacobi with weight ``(1 - t)`` across it. An
``n x n`` product is exact for total degree ``2n - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 20


@dataclass(frozen=True, eq=False)
class QuadRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,), sum to 1/2
    exact_degree: int

    def __len__(self) -> int:
        return self.weights.size


@lru_cache(maxsize=None)
def rule_for_degree(d: int) -> QuadRule:
    """Rule integrating every polynomial of total degree ``<= d`` exactly."""
    if int(d) != d or d < 0:
        raise ValueError(f"degree must be a non-negative integer, got {d!r}")
    if d > MAX_DEGREE:
        raise ValueError(f"degree {d} exceeds the supported maximum {MAX_DEGREE}")
    n = (int(d) + 2) // 2
    s, ws = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    t, wt = roots_jacobi(n, 1.0, 0.0)  # weight (1 - t) on [-1, 1]
    v = 0.5 * (t + 1.0)
    wv = 0.25 * wt
    S, Vv = np.meshgrid(s, v, indexing="ij")
    W = np.outer(ws, wv)
    pts = np.column_stack([(S * (1.0 - Vv)).ravel(), Vv.ravel()])
    rule = QuadRule(points=pts, weights=W.ravel(), exact_degree=2 * n - 1)
    rule.points.setflags(write=False)
    rule.weights.setflags(write=False)
    return rule


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int):
    """``n``-point Gauss-Legendre nodes and weights on ``[0, 1]``."""
    s, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (s + 1.0), 0.5 * w
