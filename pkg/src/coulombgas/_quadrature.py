"""Small quadrature helpers shared by the energy modules.

Radial functions here are vectorized callables of r >= 0 that may have
isolated C^1 kinks (ball edges, support boundaries).  Averages over balls
and spheres split the domain at the images of those kinks and apply
Gauss-Legendre per smooth segment, which converges spectrally.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

__all__ = ["gauss_segments", "sphere_average", "ball_average"]


@lru_cache(maxsize=None)
def _gauss_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def gauss_segments(a: float, b: float, breakpoints=(), order: int = 32):
    """Gauss-Legendre nodes/weights on [a, b] split at interior breakpoints."""
    pts = sorted({float(a), float(b), *(float(t) for t in breakpoints
                                        if a < t < b)})
    x, w = _gauss_rule(order)
    nodes, weights = [], []
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes.append(mid + half * x)
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def sphere_average(f, s: float, r: float, d: int, kinks=(), order: int = 32) -> float:
    """Average of the radial function f(|x|) over the sphere |x - x0| = r,
    |x0| = s.  Kinks lists radii where f loses smoothness."""
    if r <= 0.0:
        return float(np.asarray(f(np.array([s]))).ravel()[0])
    if s < 1e-300:
        return float(np.asarray(f(np.array([r]))).ravel()[0])
    if d == 3:
        lo, hi = abs(s - r), s + r
        t, w = gauss_segments(lo, hi, [k for k in kinks if lo < k < hi], order)
        vals = np.asarray(f(t))
        return float(np.sum(w * t * vals) / (2.0 * s * r))
    # d == 2: integrate over the angle, splitting where the circle crosses
    # a kink radius of f
    brk = []
    for k in kinks:
        c = (s * s + r * r - k * k) / (2.0 * s * r)
        if -1.0 < c < 1.0:
            brk.append(math.acos(c))
    th, w = gauss_segments(0.0, math.pi, brk, order)
    rho = np.sqrt(np.maximum(s * s + r * r - 2.0 * s * r * np.cos(th), 0.0))
    vals = np.asarray(f(rho))
    return float(np.sum(w * vals) / math.pi)


def ball_average(f, s: float, b: float, d: int, kinks=(), order: int = 32) -> float:
    """Average of the radial function f(|x|) over the ball B(x0, b), |x0| = s."""
    outer_brk = []
    for k in kinks:
        for cand in (abs(s - k), s + k, k - s):
            if 0.0 < cand < b:
                outer_brk.append(cand)
    r, w = gauss_segments(0.0, b, outer_brk, order)
    shell = (3.0 * r * r / b ** 3) if d == 3 else (2.0 * r / b ** 2)
    avg = np.array([sphere_average(f, s, ri, d, kinks, order) for ri in r])
    return float(np.sum(w * shell * avg))
