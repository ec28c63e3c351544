"""Composite Gauss-Legendre rules."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(m):
    x, w = np.polynomial.legendre.leggauss(m)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_gauss_legendre(a, b, n_panels, order=8):
    """Nodes and weights of an ``order``-point rule on each of ``n_panels``
    equal panels of [a, b]."""
    x, w = _leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def panel_rule(breakpoints, panel_width, order=8):
    """Composite rule whose panels never straddle any of ``breakpoints``."""
    nodes, weights = [], []
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        n = max(1, int(np.ceil((b - a) / panel_width)))
        xn, wn = composite_gauss_legendre(a, b, n, order)
        nodes.append(xn)
        weights.append(wn)
    return np.concatenate(nodes), np.concatenate(weights)
