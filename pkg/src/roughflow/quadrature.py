"""Composite Gauss-Legendre quadrature with progressive (running) integrals.

The nested integrals behind second driver levels all reduce to one outer
1-d integral whose integrand involves the running integral of the field from
the left endpoint.  Within a substep the running integral is evaluated at the
Gauss nodes by integrating the nodal interpolant exactly, which keeps the
whole sweep at a single pass over the nodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureConfig:
    """Composite Gauss-Legendre: `order` nodes per substep, `substeps` per piece."""

    order: int = 4
    substeps: int = 16

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@lru_cache(maxsize=32)
def reference_rule(order):
    """Gauss-Legendre nodes/weights on [0, 1] plus the partial-integral matrix.

    P[j, l] = integral over [0, x_j] of the l-th Lagrange basis polynomial of
    the nodes, so running integrals at the nodes are h * P @ values.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    vander = np.vander(x, increasing=True)            # vander[l, m] = x_l^m
    coeff = np.linalg.solve(vander, np.eye(order))    # coeff[m, l]: basis l
    powers = np.arange(1, order + 1)
    partial_pow = x[:, None] ** powers[None, :] / powers[None, :]
    partial = partial_pow @ coeff                      # P[j, l]
    return x, w, partial


def split_interval(s, t, breakpoints=()):
    """Pieces of [s, t] split at interior breakpoints (sorted, deduplicated)."""
    if t < s:
        raise ValueError("need s <= t")
    inner = sorted(b for b in set(float(b) for b in breakpoints) if s < b < t)
    edges = [float(s)] + inner + [float(t)]
    return list(zip(edges[:-1], edges[1:]))


def composite_nodes(s, t, cfg: QuadratureConfig, breakpoints=()):
    """All node positions and weights for the composite rule over [s, t]."""
    x, w, _ = reference_rule(cfg.order)
    nodes, weights = [], []
    for a, b in split_interval(s, t, breakpoints):
        sub = np.linspace(a, b, cfg.substeps + 1)
        h = (b - a) / cfg.substeps
        for lo in sub[:-1]:
            nodes.append(lo + h * x)
            weights.append(h * w)
    if not nodes:
        return np.empty(0), np.empty(0)
    return np.concatenate(nodes), np.concatenate(weights)


def integrate(fn, s, t, cfg: QuadratureConfig, breakpoints=()):
    """Composite GL integral of a vectorized scalar/array function of time."""
    nodes, weights = composite_nodes(s, t, cfg, breakpoints)
    if nodes.size == 0:
        probe = np.asarray(fn(float(s)))
        return np.zeros_like(probe, dtype=float)
    total = None
    for r, wt in zip(nodes, weights):
        val = np.asarray(fn(r), dtype=float) * wt
        total = val if total is None else total + val
    return total
