"""Spatial domains and time grids used by drivers, flows and norms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SpatialDomain:
    """Axis-aligned box with an evaluation grid.

    dimension: ambient dimension d >= 1
    box: (d, 2) array of per-axis [lo, hi]
    resolution: per-axis grid point count (>= 2)
    """

    dimension: int
    box: np.ndarray
    resolution: tuple

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(self.dimension, 2)
        object.__setattr__(self, "box", box)
        res = tuple(int(r) for r in np.broadcast_to(self.resolution, (self.dimension,)))
        object.__setattr__(self, "resolution", res)
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if np.any(box[:, 1] <= box[:, 0]):
            raise ValueError("bounding box must be non-degenerate")
        if any(r < 2 for r in res):
            raise ValueError("grid resolution must be >= 2 per axis")

    @classmethod
    def cube(cls, dimension, half_width, resolution):
        box = np.tile([-float(half_width), float(half_width)], (dimension, 1))
        return cls(dimension, box, resolution)

    def grid(self):
        """All grid points as an (n, d) array."""
        axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(self.box, self.resolution)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_volume(self):
        widths = self.box[:, 1] - self.box[:, 0]
        return float(np.prod(widths / (np.array(self.resolution) - 1)))

    def refine(self, factor=2):
        """Nested refinement: the refined grid contains every coarse point."""
        res = tuple(factor * (r - 1) + 1 for r in self.resolution)
        return SpatialDomain(self.dimension, self.box, res)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing partition 0 = t0 < ... < tN = T."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        object.__setattr__(self, "points", pts)
        if pts.size < 2:
            raise ValueError("time grid needs at least two points")
        if pts[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @classmethod
    def uniform(cls, horizon, intervals):
        if intervals < 1:
            raise ValueError("need at least one interval")
        return cls(np.linspace(0.0, float(horizon), intervals + 1))

    @property
    def horizon(self):
        return float(self.points[-1])

    def pairs(self):
        """All ordered pairs (s, t) with s < t on the grid."""
        p = self.points
        i, j = np.triu_indices(p.size, k=1)
        return np.stack([p[i], p[j]], axis=-1)

    def pairs_at_scales(self):
        """Pairs (t_i, t_j) with j - i in {1, 2, 4, ...}: O(N log N) pairs
        covering every gap scale, for discrete two-time suprema."""
        p = self.points
        out = []
        gap = 1
        while gap < p.size:
            i = np.arange(0, p.size - gap)
            out.append(np.stack([p[i], p[i + gap]], axis=-1))
            gap *= 2
        return np.concatenate(out, axis=0)

    def triples(self):
        """All (s, u, t) with s < u < t on the grid."""
        p = self.points
        out = []
        for a in range(p.size - 2):
            for b in range(a + 1, p.size - 1):
                for c in range(b + 1, p.size):
                    out.append((p[a], p[b], p[c]))
        return out

    def refine(self, factor=2):
        pts = [self.points[0]]
        for a, b in zip(self.points[:-1], self.points[1:]):
            pts.extend(np.linspace(a, b, factor + 1)[1:])
        return TimeGrid(np.array(pts))
