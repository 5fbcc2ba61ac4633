"""Time-dependent vector fields with exact spatial derivatives, and the
two-time fields that make up rough drivers."""
from __future__ import annotations

import numpy as np

from .errors import CapabilityError


def as_points(x, dim):
    """Coerce a point or batch of points to an (n, d) array."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[-1] != dim:
        raise ValueError(f"points must have dimension {dim}, got shape {pts.shape}")
    return pts


class SmoothVectorField:
    """Evaluable v(t, x) with exact spatial derivatives up to `max_order`.

    Evaluators are vectorized over an (n, d) point batch and return arrays of
    shape (n, d), (n, d, d), (n, d, d, d), (n, d, d, d, d) for orders 0..3.
    Derivative index convention: jac[n, i, j] = d v_i / d x_j, and higher
    orders append further spatial indices.
    """

    def __init__(self, dim, value, jacobian=None, hessian=None, third=None,
                 max_order=None, bounds=None, time_breakpoints=()):
        self.dim = int(dim)
        self._evals = [value, jacobian, hessian, third]
        if max_order is None:
            max_order = max(i for i, f in enumerate(self._evals) if f is not None)
        self.max_order = int(max_order)
        self.bounds = bounds
        self.time_breakpoints = tuple(float(b) for b in time_breakpoints)

    def __call__(self, t, x, order=0):
        if order > self.max_order or self._evals[order] is None:
            raise CapabilityError(
                f"field provides derivatives up to order {self.max_order}, requested {order}")
        pts = as_points(x, self.dim)
        out = np.asarray(self._evals[order](float(t), pts), dtype=float)
        expected = (pts.shape[0], self.dim) + (self.dim,) * order
        return out.reshape(expected)

    # -- stock fields used across tests and experiments ---------------------

    @classmethod
    def constant(cls, v):
        v = np.asarray(v, dtype=float)
        d = v.size

        def value(t, pts):
            return np.broadcast_to(v, (pts.shape[0], d)).copy()

        def zeros(extra):
            def f(t, pts):
                return np.zeros((pts.shape[0], d) + (d,) * extra)
            return f

        return cls(d, value, zeros(1), zeros(2), zeros(3))

    @classmethod
    def linear(cls, matrix):
        """v(x) = A x (time independent)."""
        A = np.asarray(matrix, dtype=float)
        d = A.shape[0]

        def value(t, pts):
            return pts @ A.T

        def jac(t, pts):
            return np.broadcast_to(A, (pts.shape[0], d, d)).copy()

        def zeros(extra):
            def f(t, pts):
                return np.zeros((pts.shape[0], d) + (d,) * extra)
            return f

        return cls(d, value, jac, zeros(2), zeros(3))

    @classmethod
    def matrix_switch(cls, A, B, t_switch):
        """v_t(x) = A x for t < t_switch, B x afterwards."""
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        d = A.shape[0]

        def mat(t):
            return A if t < t_switch else B

        def value(t, pts):
            return pts @ mat(t).T

        def jac(t, pts):
            return np.broadcast_to(mat(t), (pts.shape[0], d, d)).copy()

        def zeros(extra):
            def f(t, pts):
                return np.zeros((pts.shape[0], d) + (d,) * extra)
            return f

        return cls(d, value, jac, zeros(2), zeros(3),
                   time_breakpoints=(t_switch,))


def rotation_generator():
    """The 2x2 rotation generator J with J e1 = e2."""
    return np.array([[0.0, -1.0], [1.0, 0.0]])


def jacobian_vs_central_differences(field, t, points, h=1e-4):
    """Max relative error of the exact jacobian against central differences."""
    pts = as_points(points, field.dim)
    jac = field(t, pts, order=1)
    worst = 0.0
    for j in range(field.dim):
        e = np.zeros(field.dim)
        e[j] = h
        fd = (field(t, pts + e) - field(t, pts - e)) / (2 * h)
        scale = np.maximum(np.abs(jac[:, :, j]), 1.0)
        worst = max(worst, float(np.max(np.abs(fd - jac[:, :, j]) / scale)))
    return worst


class TwoTimeVectorField:
    """Base for fields (s, t, x) -> R^d defined for grid pairs s <= t.

    `evaluate(s, t, points, order)` returns spatial derivatives of the given
    order, shape (n, d) + (d,)*order.  Degenerate intervals return exactly 0.
    """

    def __init__(self, dim, horizon, max_order=0):
        self.dim = int(dim)
        self.horizon = float(horizon)
        self.max_order = int(max_order)

    def evaluate(self, s, t, points, order=0):
        if t < s:
            raise ValueError("need s <= t")
        if order > self.max_order:
            raise CapabilityError(
                f"two-time field provides orders <= {self.max_order}, requested {order}")
        pts = as_points(points, self.dim)
        if t == s:
            return np.zeros((pts.shape[0], self.dim) + (self.dim,) * order)
        return self._evaluate(float(s), float(t), pts, int(order))

    def _evaluate(self, s, t, pts, order):
        raise NotImplementedError


class ZeroTwoTime(TwoTimeVectorField):
    def __init__(self, dim, horizon, max_order=3):
        super().__init__(dim, horizon, max_order)

    def _evaluate(self, s, t, pts, order):
        return np.zeros((pts.shape[0], self.dim) + (self.dim,) * order)


class CallableTwoTime(TwoTimeVectorField):
    """Wrap a plain function (s, t, points, order) -> array."""

    def __init__(self, dim, horizon, fn, max_order=0):
        super().__init__(dim, horizon, max_order)
        self._fn = fn

    def _evaluate(self, s, t, pts, order):
        return np.asarray(self._fn(s, t, pts, order), dtype=float)


class LinearSecondLevel(TwoTimeVectorField):
    """W_ts(x) = (t - s) * b, the drift insertion of a constant field b."""

    def __init__(self, b, horizon):
        b = np.asarray(b, dtype=float)
        super().__init__(b.size, horizon, max_order=3)
        self.b = b

    def _evaluate(self, s, t, pts, order):
        if order == 0:
            return np.broadcast_to((t - s) * self.b, (pts.shape[0], self.dim)).copy()
        return np.zeros((pts.shape[0], self.dim) + (self.dim,) * order)


class ShiftedSecondLevel(TwoTimeVectorField):
    """W'_ts = W_ts + X_t - X_s for a time-indexed vector-field path X."""

    def __init__(self, base, path):
        super().__init__(base.dim, base.horizon, base.max_order)
        self.base = base
        self.path = path

    def _evaluate(self, s, t, pts, order):
        out = self.base.evaluate(s, t, pts, order)
        xt = np.asarray(self.path(t, pts, order), dtype=float)
        xs = np.asarray(self.path(s, pts, order), dtype=float)
        return out + xt - xs


class ScaledTwoTime(TwoTimeVectorField):
    def __init__(self, base, factor):
        super().__init__(base.dim, base.horizon, base.max_order)
        self.base = base
        self.factor = float(factor)

    def _evaluate(self, s, t, pts, order):
        return self.factor * self.base.evaluate(s, t, pts, order)


class DifferenceTwoTime(TwoTimeVectorField):
    def __init__(self, a, b):
        if a.dim != b.dim:
            raise ValueError("dimension mismatch")
        super().__init__(a.dim, min(a.horizon, b.horizon), min(a.max_order, b.max_order))
        self.a, self.b = a, b

    def _evaluate(self, s, t, pts, order):
        return self.a.evaluate(s, t, pts, order) - self.b.evaluate(s, t, pts, order)
