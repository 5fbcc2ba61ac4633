"""Rough drivers: Chen algebra, defects, canonical lifts and driver norms.

A driver is stored as the pair (V, W) of two-time vector fields; the full
second-order object is V/2 applied twice plus W, i.e. 0.5*V^2 + W.  The
second level of a canonical lift always carries the 1/2 prefactor,
W_ts = 0.5 * iint_{s<=u2<=u1<=t} [v_{u2}, v_{u1}] du2 du1,
which is the unique convention under which 0.5*V^2 + W equals the nested
integral of v_{u2} v_{u1} and the Chen relation holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .besov import holder_norm_from_orders
from .domain import SpatialDomain, TimeGrid
from .errors import EvaluationError
from .fields import (DifferenceTwoTime, ScaledTwoTime, ShiftedSecondLevel,
                     SmoothVectorField, TwoTimeVectorField, as_points)
from .quadrature import QuadratureConfig, reference_rule, split_interval


@dataclass(frozen=True)
class DriverRegularity:
    """Regularity indices: time exponent p, spatial exponents (2+r, 1+r)."""

    p: float
    r: float

    def __post_init__(self):
        if not (2.0 <= self.p < 2.0 + self.r < 3.0):
            raise ValueError("need 2 <= p < 2 + r < 3")
        if not (self.p / 3.0 < self.r <= 1.0):
            raise ValueError("need p/3 < r <= 1")

    @property
    def spatial(self):
        return 2.0 + self.r


@dataclass(frozen=True)
class RoughDriver:
    """Two-time pair (V, W); second-order operator is 0.5*V^2 + W."""

    V: TwoTimeVectorField
    W: TwoTimeVectorField
    regularity: DriverRegularity

    @property
    def dim(self):
        return self.V.dim

    @property
    def horizon(self):
        return self.V.horizon


def lie_bracket(value_a, jac_a, value_b, jac_b):
    """[A, B] = (DB)A - (DA)B for point batches."""
    return (np.einsum("pij,pj->pi", jac_b, value_a)
            - np.einsum("pij,pj->pi", jac_a, value_b))


def additivity_defect(V, s, u, t, domain: SpatialDomain):
    """Max over the domain grid of |V_ts - V_tu - V_us|."""
    if not (0.0 <= s <= u <= t):
        raise ValueError("need 0 <= s <= u <= t")
    pts = domain.grid()
    gap = (V.evaluate(s, t, pts) - V.evaluate(u, t, pts) - V.evaluate(s, u, pts))
    return float(np.max(np.linalg.norm(gap, axis=-1))) if pts.size else 0.0


def chen_defect(driver: RoughDriver, s, u, t, domain: SpatialDomain):
    """Max over the grid of |W_ts - W_tu - W_us - 0.5*[V_us, V_tu]|."""
    if not (0.0 <= s <= u <= t):
        raise ValueError("need 0 <= s <= u <= t")
    pts = domain.grid()
    v_us = driver.V.evaluate(s, u, pts)
    v_tu = driver.V.evaluate(u, t, pts)
    dv_us = driver.V.evaluate(s, u, pts, order=1)
    dv_tu = driver.V.evaluate(u, t, pts, order=1)
    bracket = lie_bracket(v_us, dv_us, v_tu, dv_tu)
    gap = (driver.W.evaluate(s, t, pts) - driver.W.evaluate(u, t, pts)
           - driver.W.evaluate(s, u, pts) - 0.5 * bracket)
    return float(np.max(np.linalg.norm(gap, axis=-1)))


# ---------------------------------------------------------------------------
# canonical lift by progressive nested quadrature
# ---------------------------------------------------------------------------

def _lift_sweep(v: SmoothVectorField, s, t, pts, cfg: QuadratureConfig,
                breakpoints, want):
    """One left-to-right sweep over [s, t] computing any of
    V, DV, D2V (plain integrals) and W, DW (nested integrals).

    Running integrals at interior Gauss nodes come from integrating the nodal
    interpolant, so the nested level needs no inner quadrature loop.
    """
    x_ref, w_ref, partial = reference_rule(cfg.order)
    n = pts.shape[0]
    d = v.dim
    need_w = "W" in want or "DW" in want
    need_dw = "DW" in want
    need_d2v = "D2V" in want or need_dw
    acc = {
        "V": np.zeros((n, d)),
        "DV": np.zeros((n, d, d)) if ("DV" in want or need_w) else None,
        "D2V": np.zeros((n, d, d, d)) if need_d2v else None,
        "W": np.zeros((n, d)) if need_w else None,
        "DW": np.zeros((n, d, d)) if need_dw else None,
    }
    for a, b in split_interval(s, t, breakpoints):
        sub = np.linspace(a, b, cfg.substeps + 1)
        h = (b - a) / cfg.substeps
        for lo in sub[:-1]:
            nodes = lo + h * x_ref
            vals = np.stack([v(r, pts, 0) for r in nodes])          # (q,n,d)
            jacs = (np.stack([v(r, pts, 1) for r in nodes])
                    if acc["DV"] is not None else None)
            hesss = (np.stack([v(r, pts, 2) for r in nodes])
                     if need_d2v else None)
            if need_w:
                v_run = acc["V"][None] + h * np.einsum("jl,ln...->jn...", partial, vals)
                dv_run = acc["DV"][None] + h * np.einsum("jl,ln...->jn...", partial, jacs)
                integ = (np.einsum("qpij,qpj->qpi", jacs, v_run)
                         - np.einsum("qpij,qpj->qpi", dv_run, vals))
                acc["W"] += 0.5 * h * np.einsum("q,qpi->pi", w_ref, integ)
                if need_dw:
                    d2v_run = acc["D2V"][None] + h * np.einsum(
                        "jl,ln...->jn...", partial, hesss)
                    dinteg = (np.einsum("qpijk,qpj->qpik", hesss, v_run)
                              + np.einsum("qpij,qpjk->qpik", jacs, dv_run)
                              - np.einsum("qpijk,qpj->qpik", d2v_run, vals)
                              - np.einsum("qpij,qpjk->qpik", dv_run, jacs))
                    acc["DW"] += 0.5 * h * np.einsum("q,qpik->pik", w_ref, dinteg)
            acc["V"] += h * np.einsum("q,qn...->n...", w_ref, vals)
            if acc["DV"] is not None:
                acc["DV"] += h * np.einsum("q,qn...->n...", w_ref, jacs)
            if need_d2v:
                acc["D2V"] += h * np.einsum("q,qn...->n...", w_ref, hesss)
    return acc


class LiftFirstLevel(TwoTimeVectorField):
    """V_ts = int_s^t v_u du by composite quadrature; derivatives commute
    with the time integral."""

    def __init__(self, v: SmoothVectorField, grid: TimeGrid, cfg: QuadratureConfig):
        super().__init__(v.dim, grid.horizon, max_order=min(v.max_order, 3))
        self.v, self.grid, self.cfg = v, grid, cfg

    def _breaks(self):
        return tuple(self.grid.points[1:-1]) + self.v.time_breakpoints

    def _evaluate(self, s, t, pts, order):
        x_ref, w_ref, _ = reference_rule(self.cfg.order)
        out = None
        for a, b in split_interval(s, t, self._breaks()):
            sub = np.linspace(a, b, self.cfg.substeps + 1)
            h = (b - a) / self.cfg.substeps
            for lo in sub[:-1]:
                for xq, wq in zip(x_ref, w_ref):
                    val = self.v(lo + h * xq, pts, order) * (h * wq)
                    out = val if out is None else out + val
        if not np.all(np.isfinite(out)):
            raise EvaluationError("non-finite field values in canonical lift")
        return out


class LiftSecondLevel(TwoTimeVectorField):
    """W_ts = 0.5 * iint [v_{u2}, v_{u1}] via one progressive sweep."""

    def __init__(self, v: SmoothVectorField, grid: TimeGrid, cfg: QuadratureConfig):
        max_order = 1 if v.max_order >= 2 else 0
        super().__init__(v.dim, grid.horizon, max_order=max_order)
        self.v, self.grid, self.cfg = v, grid, cfg

    def _evaluate(self, s, t, pts, order):
        want = {"W"} if order == 0 else {"W", "DW"}
        breaks = tuple(self.grid.points[1:-1]) + self.v.time_breakpoints
        acc = _lift_sweep(self.v, s, t, pts, self.cfg, breaks, want)
        out = acc["W"] if order == 0 else acc["DW"]
        if not np.all(np.isfinite(out)):
            raise EvaluationError("non-finite field values in canonical lift")
        return out


def canonical_lift(v: SmoothVectorField, grid: TimeGrid,
                   quad: QuadratureConfig = QuadratureConfig(),
                   regularity: DriverRegularity = DriverRegularity(2.0, 0.9)):
    """Canonical lift of a time-dependent field into a rough driver."""
    if v.max_order < 1:
        raise ValueError("canonical lift needs at least first derivatives")
    return RoughDriver(LiftFirstLevel(v, grid, quad),
                       LiftSecondLevel(v, grid, quad), regularity)


def perturb_second_level(driver: RoughDriver, path):
    """Shift the second level by the increments of a vector-field path X.

    `path(t, points, order)` evaluates X_t; V and the Chen defect are
    untouched because the increment X_t - X_s is additive.
    """
    return RoughDriver(driver.V, ShiftedSecondLevel(driver.W, path),
                       driver.regularity)


def scale_driver(driver: RoughDriver, lam):
    """(V, W) -> (lam V, lam^2 W); used by homogeneity checks."""
    return RoughDriver(ScaledTwoTime(driver.V, lam),
                       ScaledTwoTime(driver.W, lam * lam), driver.regularity)


def difference_driver(a: RoughDriver, b: RoughDriver):
    """Componentwise difference; not itself a rough driver, but the norm
    machinery applies to the pair."""
    return RoughDriver(DifferenceTwoTime(a.V, b.V),
                       DifferenceTwoTime(a.W, b.W), a.regularity)


# ---------------------------------------------------------------------------
# driver norm
# ---------------------------------------------------------------------------

def _two_time_holder(component, alpha, weight_exp, pairs, pts):
    top = int(np.floor(alpha))
    orders = list(range(min(top, component.max_order) + 1))
    best = 0.0
    for s, t in pairs:
        evals = [component.evaluate(s, t, pts, order=k) for k in orders]
        norm = holder_norm_from_orders(evals, pts, alpha)
        best = max(best, norm / (t - s) ** weight_exp)
    return best


def driver_holder_norm_components(driver: RoughDriver, reg: DriverRegularity,
                                  grid: TimeGrid, domain: SpatialDomain):
    """(V component, W component) of the discrete driver norm.

    Spatial norms are grid suprema, hence lower bounds of the true norms;
    nested grid refinement can only increase them.
    """
    if grid.points.size < 2:
        raise ValueError("empty time grid")
    pts = domain.grid()
    pairs = grid.pairs_at_scales()
    v_norm = _two_time_holder(driver.V, 2.0 + reg.r, 1.0 / reg.p, pairs, pts)
    w_norm = _two_time_holder(driver.W, 1.0 + reg.r, 2.0 / reg.p, pairs, pts)
    return v_norm, w_norm


def driver_holder_norm(driver: RoughDriver, reg: DriverRegularity,
                       grid: TimeGrid, domain: SpatialDomain):
    """Max of the weighted two-time Hoelder norms of V and W."""
    return max(driver_holder_norm_components(driver, reg, grid, domain))
