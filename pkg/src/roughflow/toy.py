"""The oscillatory-phase toy family on the plane and its pure-area limit.

The plane is identified with the complex numbers: multiplication by i is the
90-degree rotation.  Everything about the driving field

    v_t(x) = i f(x) exp(i f(x) t)

is available in closed form once the three oscillatory primitives
int exp(+-ifr) dr and int r exp(2ifr) dr are written out, so first and second
driver levels (and their spatial derivatives) evaluate exactly at any pair of
times.  The space/time rescaled family contracts space by eps^2, speeds time
up by eps^-2 and scales the two levels by eps and eps^4; its first level dies
while the second level survives as the pure-area driver
(0, -1/4 (t^2 - s^2) f(0) grad f(0)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import SpatialDomain, TimeGrid
from .driver import DriverRegularity, RoughDriver
from .errors import ToleranceError
from .fields import TwoTimeVectorField, ZeroTwoTime, as_points
from .flow import SolverConfig, solve_flow
from .quadrature import QuadratureConfig, composite_nodes


def vec(z):
    """Complex array -> trailing length-2 real axis."""
    return np.stack([np.real(z), np.imag(z)], axis=-1)


@dataclass(frozen=True)
class PhaseFunction:
    """Scalar C^3-bounded phase with exact derivatives.

    value/grad/hess/third are vectorized over (n, 2) points; c3_bound is a
    certificate for sup of |f| and its derivatives up to order 3.
    """

    value: object
    grad: object
    hess: object
    third: object
    c3_bound: float

    def at_origin(self):
        zero = np.zeros((1, 2))
        return float(self.value(zero)[0]), self.grad(zero)[0]


def default_phase(amplitude=0.25, wavevector=(0.4, 0.0)):
    """f(x) = 1 + a tanh(<k, x>): analytic bounds, nonzero f(0), grad f(0) = a k."""
    a = float(amplitude)
    k = np.asarray(wavevector, dtype=float)
    if not 0 <= a < 1:
        raise ValueError("amplitude must be in [0, 1) so the phase stays positive")

    def u(pts):
        return pts @ k

    def value(pts):
        return 1.0 + a * np.tanh(u(pts))

    def grad(pts):
        g1 = 1.0 - np.tanh(u(pts)) ** 2
        return a * g1[:, None] * k

    def hess(pts):
        th = np.tanh(u(pts))
        g2 = -2.0 * th * (1.0 - th ** 2)
        return a * g2[:, None, None] * np.einsum("i,j->ij", k, k)

    def third(pts):
        th = np.tanh(u(pts))
        g3 = (1.0 - th ** 2) * (6.0 * th ** 2 - 2.0)
        return a * g3[:, None, None, None] * np.einsum("i,j,k->ijk", k, k, k)

    kn = np.linalg.norm(k)
    bound = max(1.0 + a, a * kn, a * kn ** 2, 2 * a * kn ** 3)
    return PhaseFunction(value, grad, hess, third, c3_bound=bound)


@dataclass(frozen=True)
class ToyDriverFamily:
    eps: float
    phase: PhaseFunction
    horizon: float

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")


# ---------------------------------------------------------------------------
# closed forms for the unscaled field
# ---------------------------------------------------------------------------

def _primitives(f, s, t):
    """Oscillatory primitives over [s, t] for scalar phase array f (nonzero)."""
    Et, Es = np.exp(1j * f * t), np.exp(1j * f * s)
    i_f = 1j * f
    J_plus = (Et - Es) / i_f
    J_minus = (np.conj(Et) - np.conj(Es)) / (-i_f)
    K_plus = (Et * (t / i_f - 1.0 / i_f ** 2)
              - Es * (s / i_f - 1.0 / i_f ** 2))
    K_minus = (np.conj(Et) * (t / (-i_f) - 1.0 / i_f ** 2)
               - np.conj(Es) * (s / (-i_f) - 1.0 / i_f ** 2))
    a2 = 2j * f
    I2 = Et ** 2 * (t / a2 - 1.0 / a2 ** 2) - Es ** 2 * (s / a2 - 1.0 / a2 ** 2)
    I3 = (Et ** 2 * (t ** 2 / a2 - 2 * t / a2 ** 2 + 2.0 / a2 ** 3)
          - Es ** 2 * (s ** 2 / a2 - 2 * s / a2 ** 2 + 2.0 / a2 ** 3))
    return {"Et": Et, "Es": Es, "Jp": J_plus, "Jm": J_minus,
            "Kp": K_plus, "Km": K_minus, "I2": I2, "I3": I3}


def _levels(phase: PhaseFunction, s, t, pts, want_dw=False):
    """Closed-form V, DV, D2V, W (and DW) of the unscaled toy lift."""
    f = phase.value(pts)
    if np.any(np.abs(f) < 1e-12):
        raise ValueError("closed forms require a nonvanishing phase; "
                         "use the quadrature path for degenerate phases")
    G = phase.grad(pts)
    H = phase.hess(pts)
    Gc = G[:, 0] + 1j * G[:, 1]
    pr = _primitives(f, s, t)
    Et, Es = pr["Et"], pr["Es"]
    Vc = Et - Es
    c1 = 1j * (t * Et - s * Es)
    q = -(t ** 2 * Et - s ** 2 * Es)
    m = np.real(np.conj(Gc) * Vc)
    out = {
        "V": vec(Vc),
        "DV": np.einsum("ni,nj->nij", vec(c1), G),
        "D2V": (np.einsum("ni,njk->nijk", vec(c1), H)
                + np.einsum("ni,nj,nk->nijk", vec(q), G, G)),
    }
    t1 = -0.25 * (t ** 2 - s ** 2) * f * Gc
    t2 = 0.5 * c1 * m
    t3 = 0.5 * f * np.conj(Gc) * pr["I2"]
    A = Gc * pr["Jm"] - np.conj(Gc) * pr["Jp"]
    t4 = 0.5 * f * s * Es * A
    out["W"] = vec(t1 + t2 + t3 + t4)
    out["W_main"] = vec(t1)
    if want_dw:
        Hc = H[:, 0, :] + 1j * H[:, 1, :]           # column k -> d_k grad f
        GcN = Gc[:, None]
        fN = f[:, None]
        d1 = -0.25 * (t ** 2 - s ** 2) * (G * GcN + fN * Hc)
        d2 = 0.5 * (q[:, None] * G * m[:, None]
                    + c1[:, None] * (np.real(np.conj(Hc) * Vc[:, None])
                                     + G * np.real(np.conj(Gc) * c1)[:, None]))
        d3 = (0.5 * G * (np.conj(Gc) * pr["I2"])[:, None]
              + 0.5 * fN * np.conj(Hc) * pr["I2"][:, None]
              + fN * (np.conj(GcN) * 1j * pr["I3"][:, None]) * G)
        dA = (Hc * pr["Jm"][:, None] - np.conj(Hc) * pr["Jp"][:, None]
              - 1j * G * (Gc * pr["Km"] + np.conj(Gc) * pr["Kp"])[:, None])
        d4 = 0.5 * s * (G * (Es * (1.0 + 1j * s * f) * A)[:, None]
                        + fN * Es[:, None] * dA)
        dw_c = d1 + d2 + d3 + d4                    # (n, 2) complex: column k
        out["DW"] = np.stack([vec(dw_c[:, 0]), vec(dw_c[:, 1])], axis=-1)
    return out


def toy_first_level(phase: PhaseFunction, s, t, x):
    """V_ts(x) = exp(i f(x) t) - exp(i f(x) s) as a 2-vector; |V| <= 2."""
    pts = as_points(x, 2)
    f = phase.value(pts)
    return vec(np.exp(1j * f * t) - np.exp(1j * f * s))


def toy_second_level(phase: PhaseFunction, s, t, x, quad: QuadratureConfig = None):
    """Second level of the toy lift: the -1/4 (t^2-s^2) f grad f main term
    plus the oscillatory remainder.

    With `quad` the remainder integrals are evaluated by composite quadrature
    (refined once to certify convergence); otherwise the closed forms are
    used, which require the phase to stay away from 0.
    """
    pts = as_points(x, 2)
    if quad is None:
        return _levels(phase, s, t, pts)["W"]
    f = phase.value(pts)
    G = phase.grad(pts)
    Gc = G[:, 0] + 1j * G[:, 1]
    main = -0.25 * (t ** 2 - s ** 2) * f * Gc

    def remainder(cfg):
        nodes, weights = composite_nodes(s, t, cfg)
        I2 = np.einsum("q,nq->n", weights + 0j,
                       nodes[None, :] * np.exp(2j * f[:, None] * nodes[None, :]))
        Jp = np.einsum("q,nq->n", weights + 0j,
                       np.exp(1j * f[:, None] * nodes[None, :]))
        Jm = np.einsum("q,nq->n", weights + 0j,
                       np.exp(-1j * f[:, None] * nodes[None, :]))
        Et, Es = np.exp(1j * f * t), np.exp(1j * f * s)
        Vc = Et - Es
        c1 = 1j * (t * Et - s * Es)
        t2 = 0.5 * c1 * np.real(np.conj(Gc) * Vc)
        t3 = 0.5 * f * np.conj(Gc) * I2
        t4 = 0.5 * f * s * Es * (Gc * Jm - np.conj(Gc) * Jp)
        return t2 + t3 + t4

    # resolve the oscillation: ~8 substeps per phase period
    per_unit = int(np.ceil(4.0 * (np.max(np.abs(f)) + 1.0)))
    n_sub = max(quad.substeps, per_unit * max(1, int(np.ceil(t - s))))
    coarse = remainder(QuadratureConfig(quad.order, n_sub))
    fine = remainder(QuadratureConfig(quad.order, 2 * n_sub))
    scale = max(1.0, float(np.max(np.abs(fine + main))))
    if np.max(np.abs(fine - coarse)) > 1e-6 * scale:
        raise ToleranceError("toy remainder quadrature did not converge")
    return vec(main + fine)


# ---------------------------------------------------------------------------
# rescaled family and its limit
# ---------------------------------------------------------------------------

class ToyFirstLevelField(TwoTimeVectorField):
    def __init__(self, fam: ToyDriverFamily):
        super().__init__(2, fam.horizon, max_order=2)
        self.fam = fam

    def _evaluate(self, s, t, pts, order):
        e = self.fam.eps
        lv = _levels(self.fam.phase, s / e ** 2, t / e ** 2, e ** 2 * pts)
        if order == 0:
            return e * lv["V"]
        if order == 1:
            return e ** 3 * lv["DV"]
        return e ** 5 * lv["D2V"]


class ToySecondLevelField(TwoTimeVectorField):
    def __init__(self, fam: ToyDriverFamily):
        super().__init__(2, fam.horizon, max_order=1)
        self.fam = fam

    def _evaluate(self, s, t, pts, order):
        e = self.fam.eps
        lv = _levels(self.fam.phase, s / e ** 2, t / e ** 2, e ** 2 * pts,
                     want_dw=(order == 1))
        if order == 0:
            return e ** 4 * lv["W"]
        return e ** 6 * lv["DW"]


class PureAreaSecondLevel(TwoTimeVectorField):
    """W_ts = -1/4 (t^2 - s^2) c for a constant vector c; zero first level."""

    def __init__(self, c, horizon):
        super().__init__(2, horizon, max_order=3)
        self.c = np.asarray(c, dtype=float)

    def _evaluate(self, s, t, pts, order):
        if order == 0:
            w = -0.25 * (t ** 2 - s ** 2) * self.c
            return np.broadcast_to(w, (pts.shape[0], 2)).copy()
        return np.zeros((pts.shape[0], 2) + (2,) * order)


_TOY_REG = DriverRegularity(2.0, 0.9)


def rescaled_driver(fam: ToyDriverFamily):
    """The eps-rescaled toy driver (eps V, eps^4 W with contracted space);
    this is the canonical lift of the sped-up, eps^-1-amplified field."""
    return RoughDriver(ToyFirstLevelField(fam), ToySecondLevelField(fam), _TOY_REG)


def limit_driver(phase: PhaseFunction, horizon=1.0):
    """Pure second-level driver (0, -1/4 (t^2 - s^2) f(0) grad f(0))."""
    f0, g0 = phase.at_origin()
    return RoughDriver(ZeroTwoTime(2, horizon),
                       PureAreaSecondLevel(f0 * g0, horizon), _TOY_REG)


# ---------------------------------------------------------------------------
# convergence report
# ---------------------------------------------------------------------------

def _first_level_distance(fam, gamma, pairs, pts):
    """sup over pairs/points of the C^0-or-C^1 size of V^eps over |t-s|^gamma."""
    e = fam.eps
    f = fam.phase.value(e ** 2 * pts)
    G = fam.phase.grad(e ** 2 * pts)
    gn = np.linalg.norm(G, axis=-1)
    s = pairs[:, 0][:, None] / e ** 2
    t = pairs[:, 1][:, None] / e ** 2
    Et = np.exp(1j * f[None, :] * t)
    Es = np.exp(1j * f[None, :] * s)
    v0 = e * np.abs(Et - Es)
    v1 = e ** 3 * np.abs(1j * (t * Et - s * Es)) * gn[None, :]
    weight = (pairs[:, 1] - pairs[:, 0])[:, None] ** gamma
    return float(np.max(np.maximum(v0, v1) / weight))


def _second_level_distance(fam, limit_c, gamma, pairs, pts):
    e = fam.eps
    best = 0.0
    w_lim = -0.25 * (pairs[:, 1] ** 2 - pairs[:, 0] ** 2)[:, None] * limit_c[None, :]
    weight = (pairs[:, 1] - pairs[:, 0]) ** (2 * gamma)
    for p in pts:
        lv = _levels(fam.phase, pairs[:, 0] / e ** 2, pairs[:, 1] / e ** 2,
                     np.broadcast_to(e ** 2 * p, (pairs.shape[0], 2)).copy())
        gap = np.linalg.norm(e ** 4 * lv["W"] - w_lim, axis=-1)
        best = max(best, float(np.max(gap / weight)))
    return best


def convergence_report(phase: PhaseFunction, eps_list, gamma,
                       grid: TimeGrid, domain: SpatialDomain,
                       x0=(0.0, 0.0)):
    """Per-eps table of first/second-level Hoelder distances to the limit
    driver and the sup-over-time flow distance to the limit flow.

    Rows: {eps, v_dist, w_dist, flow_err}.  The pair grid refines the given
    time grid to resolve gaps of order eps^2, where the first-level supremum
    lives.
    """
    if len(eps_list) < 3:
        raise ValueError("need at least 3 eps values")
    if not 0 < gamma < 0.5:
        raise ValueError("gamma must lie in (0, 1/2)")
    T = grid.horizon
    pts = domain.grid()
    f0, g0 = phase.at_origin()
    limit_c = f0 * g0
    lim = limit_driver(phase, T)
    rows = []
    for eps in eps_list:
        fam = ToyDriverFamily(eps, phase, T)
        n_fine = max(64, int(np.ceil(4 * T / eps ** 2)))
        pair_grid = TimeGrid.uniform(T, n_fine)
        pairs = pair_grid.pairs_at_scales()
        v_dist = _first_level_distance(fam, gamma, pairs, pts)
        w_dist = _second_level_distance(fam, limit_c, gamma, pairs, pts)
        # identical refinement => identical partitions, so the sup runs over
        # every step time and cannot alias with the eps^-2 phase
        refinement = max(256, int(np.ceil(100.0 * T / eps)))
        fm_eps = solve_flow(rescaled_driver(fam), SolverConfig(refinement), grid)
        fm_lim = solve_flow(lim, SolverConfig(refinement), grid)
        pa = fm_eps.trajectory(np.asarray(x0, dtype=float))
        pb = fm_lim.trajectory(np.asarray(x0, dtype=float))
        flow_err = float(np.max(np.linalg.norm(pa[:, 0, :] - pb[:, 0, :], axis=-1)))
        rows.append({"eps": float(eps), "v_dist": v_dist,
                     "w_dist": w_dist, "flow_err": flow_err})
    return rows


def first_level_slope(rows):
    """Least-squares slope of log v_dist against log eps."""
    eps = np.array([r["eps"] for r in rows])
    v = np.array([r["v_dist"] for r in rows])
    return float(np.polyfit(np.log(eps), np.log(v), 1)[0])
