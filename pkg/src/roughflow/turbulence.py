"""Rescaled trajectories, localized driver samples, homogenization oracles and
the discrete-skeleton consistency machinery for the turbulence model

    dx_t = v + eps F(x_t),     x^eps_t := x_{t/eps^2} - (t/eps^2) v,

so that x^eps solves  dx^eps_t = eps^-1 F(x^eps_t + eps^-2 t v).

Everything the weak limit needs is a u-integral of derivative correlations of
F along the sweep direction; with the finite-range kernel those integrals
truncate exactly and the quadratures are effectively exact.  Empirical
statistics always come with oracle counterparts computed by quadrature, never
by simulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .domain import TimeGrid
from .driver import DriverRegularity, RoughDriver, canonical_lift
from .errors import CoverageError
from .fields import SmoothVectorField
from .quadrature import QuadratureConfig
from .randfield import (FieldRealization, KernelSpec, box_for_bounds,
                        covariance_oracle, noise_for_box, scalar_correlation)

# ---------------------------------------------------------------------------
# smooth plateau cutoff: 1 on B(0, R), 0 outside B(0, 2R), C^3 in between
# ---------------------------------------------------------------------------


def _smooth_step(w):
    """7th-order smoothstep: 0 -> 1 on [0, 1] with three vanishing derivatives
    at both ends."""
    w = np.clip(w, 0.0, 1.0)
    return ((-20.0 * w + 70.0) * w - 84.0) * w ** 2 * w ** 2 + 35.0 * w ** 4


def _smooth_step_d1(w):
    inside = (w > 0.0) & (w < 1.0)
    w = np.clip(w, 0.0, 1.0)
    return np.where(inside, (((-140.0 * w + 420.0) * w - 420.0) * w + 140.0) * w ** 3, 0.0)


def _smooth_step_d2(w):
    inside = (w > 0.0) & (w < 1.0)
    w = np.clip(w, 0.0, 1.0)
    return np.where(inside, (((-840.0 * w + 2100.0) * w - 1680.0) * w + 420.0) * w ** 2, 0.0)


def chi_value(points, radius):
    pts = np.asarray(points, dtype=float)
    r = np.linalg.norm(pts, axis=-1)
    return 1.0 - _smooth_step(r / radius - 1.0)


def chi_grad(points, radius):
    pts = np.asarray(points, dtype=float)
    r = np.linalg.norm(pts, axis=-1)
    safe = np.maximum(r, 1e-300)
    amp = -_smooth_step_d1(r / radius - 1.0) / radius
    return amp[..., None] * pts / safe[..., None]


def chi_hess(points, radius):
    pts = np.asarray(points, dtype=float)
    d = pts.shape[-1]
    r = np.linalg.norm(pts, axis=-1)
    safe = np.maximum(r, 1e-300)
    u = pts / safe[..., None]
    s1 = -_smooth_step_d1(r / radius - 1.0) / radius
    s2 = -_smooth_step_d2(r / radius - 1.0) / radius ** 2
    eye = np.eye(d)
    uu = np.einsum("...i,...j->...ij", u, u)
    return (s2[..., None, None] * uu
            + s1[..., None, None] * (eye - uu) / safe[..., None, None])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TurbulenceConfig:
    """Parameters of one turbulence study.

    velocity: nonzero mean velocity v; horizon: rescaled-time horizon T;
    samples: Monte Carlo realizations; radius: localization radius R;
    micro_step: unscaled-time integration step h0 (the micro integrator uses
    eps^2 h0 in rescaled time); margin: transverse working-box padding in
    length units (None = auto from the diffusion oracle).
    """

    velocity: np.ndarray
    horizon: float = 1.0
    samples: int = 200
    radius: float = 2.0
    micro_step: float = None
    margin: float = None

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float)
        object.__setattr__(self, "velocity", v)
        if np.linalg.norm(v) == 0.0:
            raise ValueError("mean velocity must be nonzero")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.samples < 2:
            raise ValueError("need at least 2 samples")
        if self.radius <= 0:
            raise ValueError("localization radius must be positive")

    @property
    def speed(self):
        return float(np.linalg.norm(self.velocity))

    def step_for(self, spec: KernelSpec):
        if self.micro_step is not None:
            return float(self.micro_step)
        return 0.02 * spec.radius / self.speed


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def _auto_margin(spec, cfg, eps):
    if cfg.margin is not None:
        return float(cfg.margin)
    c0 = covariance_oracle(spec, np.zeros(spec.dim))
    sigma = float(np.sqrt(np.trace(c0) * cfg.horizon))
    return max(2.0, 8.0 * sigma * max(eps, 1.0), 4.0 * abs(np.trace(c0)) * cfg.horizon)


def _tube_bounds(spec, cfg, eps, x0s, margin, extra=0.0):
    """Physical bounds of the swept tube x0 + [0, T/eps^2] v +- margins."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    sweep = cfg.velocity * cfg.horizon / eps ** 2
    corners = np.concatenate([x0s, x0s + sweep])
    lo = corners.min(axis=0) - margin - extra
    hi = corners.max(axis=0) + margin + extra
    return lo, hi


class EnsembleField:
    """M independent realizations on a common lattice box, with a batched
    evaluator taking one position per realization (or several, stacked)."""

    def __init__(self, spec: KernelSpec, seeds, bounds):
        self.spec = spec
        self.seeds = list(int(s) for s in seeds)
        lo, hi = bounds
        self.lattice_lo, self.lattice_hi = box_for_bounds(spec, lo, hi)
        self.noise = np.stack([
            noise_for_box(spec, s, self.lattice_lo, self.lattice_hi)
            for s in self.seeds])
        self._kernel = spec.kernel()
        k = int(np.ceil(spec.radius / spec.spacing + 0.5))
        o = np.arange(-k, k + 1)
        if spec.dim == 1:
            self._offsets = o[:, None]
        else:
            oi, oj = np.meshgrid(o, o, indexing="ij")
            self._offsets = np.stack([oi.ravel(), oj.ravel()], axis=-1)

    def evaluate(self, member, positions):
        """F_{seed[member[p]]}(positions[p]) for index array `member`."""
        spec = self.spec
        pts = np.atleast_2d(np.asarray(positions, dtype=float))
        member = np.asarray(member, dtype=int)
        h = spec.spacing
        base = np.round(pts / h).astype(int)
        sites = base[:, None, :] + self._offsets[None, :, :]
        if np.any(sites < self.lattice_lo) or np.any(sites >= self.lattice_hi):
            raise CoverageError("trajectory left the working box; "
                                "increase the margin")
        rel = sites - self.lattice_lo
        if spec.dim == 1:
            xi = self.noise[member[:, None], rel[..., 0]]
        else:
            xi = self.noise[member[:, None], rel[..., 0], rel[..., 1]]
        offs = pts[:, None, :] - sites * h
        w = self._kernel.deriv_values(offs, 0)
        return np.einsum("nm,nmi->ni", w, xi)


def _integrate_rescaled(evaluate, x0s, cfg, eps, n_store=129, radius=None):
    """RK4 on dx/dt = eps^-1 F(x + eps^-2 t v) (optionally cut off by chi^R);
    `evaluate(positions)` supplies F for the whole batch.  Returns the path
    at ~n_store times plus the max |x| seen over all stage evaluations."""
    T = cfg.horizon
    dt = eps ** 2 * cfg.step_for_spec
    n = max(1, int(np.ceil(T / dt)))
    dt = T / n
    stride = max(1, n // (n_store - 1))
    x = np.array(x0s, dtype=float)
    path = [x.copy()]
    times = [0.0]
    vmat = cfg.velocity
    max_r = np.linalg.norm(x, axis=-1)

    def rhs(t, pos):
        nonlocal max_r
        max_r = np.maximum(max_r, np.linalg.norm(pos, axis=-1))
        val = evaluate(pos + (t / eps ** 2) * vmat) / eps
        if radius is not None:
            val = val * chi_value(pos, radius)[:, None]
        return val

    for i in range(n):
        t = i * dt
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (i + 1) % stride == 0 or i == n - 1:
            path.append(x.copy())
            times.append((i + 1) * dt)
    return np.array(times), np.stack(path, axis=0), max_r


def rescaled_trajectory(realization: FieldRealization, cfg: TurbulenceConfig,
                        eps, x0, n_store=129):
    """Path of the recentered fast process for one realization.

    Returns (times, positions) on a decimated grid; integration itself runs
    at micro-step eps^2 h0.  Deterministic given the realization's seed.
    """
    cfgx = _with_step(cfg, realization.spec)
    x0 = np.asarray(x0, dtype=float)[None, :]
    times, path, _ = _integrate_rescaled(
        lambda pos: realization.evaluate(pos), x0, cfgx, eps, n_store)
    return times, path[:, 0, :]


def _with_step(cfg, spec):
    class _C:
        horizon = cfg.horizon
        velocity = cfg.velocity
        step_for_spec = cfg.step_for(spec)
    return _C


def ensemble_endpoints(spec: KernelSpec, cfg: TurbulenceConfig, eps, x0s,
                       seeds, n_store=2):
    """Trajectories for all seeds at once on a shared working box.

    x0s: (k, d) initial points integrated per seed (k*len(seeds) paths).
    Returns (times, paths) with paths of shape (n_times, M, k, d).
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    margin = _auto_margin(spec, cfg, eps)
    ens = EnsembleField(spec, seeds, _tube_bounds(spec, cfg, eps, x0s, margin))
    M, k = len(seeds), x0s.shape[0]
    member = np.repeat(np.arange(M), k)
    start = np.tile(x0s, (M, 1))
    cfgx = _with_step(cfg, spec)
    times, path, _ = _integrate_rescaled(
        lambda pos: ens.evaluate(member, pos), start, cfgx, eps, n_store)
    return times, path.reshape(path.shape[0], M, k, spec.dim)


# ---------------------------------------------------------------------------
# localized micro-field and driver samples
# ---------------------------------------------------------------------------

def turbulent_microfield(realization: FieldRealization, velocity, eps,
                         radius=None):
    """The driving field chi^R(x) eps^-1 F(x + t eps^-2 v) as a
    SmoothVectorField with exact derivatives (orders 0..2)."""
    v = np.asarray(velocity, dtype=float)
    d = v.size

    def shift(t, pts):
        return pts + (t / eps ** 2) * v

    def value(t, pts):
        out = realization.evaluate(shift(t, pts)) / eps
        if radius is not None:
            out = out * chi_value(pts, radius)[:, None]
        return out

    def jac(t, pts):
        y = shift(t, pts)
        F = realization.evaluate(y) / eps
        DF = realization.evaluate(y, 1) / eps
        if radius is None:
            return DF
        c = chi_value(pts, radius)
        g = chi_grad(pts, radius)
        return c[:, None, None] * DF + np.einsum("ni,nj->nij", F, g)

    def hess(t, pts):
        y = shift(t, pts)
        F = realization.evaluate(y) / eps
        DF = realization.evaluate(y, 1) / eps
        D2F = realization.evaluate(y, 2) / eps
        if radius is None:
            return D2F
        c = chi_value(pts, radius)
        g = chi_grad(pts, radius)
        H = chi_hess(pts, radius)
        return (c[:, None, None, None] * D2F
                + np.einsum("nij,nk->nijk", DF, g)
                + np.einsum("nik,nj->nijk", DF, g)
                + np.einsum("ni,njk->nijk", F, H))

    return SmoothVectorField(d, value, jac, hess)


def localized_driver(realization, cfg: TurbulenceConfig, eps, grid: TimeGrid,
                     quad: QuadratureConfig = None,
                     regularity=DriverRegularity(2.0, 0.9)):
    """RoughDriver assembled from the localized micro-field by canonical
    lift; quadrature substeps resolve the eps^2 oscillation scale."""
    if quad is None:
        per_interval = (grid.points[1] - grid.points[0]) / eps ** 2 * cfg.speed
        quad = QuadratureConfig(6, max(8, int(np.ceil(8.0 * per_interval))))
    v = turbulent_microfield(realization, cfg.velocity, eps, cfg.radius)
    return canonical_lift(v, grid, quad, regularity)


def _line_tables(realization, origins, velocity, w_lo, w_hi, dw):
    """F and DF along origin + w*v for w on a shared uniform grid, plus the
    cumulative tables that collapse the nested bracket integrals to endpoint
    lookups."""
    v = np.asarray(velocity, dtype=float)
    n_w = int(round((w_hi - w_lo) / dw))
    w = w_lo + dw * np.arange(n_w + 1)
    origins = np.atleast_2d(origins)
    P = origins.shape[0]
    pos = origins[:, None, :] + np.einsum("w,i->wi", w, v)[None, :, :]
    flat = pos.reshape(-1, v.size)
    F = realization.evaluate(flat).reshape(P, n_w + 1, v.size)
    DF = realization.evaluate(flat, 1).reshape(P, n_w + 1, v.size, v.size)

    def cum(arr):
        return cumulative_simpson(arr, dx=dw, axis=1, initial=0.0)

    cF = cum(F)
    cDF = cum(DF)
    tables = {
        "w": w, "F": F, "DF": DF, "cF": cF, "cDF": cDF,
        "cDFcF": cum(np.einsum("pwij,pwj->pwi", DF, cF)),
        "cDF_F": cum(np.einsum("pwij,pwj->pwi", cDF, F)),
        "cFcF": cum(np.einsum("pwi,pwl->pwil", F, cF)),
        "ccFF": cum(np.einsum("pwi,pwl->pwil", cF, F)),
    }
    return tables


def localized_driver_sample(realization, cfg: TurbulenceConfig, eps, pair,
                            points, dw=None):
    """(V^{eps,R}, W^{eps,R}) values at `points` for the time pair (s, t).

    The double bracket integral is integrated by parts into endpoint lookups
    of cumulative line tables, one table set per evaluation point.
    """
    s, t = pair
    R = cfg.radius
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if dw is None:
        dw = realization.spec.spacing / 5.0
    w0, w1 = s / eps ** 2, t / eps ** 2
    n_w = max(2, int(np.ceil((w1 - w0) / dw / 2.0)) * 2)
    dw = (w1 - w0) / n_w
    tb = _line_tables(realization, pts, cfg.velocity, w0, w1, dw)
    chi = chi_value(pts, R)
    gchi = chi_grad(pts, R)
    A, B = 0, n_w
    dcF = tb["cF"][:, B] - tb["cF"][:, A]
    V = eps * chi[:, None] * dcF
    cFA = tb["cF"][:, A]
    Ia = (tb["cDFcF"][:, B] - tb["cDFcF"][:, A]
          - np.einsum("pij,pj->pi", tb["cDF"][:, B] - tb["cDF"][:, A], cFA))
    Ib = (tb["cDF_F"][:, B] - tb["cDF_F"][:, A]
          - np.einsum("pij,pj->pi", tb["cDF"][:, A], dcF))
    Ic = (np.einsum("pil,pl->pi", tb["cFcF"][:, B] - tb["cFcF"][:, A], gchi)
          - dcF * np.einsum("pl,pl->p", gchi, cFA)[:, None])
    Id = (np.einsum("pil,pl->pi", tb["ccFF"][:, B] - tb["ccFF"][:, A], gchi)
          - cFA * np.einsum("pl,pl->p", gchi, dcF)[:, None])
    W = 0.5 * eps ** 2 * ((chi ** 2)[:, None] * (Ia - Ib)
                          + chi[:, None] * (Ic - Id))
    return V, W


def lattice_driver_samples(realization, cfg: TurbulenceConfig, eps, pair,
                           points, spacing, dw_target=0.05):
    """(V^{eps,R}, W^{eps,R}) on a v-aligned point lattice.

    Points must lie on the lattice {g (i v_hat + j v_perp)}; all points in a
    row j share one field line, so one cumulative table per row serves every
    point, and windows land exactly on table nodes because dw divides
    g / |v|.  Endpoint times are rounded to the nearest node (the effective
    pair is returned for use in the Hoelder weights).
    """
    s, t = pair
    R = cfg.radius
    v = cfg.velocity
    speed = cfg.speed
    vhat = v / speed
    perp = np.array([-vhat[1], vhat[0]])
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = float(spacing)
    i_coord = pts @ vhat / g
    j_coord = pts @ perp / g
    ii = np.round(i_coord).astype(int)
    jj = np.round(j_coord).astype(int)
    if (np.max(np.abs(i_coord - ii)) > 1e-8 or np.max(np.abs(j_coord - jj)) > 1e-8):
        raise ValueError("points are not on the v-aligned lattice")
    m = max(1, int(np.ceil((g / speed) / dw_target)))
    dw = (g / speed) / m
    w_s, w_t = s / eps ** 2, t / eps ** 2
    n_win = max(2, int(round((w_t - w_s) / dw)))
    t_eff = s + n_win * dw * eps ** 2
    i_lo, i_hi = ii.min(), ii.max()
    chi = chi_value(pts, R)
    gchi = chi_grad(pts, R)
    V = np.zeros_like(pts)
    W = np.zeros_like(pts)
    for j in np.unique(jj):
        sel = np.where(jj == j)[0]
        origin = (j * g) * perp + (i_lo * g) * vhat + w_s * v
        n_nodes = (i_hi - i_lo) * m + n_win
        w_grid = dw * np.arange(n_nodes + 1)
        pos = origin[None, :] + np.einsum("w,i->wi", w_grid, v)
        F = realization.evaluate(pos)
        DF = realization.evaluate(pos, 1)

        def cum(a):
            return cumulative_simpson(a, dx=dw, axis=0, initial=0.0)

        cF = cum(F)
        cDF = cum(DF)
        cDFcF = cum(np.einsum("wij,wj->wi", DF, cF))
        cDF_F = cum(np.einsum("wij,wj->wi", cDF, F))
        cFcF = cum(np.einsum("wi,wl->wil", F, cF))
        ccFF = cum(np.einsum("wi,wl->wil", cF, F))
        A = (ii[sel] - i_lo) * m
        B = A + n_win
        dcF = cF[B] - cF[A]
        cFA = cF[A]
        V[sel] = eps * chi[sel, None] * dcF
        Ia = cDFcF[B] - cDFcF[A] - np.einsum("pij,pj->pi", cDF[B] - cDF[A], cFA)
        Ib = cDF_F[B] - cDF_F[A] - np.einsum("pij,pj->pi", cDF[A], dcF)
        gc = gchi[sel]
        Ic = (np.einsum("pil,pl->pi", cFcF[B] - cFcF[A], gc)
              - dcF * np.einsum("pl,pl->p", gc, cFA)[:, None])
        Id = (np.einsum("pil,pl->pi", ccFF[B] - ccFF[A], gc)
              - cFA * np.einsum("pl,pl->p", gc, dcF)[:, None])
        W[sel] = 0.5 * eps ** 2 * ((chi[sel] ** 2)[:, None] * (Ia - Ib)
                                   + chi[sel, None] * (Ic - Id))
    return V, W, (s, t_eff)


def make_tightness_sampler(spec: KernelSpec, cfg: TurbulenceConfig, spacing,
                           dw_target=0.05, pad=2.0):
    """Sampler (eps, seed, s, t, points) -> (V, W) for the moment statistic,
    synthesizing one realization per seed over the swept tube."""

    def sampler(eps, seed, s, t, points):
        lo, hi = sample_box_for_points(spec, cfg, eps, (s, t), points, pad=pad)
        realization = synthesize_box(spec, seed, lo, hi)
        V, W, _ = lattice_driver_samples(realization, cfg, eps, (s, t),
                                         points, spacing, dw_target)
        return V, W

    return sampler


def synthesize_box(spec, seed, lo, hi):
    lat_lo, lat_hi = box_for_bounds(spec, lo, hi)
    return FieldRealization(spec, seed, lat_lo, lat_hi)


def sample_box_for_points(spec, cfg, eps, pair, points, pad=0.0):
    s, t = pair
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    sweep0 = cfg.velocity * s / eps ** 2
    sweep1 = cfg.velocity * t / eps ** 2
    corners = np.concatenate([pts + sweep0, pts + sweep1, pts])
    return corners.min(axis=0) - pad, corners.max(axis=0) + pad


# ---------------------------------------------------------------------------
# star product and graded fields
# ---------------------------------------------------------------------------

def star_product(a, b):
    """Graded bilinear product (a2 b1, a1 (x) b1, a3 b1, a2 b2) of two
    (value, jacobian, hessian) tuples; shapes (d,), (d,d), (d,d), (d,d)."""
    a1, a2, a3 = (np.asarray(x, dtype=float) for x in a)
    b1, b2, _ = (np.asarray(x, dtype=float) for x in b)
    d = a1.shape[-1]
    if a2.shape[-2:] != (d, d) or a3.shape[-3:] != (d, d, d):
        raise ValueError("graded tuple has inconsistent shapes")
    if b1.shape[-1] != d or b2.shape[-2:] != (d, d):
        raise ValueError("graded tuple has inconsistent shapes")
    return (np.einsum("...ij,...j->...i", a2, b1),
            np.einsum("...i,...j->...ij", a1, b1),
            np.einsum("...ijk,...k->...ij", a3, b1),
            np.einsum("...ij,...jk->...ik", a2, b2))


def graded_line(realization, x, velocity, w):
    """(F, DF, D2F) at x + w v for a grid of w: tuple of (n_w, ...) arrays."""
    v = np.asarray(velocity, dtype=float)
    pos = np.asarray(x, dtype=float)[None, :] + np.einsum("w,i->wi", w, v)
    return (realization.evaluate(pos),
            realization.evaluate(pos, 1),
            realization.evaluate(pos, 2))


# ---------------------------------------------------------------------------
# homogenization oracles
# ---------------------------------------------------------------------------

@dataclass
class HomogenizationOracles:
    """Quadrature values of every limiting coefficient.

    cov0 is the full-line covariance matrix C(0,0); the one-point covariance
    rate of the limit motion equals cov0 itself (Green-Kubo), which the
    empirical checks use as their target.
    """

    spec: KernelSpec
    velocity: np.ndarray
    b: np.ndarray
    b_bar: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    b4: np.ndarray
    c: np.ndarray
    cov0: np.ndarray
    d1C0: np.ndarray
    u_max: float
    star_drift: tuple = None

    def cov(self, displacement):
        """C at displacement delta = y - x (a function of delta only)."""
        return _cov_matrix(self.spec, self.velocity, displacement)

    @property
    def cov_rate(self):
        """Covariance rate of the limit one-point motion."""
        return self.cov0


def _u_support(spec, delta, velocity):
    """Interval of u with |delta + u v| <= dependence range (else empty)."""
    v = np.asarray(velocity, float)
    delta = np.asarray(delta, float)
    a = v @ v
    b = 2.0 * (delta @ v)
    c = delta @ delta - spec.dependence_range ** 2
    disc = b * b - 4 * a * c
    if disc <= 0:
        return None
    root = np.sqrt(disc)
    return (-b - root) / (2 * a), (-b + root) / (2 * a)


_GL_U = np.polynomial.legendre.leggauss(10)


def _u_quad(fn, lo, hi, substeps=40):
    gx, gw = _GL_U
    edges = np.linspace(lo, hi, substeps + 1)
    total = None
    for a, b in zip(edges[:-1], edges[1:]):
        u = (gx + 1) / 2 * (b - a) + a
        w = gw / 2 * (b - a)
        for uu, ww in zip(u, w):
            val = np.asarray(fn(uu), dtype=float) * ww
            total = val if total is None else total + val
    return total


def _cov_matrix(spec, velocity, delta):
    sup = _u_support(spec, np.asarray(delta, float), velocity)
    d = spec.dim
    if sup is None:
        return np.zeros((d, d))
    Q = spec.noise_quadratic

    def fn(u):
        return scalar_correlation(spec, (), (), np.asarray(delta) + u * np.asarray(velocity))

    return Q * _u_quad(fn, *sup)


def compute_oracles(spec: KernelSpec, cfg: TurbulenceConfig,
                    substeps=40) -> HomogenizationOracles:
    """All limiting coefficients by exact-support quadrature."""
    v = cfg.velocity
    d = spec.dim
    Q = spec.noise_quadratic
    sup = _u_support(spec, np.zeros(d), v)
    u_max = sup[1]

    def grad_corr(u, sign):
        """vector g_i(u) = sum_j Q_ij rho_{(j),()}(sign * u v)."""
        out = np.zeros(d)
        for j in range(d):
            rho = scalar_correlation(spec, (j,), (), sign * u * v)
            out += Q[:, j] * rho
        return out

    b1 = _u_quad(lambda u: grad_corr(u, -1.0), 0.0, u_max, substeps)
    b_direct = 0.5 * _u_quad(lambda u: grad_corr(u, -1.0) - grad_corr(u, +1.0),
                             0.0, u_max, substeps)
    d1C0 = _u_quad(lambda u: grad_corr(u, +1.0), -u_max, u_max, substeps)

    def rho00(u):
        return scalar_correlation(spec, (), (), -u * v)

    b2 = Q * _u_quad(rho00, 0.0, u_max, substeps)
    cov0 = Q * _u_quad(rho00, -u_max, u_max, substeps)
    c = 0.5 * (b2 - b2.T)

    def hess_corr(u):
        out = np.zeros((d, d))
        for j in range(d):
            for k in range(d):
                rho = scalar_correlation(spec, (j, k), (), -u * v)
                out[:, j] += Q[:, k] * rho
        return out

    b3 = _u_quad(hess_corr, 0.0, u_max, substeps)

    def jac_jac(u):
        out = np.zeros((d, d))
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += Q[i, k] * scalar_correlation(spec, (k,), (j,), -u * v)
                out[i, j] = acc
        return out

    b4 = _u_quad(jac_jac, 0.0, u_max, substeps)
    return HomogenizationOracles(
        spec=spec, velocity=v, b=b_direct, b_bar=b1.copy(), b1=b1, b2=b2,
        b3=b3, b4=b4, c=c, cov0=cov0, d1C0=d1C0, u_max=float(u_max),
        star_drift=star_drift_tensor(spec, cfg, substeps=substeps))


def star_expectation(spec: KernelSpec, velocity, tau):
    """E[ F-tuple(u1) star F-tuple(u2) ] as a function of tau = u1 - u2."""
    d = spec.dim
    Q = spec.noise_quadratic
    delta = -tau * np.asarray(velocity, float)     # argument of corr: u2 - u1
    slot1 = np.zeros(d)
    slot3 = np.zeros((d, d))
    slot4 = np.zeros((d, d))
    for j in range(d):
        slot1 += Q[:, j] * scalar_correlation(spec, (j,), (), delta)
        for k in range(d):
            rho_h = scalar_correlation(spec, (j, k), (), delta)
            slot3[:, j] += Q[:, k] * rho_h
            rho_jj = scalar_correlation(spec, (k,), (j,), delta)
            slot4[:, j] += Q[:, k] * rho_jj
    slot2 = Q * scalar_correlation(spec, (), (), delta)
    return slot1, slot2, slot3, slot4


def star_drift_tensor(spec, cfg, substeps=40):
    """The per-unit-time drift of the discrete skeleton:
    iint_{0<=u2<=u1<=1} E[F(u1) star F(u2)] du2 du1 = int_0^1 (1-tau) E[..](tau) dtau."""
    def fn(tau):
        parts = star_expectation(spec, cfg.velocity, tau)
        return np.concatenate([p.ravel() for p in parts]) * (1.0 - tau)

    flat = _u_quad(fn, 0.0, 1.0, substeps)
    d = spec.dim
    sizes = [d, d * d, d * d, d * d]
    out, pos = [], 0
    shapes = [(d,), (d, d), (d, d), (d, d)]
    for n, sh in zip(sizes, shapes):
        out.append(flat[pos:pos + n].reshape(sh))
        pos += n
    return tuple(out)


# ---------------------------------------------------------------------------
# empirical checks
# ---------------------------------------------------------------------------

def empirical_onepoint(endpoints, horizon, x0, oracles: HomogenizationOracles):
    """Drift and covariance-rate estimates of the recentered endpoints
    against the quadrature oracles; KS normality per component."""
    from scipy import stats

    X = np.asarray(endpoints, dtype=float)
    M, d = X.shape
    if M < 2:
        raise ValueError("need at least 2 samples")
    disp = (X - np.asarray(x0, float)) / horizon
    drift_est = disp.mean(axis=0)
    drift_se = disp.std(axis=0, ddof=1) / np.sqrt(M)
    cov_hat = np.cov(X.T, ddof=1) if d > 1 else np.atleast_2d(np.var(X, ddof=1))
    cov_est = cov_hat / horizon
    cov_se = np.sqrt((np.outer(np.diag(cov_hat), np.diag(cov_hat))
                      + cov_hat ** 2) / (M - 1)) / horizon
    report = {
        "drift_est": drift_est, "drift_se": drift_se,
        "drift_oracle": oracles.b_bar,
        "cov_rate_est": cov_est, "cov_rate_se": cov_se,
        "cov_rate_oracle": oracles.cov_rate,
    }
    if M >= 30:
        report["drift_pass"] = bool(
            np.all(np.abs(drift_est - oracles.b_bar) <= 3.0 * drift_se))
        report["cov_pass"] = bool(
            np.all(np.abs(cov_est - oracles.cov_rate) <= 3.0 * cov_se))
        pvals = []
        for j in range(d):
            z = X[:, j]
            pvals.append(float(stats.kstest(
                z, "norm", args=(z.mean(), z.std(ddof=1))).pvalue))
        report["ks_pvalues"] = pvals
        report["normal_pass"] = bool(min(pvals) > 0.01)
    return report


def empirical_twopoint(end_x, end_y, horizon, x0, y0,
                       oracles: HomogenizationOracles):
    """Cross-covariance rate of two trajectories driven by the same
    realization against the interaction oracle C(y0 - x0)."""
    X = np.asarray(end_x, float)
    Y = np.asarray(end_y, float)
    M, d = X.shape
    if M < 2:
        raise ValueError("need at least 2 samples")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    cross = Xc.T @ Yc / (M - 1)
    est = cross / horizon
    cov_x = np.cov(X.T, ddof=1)
    cov_y = np.cov(Y.T, ddof=1)
    se = np.sqrt((np.outer(np.diag(cov_x), np.diag(cov_y)) + cross ** 2)
                 / (M - 1)) / horizon
    target = oracles.cov(np.asarray(y0, float) - np.asarray(x0, float))
    report = {"cross_rate_est": est, "cross_rate_se": se,
              "cross_rate_oracle": target}
    if M >= 30:
        report["cross_pass"] = bool(np.all(np.abs(est - target) <= 3.0 * se))
    return report


# ---------------------------------------------------------------------------
# discrete skeleton and family-vs-sequence checks
# ---------------------------------------------------------------------------

def _cumulative_graded(realization, x, velocity, w_hi, dw):
    n_w = max(2, int(np.ceil(w_hi / dw / 2.0)) * 2)
    dw = w_hi / n_w
    w = dw * np.arange(n_w + 1)
    F, DF, D2F = graded_line(realization, x, velocity, w)

    def cum(a):
        return cumulative_simpson(a, dx=dw, axis=0, initial=0.0)

    return w, dw, (F, DF, D2F), (cum(F), cum(DF), cum(D2F))


def _second_level_integral(grid_vals, cums, dw):
    """int_0^T F-tuple(u) star CUM(u) du by Simpson on the shared grid."""
    F, DF, D2F = grid_vals
    cF, cDF, cD2F = cums
    slots = star_product((F, DF, D2F), (cF, cDF, cD2F))
    out = []
    for s in slots:
        flat = s.reshape(s.shape[0], -1)
        integ = cumulative_simpson(flat, dx=dw, axis=0, initial=0.0)[-1]
        out.append(integ.reshape(s.shape[1:]))
    return tuple(out)


def skeleton_check(realization, x, cfg: TurbulenceConfig, t, n, dw=0.01,
                   oracles: HomogenizationOracles = None):
    """Residual of the discrete-skeleton identity at level n (eps_n = n^-1/2).

    Continuous side: (V-tuple at t, int V-tuple(du) star V-tuple(u)) for
    eps_n; discrete side: normalized block sums of X_k = int_k^{k+1} F-tuple
    plus t * the oracle drift tensor.  Returns per-component residual
    magnitudes; these vanish as n grows.
    """
    if n < 4:
        raise ValueError("need n >= 4")
    x = np.asarray(x, dtype=float)
    w_hi = n * t
    w, dw_eff, vals, cums = _cumulative_graded(realization, x, cfg.velocity,
                                               w_hi, dw)
    root = np.sqrt(n)
    cont_first = tuple(c[-1] / root for c in cums)
    second = _second_level_integral(vals, cums, dw_eff)
    cont_second = tuple(s / n for s in second)

    # X_k from the same cumulative tables (quadrature tolerance ~ dw^4)
    idx = [int(round(k / dw_eff)) for k in range(int(np.floor(n * t)) + 1)]
    Xk = tuple(c[idx][1:] - c[idx][:-1] for c in cums)     # (K, ...) each
    disc_first = tuple(z.sum(axis=0) / root for z in Xk)
    # strict inner sum j < k: the within-block wedge is accounted for by the
    # drift tensor, not by diagonal terms X_k * X_k
    S = tuple(np.cumsum(z, axis=0) - z for z in Xk)
    disc_slots = star_product((Xk[0], Xk[1], Xk[2]), (S[0], S[1], S[2]))
    disc_second = tuple(s.sum(axis=0) / n for s in disc_slots)

    drift = (oracles.star_drift if oracles is not None
             else star_drift_tensor(realization.spec, cfg))
    first_res = max(float(np.max(np.abs(a - b)))
                    for a, b in zip(cont_first, disc_first))
    second_res = [float(np.max(np.abs(a - (b + t * q))))
                  for a, b, q in zip(cont_second, disc_second, drift)]
    return {"first": first_res, "second": max(second_res),
            "second_slots": second_res}


def family_vs_sequence_check(realization, x, cfg: TurbulenceConfig, t, eps,
                             dw=0.02):
    """Gap between the eps-indexed tuple process and the n = floor(eps^-2)
    member of the sequence, both levels."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    # robust floor: 1/eps^2 that is an integer up to rounding maps to itself,
    # so eps = n^{-1/2} exactly gives a pure time-alignment gap
    n = int(np.floor(eps ** -2 * (1.0 + 1e-12)))
    w_hi = t / eps ** 2
    w, dw_eff, vals, cums = _cumulative_graded(realization, x, cfg.velocity,
                                               w_hi, dw)
    idx_n = int(round(n * t / dw_eff))
    first_eps = tuple(eps * c[-1] for c in cums)
    first_n = tuple(c[idx_n] / np.sqrt(n) for c in cums)
    first_gap = max(float(np.max(np.abs(a - b)))
                    for a, b in zip(first_eps, first_n))

    second_full = _second_level_integral(vals, cums, dw_eff)
    trunc_vals = tuple(v[:idx_n + 1] for v in vals)
    trunc_cums = tuple(c[:idx_n + 1] for c in cums)
    second_trunc = _second_level_integral(trunc_vals, trunc_cums, dw_eff)
    second_gap = max(float(np.max(np.abs(eps ** 2 * a - b / n)))
                     for a, b in zip(second_full, second_trunc))
    return {"first": first_gap, "second": second_gap, "n": n}


# ---------------------------------------------------------------------------
# localization stability
# ---------------------------------------------------------------------------

def localization_stability(spec: KernelSpec, cfg: TurbulenceConfig, K_points,
                           radii, eps, seeds, n_store=65):
    """Flows of the chi^R-localized dynamics for increasing R.

    Per consecutive radius pair: the sup over K and stored times of the
    trajectory distance, per realization.  Realizations whose trajectories
    (including integrator stages) never leave B(0, R) produce bitwise equal
    flows for every larger radius; their fraction is reported per R.
    """
    K_points = np.atleast_2d(np.asarray(K_points, dtype=float))
    radii = sorted(float(r) for r in radii)
    if np.max(np.linalg.norm(K_points, axis=-1)) > radii[0] / 2.0:
        raise ValueError("initial set K must lie inside B(0, R_min / 2)")
    margin = max(_auto_margin(spec, cfg, eps), 2 * radii[-1] + 2 * spec.radius)
    ens = EnsembleField(spec, seeds,
                        _tube_bounds(spec, cfg, eps, K_points, margin))
    M, k = len(seeds), K_points.shape[0]
    member = np.repeat(np.arange(M), k)
    start = np.tile(K_points, (M, 1))
    cfgx = _with_step(cfg, spec)
    paths, max_radii = {}, {}
    for R in radii:
        times, path, max_r = _integrate_rescaled(
            lambda pos: ens.evaluate(member, pos), start, cfgx, eps,
            n_store, radius=R)
        paths[R] = path
        max_radii[R] = max_r.reshape(M, k).max(axis=1)
    rows = []
    for r_small, r_big in zip(radii[:-1], radii[1:]):
        gap = np.linalg.norm(paths[r_small] - paths[r_big], axis=-1)
        per_real = gap.max(axis=0).reshape(M, k).max(axis=1)
        nonexit = max_radii[r_small] < r_small
        rows.append({
            "R": r_small, "R_next": r_big,
            "sup_distance": per_real,
            "nonexit": nonexit,
            "nonexit_fraction": float(np.mean(nonexit)),
        })
    last = max_radii[radii[-1]] < radii[-1]
    rows.append({"R": radii[-1], "R_next": None, "sup_distance": None,
                 "nonexit": last, "nonexit_fraction": float(np.mean(last))})
    return rows
