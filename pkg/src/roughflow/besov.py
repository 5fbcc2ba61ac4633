"""Finite differences, discrete Besov/Hoelder norms, exponent admissibility,
the four-term moment/tightness statistic and Davydov-inequality spot checks.

All norms here are grid surrogates: spatial suprema and integrals are taken
over finite evaluation designs, so they are lower bounds of the continuum
quantities.  Refinement self-consistency is what the tests quantify.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .domain import SpatialDomain
from .errors import ConstraintError, CoverageError, ToleranceError


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_difference(f, sigma, m, domain: SpatialDomain = None):
    """m-th forward difference operator along sigma, as a new sampled field.

    (Delta_sigma f)(x) = f(x + sigma) - f(x), applied m times; evaluated via
    the binomial expansion, which is exactly the recursive application.
    """
    sigma = np.asarray(sigma, dtype=float)
    if m < 1:
        raise ValueError("difference order must be >= 1")
    coeffs = [(-1.0) ** (m - j) * comb(m, j) for j in range(m + 1)]

    def g(points):
        pts = np.asarray(points, dtype=float)
        if domain is not None:
            top = pts + m * sigma
            lo, hi = domain.box[:, 0], domain.box[:, 1]
            if np.any(pts < lo) or np.any(pts > hi) or np.any(top < lo) or np.any(top > hi):
                raise CoverageError("finite difference stencil leaves the domain")
        out = None
        for j, c in enumerate(coeffs):
            val = c * np.asarray(f(pts + j * sigma), dtype=float)
            out = val if out is None else out + val
        return out

    return g


def _magnitudes(values):
    """Pointwise max-abs over all non-point axes."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        return np.abs(v)
    return np.max(np.abs(v.reshape(v.shape[0], -1)), axis=1)


# ---------------------------------------------------------------------------
# Hoelder norms
# ---------------------------------------------------------------------------

def holder_norm_from_orders(values_by_order, points, alpha):
    """Discrete C^alpha norm from precomputed derivative grids.

    values_by_order[k] holds the order-k derivative tensor on `points`;
    the fractional part is the difference quotient of the top available
    order over all grid point pairs.
    """
    frac = alpha - np.floor(alpha)
    if frac == 0.0:
        raise ValueError("integer exponents are not supported")
    pts = np.asarray(points, dtype=float)
    total = max(float(np.max(_magnitudes(v))) for v in values_by_order)
    top = np.asarray(values_by_order[-1], dtype=float).reshape(pts.shape[0], -1)
    if pts.shape[0] >= 2:
        diff = top[:, None, :] - top[None, :, :]
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        iu = np.triu_indices(pts.shape[0], k=1)
        quot = np.max(np.abs(diff[iu]), axis=-1) / dist[iu] ** frac
        total = max(total, float(np.max(quot)))
    return total


def holder_space_norm(f, alpha, domain: SpatialDomain):
    """Discrete C^alpha norm of a field providing derivatives up to floor(alpha).

    `f(points, order)` returns the order-th derivative grid.  Non-integer
    alpha in (0, 3) only.
    """
    if alpha <= 0 or alpha >= 3 or float(alpha) == int(alpha):
        raise ValueError("alpha must be non-integer in (0, 3)")
    pts = domain.grid()
    evals = [np.asarray(f(pts, k), dtype=float) for k in range(int(np.floor(alpha)) + 1)]
    return holder_norm_from_orders(evals, pts, alpha)


# ---------------------------------------------------------------------------
# Besov norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BesovParams:
    alpha: float
    a: float
    b: float
    m: int

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.m < 1 or self.m < self.alpha:
            raise ValueError("difference order m must be an integer >= alpha")


def _lp_norm(mags, a, cell_volume):
    if np.isinf(a):
        return float(np.max(mags))
    return float((np.sum(mags ** a) * cell_volume) ** (1.0 / a))


def _sigma_directions(d, n_angles=16):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    raise ValueError("sigma integration implemented for d <= 2")


def _besov_sigma_part(f, params, domain, rho_min, n_rad=12):
    """Quadrature of the sigma integral in polar/log-radial form."""
    d = domain.dimension
    dirs = _sigma_directions(d)
    cv = domain.cell_volume()
    # integral over |sigma| in [rho_min, 1] of rho^{d-1-b*alpha-d+1-1}... do it
    # in u = log rho:  integral rho^{-b alpha - d} * ||.||^b dsigma
    #   = int du rho(u)^{d - b alpha - d} * avg_angle(...) * angular measure
    u_nodes, u_w = np.polynomial.legendre.leggauss(n_rad)
    lo, hi = np.log(rho_min), 0.0
    u = (u_nodes + 1) / 2 * (hi - lo) + lo
    w = u_w / 2 * (hi - lo)
    total = 0.0
    ang_measure = 2 * np.pi / dirs.shape[0] if d == 2 else 1.0
    pts = domain.grid()
    for uu, ww in zip(u, w):
        rho = np.exp(uu)
        acc = 0.0
        for direction in dirs:
            g = finite_difference(f, rho * direction, params.m)
            mags = _magnitudes(g(pts))
            acc += _lp_norm(mags, params.a, cv) ** params.b * ang_measure
        total += ww * rho ** (-params.b * params.alpha) * acc
    return total


def besov_norm(f, params: BesovParams, domain: SpatialDomain, rho_min=1e-3):
    """Discrete Besov norm: L^a on the grid plus the weighted sigma integral.

    For a = b = inf this degrades to the Hoelder-type surrogate
    sup|f| + sup_sigma |sigma|^{-alpha} sup|Delta^m_sigma f|.
    """
    pts = domain.grid()
    cv = domain.cell_volume()
    base = _lp_norm(_magnitudes(np.asarray(f(pts), dtype=float)), params.a, cv)
    if np.isinf(params.b):
        dirs = _sigma_directions(domain.dimension)
        radii = np.geomspace(rho_min, 1.0, 10)
        sup = 0.0
        for rho in radii:
            for direction in dirs:
                g = finite_difference(f, rho * direction, params.m)
                sup = max(sup, rho ** (-params.alpha)
                          * _lp_norm(_magnitudes(g(pts)), params.a, cv))
        return base + sup
    part = _besov_sigma_part(f, params, domain, rho_min)
    part_fine = _besov_sigma_part(f, params, domain, rho_min / 4.0)
    if part > 0 and part_fine > 1.5 * part:
        raise ToleranceError("sigma integral did not converge under refinement")
    return base + part_fine ** (1.0 / params.b)


# ---------------------------------------------------------------------------
# tightness exponents and statistic
# ---------------------------------------------------------------------------

def tightness_integrability(a0, kappa):
    """Moment exponent a = a0 / (a0 kappa + 1) used by the localized bounds."""
    return a0 / (a0 * kappa + 1.0)


def check_tightness_exponents(p, r, a, d):
    """Violated inequalities of the moment-criterion hypothesis (empty = admissible)."""
    out = []
    if not p > 0:
        out.append("p > 0")
    if not a >= 1:
        out.append("a >= 1")
    if not 0 < r < 1:
        out.append("0 < r < 1")
    if out:
        return out
    gap = 1.0 / p - 1.0 / (2.0 * a)
    if not gap > 0:
        out.append("1/p - 1/(2a) > 0")
        return out
    x = 1.0 / gap - 2.0
    if not x > 0:
        out.append("1/(1/p - 1/(2a)) - 2 > 0")
    if not x < r - d / a:
        out.append("1/(1/p - 1/(2a)) - 2 < r - d/a")
    return out


@dataclass(frozen=True)
class TightnessParams:
    """Exponents (p, r, a, k1) of the moment statistic plus a derived
    admissible target pair (p', r')."""

    p: float
    r: float
    a: float
    d: int
    k1: int = 3

    def __post_init__(self):
        if self.k1 < 3:
            raise ConstraintError("k1 >= 3", constraint="k1 >= 3")
        bad = check_tightness_exponents(self.p, self.r, self.a, self.d)
        if bad:
            raise ConstraintError(f"inadmissible exponents: {bad[0]}", constraint=bad[0])

    @property
    def derived(self):
        """A representative (p', r') satisfying 1/3 < 1/p' < 1/p - 1/(2a),
        r' < r - d/a and p' < 2 + r'."""
        gap = 1.0 / self.p - 1.0 / (2.0 * self.a)
        inv = 0.5 * (1.0 / 3.0 + gap)
        p_prime = 1.0 / inv
        r_hi = self.r - self.d / self.a
        r_lo = max(p_prime - 2.0, 0.0)
        r_prime = r_lo + 0.75 * (r_hi - r_lo)
        return p_prime, r_prime


@dataclass
class MomentStatistic:
    """The four summands of the moment bound, with Monte Carlo standard errors."""

    eps: float
    v_moment: float
    w_moment: float
    v_diff_moment: float
    w_diff_moment: float
    stderr: tuple
    noisy: bool = False        # any SE/estimate > 0.3
    pair_detail: dict = field(default_factory=dict)

    def summands(self):
        return np.array([self.v_moment, self.w_moment,
                         self.v_diff_moment, self.w_diff_moment])


def _sigma_design(spacing, d, direction_frame=None):
    """Lattice-aligned sigma vectors with annulus weights approximating the
    polar measure on the unit ball; shifted stencils then stay on the grid."""
    if d != 2:
        raise ValueError("sigma design implemented for d = 2")
    dirs = np.array([[1, 0], [0, 1], [1, 1], [1, -1]], dtype=float)
    sigmas, mults = [], []
    for k in (1, 2, 3, 5):
        for m in dirs:
            s = spacing * k * m
            if np.linalg.norm(s) <= 1.0 + 1e-12:
                sigmas.append(s)
                mults.append(k * m.astype(int))
    sigmas = np.array(sigmas)
    mults = np.array(mults, dtype=int)
    radii = np.linalg.norm(sigmas, axis=1)
    uniq = np.unique(np.round(radii, 12))
    bounds = np.sqrt(uniq[:-1] * uniq[1:])
    lo = np.concatenate([[uniq[0] ** 2 / bounds[0] if uniq.size > 1 else uniq[0] * 0.5],
                         bounds])
    hi = np.concatenate([bounds, [min(1.0, uniq[-1] ** 2 / bounds[-1])
                                  if uniq.size > 1 else 1.0]])
    weights = np.empty(len(sigmas))
    for i, rho in enumerate(radii):
        j = int(np.argmin(np.abs(uniq - rho)))
        n_here = int(np.sum(np.abs(radii - uniq[j]) < 1e-10))
        annulus = np.pi * (hi[j] ** 2 - max(lo[j], 0.0) ** 2)
        weights[i] = annulus / n_here
    if direction_frame is not None:
        sigmas = sigmas @ direction_frame.T
    return sigmas, mults, weights


def tightness_statistic(sampler, tp: TightnessParams, eps, pairs, seeds,
                        radius, spacing=0.25, frame=None, batches=8):
    """Empirical version of the four-term moment statistic.

    `sampler(eps, seed, s, t, points) -> (V, W)` evaluates one localized
    driver realization on a point batch.  Omega-norms become empirical
    moments over `seeds`; spatial integrals are lattice sums over the
    support ball B(0, 2*radius + k1); the sigma integral uses lattice-aligned
    offsets so every shifted stencil lands on evaluated points.
    """
    d = tp.d
    a = tp.a
    k1 = tp.k1
    base_frame = np.eye(d) if frame is None else frame
    sigmas, mults, sig_weights = _sigma_design(spacing, d, direction_frame=base_frame)
    extent = 2.0 * radius + k1 * 1.0 + spacing
    n_side = int(np.ceil(extent / spacing))
    idx = np.arange(-n_side, n_side + 1)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    pts = (I[..., None] * base_frame[0] + J[..., None] * base_frame[1]) * spacing
    pts_flat = pts.reshape(-1, d)
    cell = spacing ** d
    shape = I.shape

    pair_stats = []
    for (s, t) in pairs:
        weight_v = abs(t - s) ** (a / tp.p)
        weight_w = abs(t - s) ** (2.0 * a / tp.p)
        per_seed = np.zeros((len(seeds), 4))
        for n_seed, seed in enumerate(seeds):
            V, W = sampler(eps, seed, s, t, pts_flat)
            Vg = np.linalg.norm(V, axis=-1).reshape(shape)
            Wg = np.linalg.norm(W, axis=-1).reshape(shape)
            Vf = V.reshape(shape + (d,))
            Wf = W.reshape(shape + (d,))
            per_seed[n_seed, 0] = np.sum(Vg ** (2 * a)) * cell
            per_seed[n_seed, 1] = np.sum(Wg ** a) * cell
            s3 = s4 = 0.0
            for sig, m, wgt in zip(sigmas, mults, sig_weights):
                rho = np.linalg.norm(sig)
                dv = _lattice_difference(Vf, m, k1)
                dw = _lattice_difference(Wf, m, k1 - 1)
                nv = np.linalg.norm(dv, axis=-1)
                nw = np.linalg.norm(dw, axis=-1)
                s3 += wgt * rho ** (-(2 + tp.r) * a - d) * np.sum(nv ** (2 * a)) * cell
                s4 += wgt * rho ** (-(1 + tp.r) * a - d) * np.sum(nw ** a) * cell
            per_seed[n_seed, 2] = s3
            per_seed[n_seed, 3] = s4
        # moments: S1, S3 need sqrt(E|.|^{2a}) inside the spatial integral, but
        # the integral and expectation commute only for the plain powers; the
        # statistic uses the integrated-moment surrogate (documented).
        est = np.array([
            np.sqrt(np.mean(per_seed[:, 0])) / weight_v,
            np.mean(per_seed[:, 1]) / weight_w,
            np.sqrt(np.mean(per_seed[:, 2])) / weight_v,
            np.mean(per_seed[:, 3]) / weight_w,
        ])
        groups = np.array_split(np.arange(len(seeds)), min(batches, len(seeds)))
        gvals = []
        for g in groups:
            gvals.append([
                np.sqrt(np.mean(per_seed[g, 0])) / weight_v,
                np.mean(per_seed[g, 1]) / weight_w,
                np.sqrt(np.mean(per_seed[g, 2])) / weight_v,
                np.mean(per_seed[g, 3]) / weight_w,
            ])
        gvals = np.array(gvals)
        se = np.std(gvals, axis=0, ddof=1) / np.sqrt(gvals.shape[0])
        pair_stats.append((est, se, (s, t)))

    idx_max = int(np.argmax([np.max(e) for e, _, _ in pair_stats]))
    est, se, _ = pair_stats[idx_max]
    noisy = bool(np.any(se > 0.3 * np.maximum(est, 1e-300)))
    return MomentStatistic(eps, *est, stderr=tuple(se), noisy=noisy,
                           pair_detail={p: (e.tolist(), s_.tolist())
                                        for e, s_, p in pair_stats})


def _lattice_difference(grid_vals, shift, order):
    """Order-th difference of values on a lattice along an integer shift;
    out-of-range stencils contribute the zero extension (fields here vanish
    near the boundary by construction)."""
    si, sj = int(shift[0]), int(shift[1])
    out = np.zeros_like(grid_vals)
    n1, n2 = grid_vals.shape[:2]
    for j in range(order + 1):
        c = (-1.0) ** (order - j) * comb(order, j)
        di, dj = j * si, j * sj
        src_i = slice(max(0, di), n1 + min(0, di))
        src_j = slice(max(0, dj), n2 + min(0, dj))
        dst_i = slice(max(0, -di), n1 + min(0, -di))
        dst_j = slice(max(0, -dj), n2 + min(0, -dj))
        out[dst_i, dst_j] += c * grid_vals[src_i, src_j]
    return out


# ---------------------------------------------------------------------------
# Davydov spot check
# ---------------------------------------------------------------------------

def davydov_check(make_realization, x_fn, y_fn, separation, exponents, seeds,
                  profile):
    """Monte Carlo check of the mixing covariance inequality.

    lhs = |E[XY] - E[X]E[Y]|, rhs_core = alpha(u)^{1/p1} ||X||_{p2} ||Y||_{p3};
    the returned ratio lhs/rhs_core estimates the implicit constant.
    X and Y must be measurable with respect to the field on sets at distance
    >= separation for the bound to apply.
    """
    p1, p2, p3 = exponents
    if abs(1.0 / p1 + 1.0 / p2 + 1.0 / p3 - 1.0) > 1e-9:
        raise ValueError("need 1/p1 + 1/p2 + 1/p3 = 1")
    xs, ys = [], []
    for seed in seeds:
        real = make_realization(seed)
        xs.append(float(x_fn(real)))
        ys.append(float(y_fn(real)))
    xs, ys = np.array(xs), np.array(ys)
    n = xs.size
    prod = xs * ys
    lhs = float(np.mean(prod) - np.mean(xs) * np.mean(ys))
    lhs_se = float(np.std(prod - np.mean(xs) * ys - np.mean(ys) * xs, ddof=1)
                   / np.sqrt(n))
    alpha = profile.alpha(separation)
    rhs_core = (alpha ** (1.0 / p1)
                * np.mean(np.abs(xs) ** p2) ** (1.0 / p2)
                * np.mean(np.abs(ys) ** p3) ** (1.0 / p3))
    ratio = abs(lhs) / rhs_core if rhs_core > 0 else float("nan")
    return {"lhs": lhs, "lhs_se": lhs_se, "rhs_core": float(rhs_core),
            "ratio": ratio}
