"""Stationary Gaussian vector fields with exact finite dependence range.

Construction: kernel-smoothed lattice white noise,

    F(x) = sum_z  phi(x - h z) * (A xi_z),      xi_z iid standard normal,

with phi the radial polynomial bump  amp * (1 - |x|^2 / L^2)^4  supported in
the Euclidean ball of radius L.  Values at sets separated by more than 2L
share no lattice sites, so they are exactly independent and the strong-mixing
coefficient vanishes beyond 2L.  The covariance of the field and of all its
derivatives is a finite lattice sum; averaging the base point over one
lattice cell turns that sum into the integral

    h^{-d} int  D^a phi(w) (x) D^b phi(w + delta) dw,

an integral of a polynomial over a lens-shaped intersection of two disks,
which Green's theorem reduces to arc integrals of trigonometric polynomials:
the oracles below are exact to machine precision.

Noise is counter-based: site (z1, ..., zd) draws its Gaussian vector from a
Philox stream keyed by (seed, z1, ..., z_{d-1}) at counter block z_d, so any
working box reproduces the same realization in any process or worker layout.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import ndtri

from .errors import CapabilityError, ConstraintError, CoverageError

_Z_SHIFT = 2 ** 40          # lattice coordinates shifted to nonnegative keys
_GL_ARC = np.polynomial.legendre.leggauss(48)
_GL_1D = np.polynomial.legendre.leggauss(24)


# ---------------------------------------------------------------------------
# 2-d polynomial helpers (coefficient matrices c[i, j] for x1^i x2^j)
# ---------------------------------------------------------------------------

def _poly_mul(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j] != 0.0:
                out[i:i + b.shape[0], j:j + b.shape[1]] += a[i, j] * b
    return out


def _poly_shift(c, d1, d2):
    """Coefficients of p(x + (d1, d2))."""
    n1, n2 = c.shape
    b1 = np.zeros((n1, n1))
    b2 = np.zeros((n2, n2))
    for i in range(n1):
        for k in range(i + 1):
            b1[k, i] = comb(i, k) * d1 ** (i - k)
    for j in range(n2):
        for k in range(j + 1):
            b2[k, j] = comb(j, k) * d2 ** (j - k)
    return b1 @ c @ b2.T


def _poly_diff(c, axis):
    if c.shape[axis] == 1:
        return np.zeros((1, 1))
    if axis == 0:
        return c[1:, :] * np.arange(1, c.shape[0])[:, None]
    return c[:, 1:] * np.arange(1, c.shape[1])[None, :]


def _poly_antideriv_x1(c):
    out = np.zeros((c.shape[0] + 1, c.shape[1]))
    out[1:, :] = c / np.arange(1, c.shape[0] + 1)[:, None]
    return out


def lens_integral(poly, radius, delta):
    """Integral of a polynomial over the lens {|x| <= L} ∩ {|x + delta| <= L}.

    Green's theorem over the two boundary arcs; the arc integrands are
    trigonometric polynomials, so Gauss quadrature is exact to rounding.
    """
    L = radius
    r = float(np.hypot(delta[0], delta[1]))
    if r >= 2 * L:
        return 0.0
    q = _poly_antideriv_x1(poly)
    gx, gw = _GL_ARC
    if r < 1e-14:
        centers = [(0.0, 0.0)]
        th0s = [0.0]
        beta = np.pi
    else:
        th_d = np.arctan2(-delta[1], -delta[0])
        beta = np.arccos(min(1.0, r / (2 * L)))
        centers = [(0.0, 0.0), (-delta[0], -delta[1])]
        th0s = [th_d, th_d + np.pi]
    total = 0.0
    for (cx, cy), th0 in zip(centers, th0s):
        th = th0 + beta * gx
        w = gw * beta
        x1 = cx + L * np.cos(th)
        x2 = cy + L * np.sin(th)
        qv = np.polynomial.polynomial.polyval2d(x1, x2, q)
        total += float(np.sum(w * qv * L * np.cos(th)))
    return total


def _multi_indices(d, order):
    if order == 0:
        return [()]
    prev = _multi_indices(d, order - 1)
    return [m + (j,) for m in prev for j in range(d)]


class BumpKernel:
    """The radial polynomial bump and its derivative/correlation machinery.

    Supports d in {1, 2}: higher dimensions would need lens integration over
    ball intersections, which the desk-scale experiments never exercise.
    """

    def __init__(self, radius, amplitude, dim, order=4):
        if dim not in (1, 2):
            raise CapabilityError("bump kernel implemented for d in {1, 2}")
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        self.dim = int(dim)
        self.order = int(order)
        if dim == 2:
            base = np.zeros((3, 3))
            base[0, 0] = 1.0
            base[2, 0] = -1.0 / radius ** 2
            base[0, 2] = -1.0 / radius ** 2
        else:
            base = np.zeros((3, 1))
            base[0, 0] = 1.0
            base[2, 0] = -1.0 / radius ** 2
        poly = np.array([[amplitude]])
        for _ in range(order):
            poly = _poly_mul(poly, base)
        self._poly = poly
        self._deriv_cache = {(): poly}

    def _deriv_poly(self, alpha):
        alpha = tuple(sorted(alpha))
        if alpha not in self._deriv_cache:
            c = self._deriv_poly(alpha[1:])
            self._deriv_cache[alpha] = _poly_diff(c, axis=alpha[0])
        return self._deriv_cache[alpha]

    def deriv_values(self, offsets, k):
        """Order-k derivative tensor of phi at offsets: (n,) + (d,)*k.

        Radial chain rule on g(u) = amp (1 - u/L^2)^4, u = |x|^2; much
        cheaper than evaluating the expanded polynomial.
        """
        pts = np.asarray(offsets, dtype=float)
        d = self.dim
        L2 = self.radius ** 2
        amp = self.amplitude
        u = np.einsum("...i,...i->...", pts, pts)
        s = np.maximum(1.0 - u / L2, 0.0)
        if k == 0:
            return amp * s ** 4
        g1 = -(4.0 * amp / L2) * s ** 3
        if k == 1:
            return 2.0 * g1[..., None] * pts
        g2 = (12.0 * amp / L2 ** 2) * s ** 2
        eye = np.eye(d)
        if k == 2:
            return (4.0 * g2[..., None, None] * np.einsum("...i,...j->...ij", pts, pts)
                    + 2.0 * g1[..., None, None] * eye)
        g3 = -(24.0 * amp / L2 ** 3) * s
        if k == 3:
            xxx = np.einsum("...i,...j,...k->...ijk", pts, pts, pts)
            sym = (np.einsum("...i,jk->...ijk", pts, eye)
                   + np.einsum("...j,ik->...ijk", pts, eye)
                   + np.einsum("...k,ij->...ijk", pts, eye))
            return 8.0 * g3[..., None, None, None] * xxx + 4.0 * g2[..., None, None, None] * sym
        raise CapabilityError("kernel derivatives available up to order 3")

    def corr(self, alpha, beta, delta, spacing):
        """Cell-averaged scalar correlation
        h^{-d} int D^alpha phi(w) D^beta phi(w + delta) dw, exact."""
        if len(alpha) > 3 or len(beta) > 3:
            raise CapabilityError("kernel derivatives available up to order 3")
        delta = np.asarray(delta, dtype=float)
        if self.dim == 1:
            pa = self._deriv_poly(alpha)[:, 0]
            pb = self._deriv_poly(beta)[:, 0]
            d0 = float(delta[0])
            lo, hi = max(-self.radius, -self.radius - d0), min(self.radius, self.radius - d0)
            if hi <= lo:
                return 0.0
            gx, gw = _GL_1D
            x = (gx + 1) / 2 * (hi - lo) + lo
            w = gw / 2 * (hi - lo)
            va = np.polynomial.polynomial.polyval(x, pa)
            vb = np.polynomial.polynomial.polyval(x + d0, pb)
            return float(np.sum(w * va * vb)) / spacing
        pa = self._deriv_poly(alpha)
        pb = _poly_shift(self._deriv_poly(beta), delta[0], delta[1])
        return lens_integral(_poly_mul(pa, pb), self.radius, delta) / spacing ** 2


# ---------------------------------------------------------------------------
# specs and mixing profile
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """Moving-average synthesis parameters.

    radius: kernel support radius L; amplitude: kernel height; spacing: h
    with h <= L/4; dim: ambient/output dimension; mixing: optional d x d
    matrix applied to the site noise (anisotropy).
    """

    radius: float
    amplitude: float
    spacing: float
    dim: int
    mixing: np.ndarray = None

    def __post_init__(self):
        if self.spacing > self.radius / 4.0 + 1e-12:
            raise ValueError("lattice spacing must satisfy h <= L/4")
        mix = np.eye(self.dim) if self.mixing is None else np.asarray(self.mixing, float)
        object.__setattr__(self, "mixing", mix.reshape(self.dim, self.dim))

    @property
    def dependence_range(self):
        return 2.0 * self.radius

    def kernel(self):
        return _kernel_for(self.radius, self.amplitude, self.dim)

    @property
    def noise_quadratic(self):
        """Q = A A^T, the component covariance factor."""
        return self.mixing @ self.mixing.T


@lru_cache(maxsize=16)
def _kernel_for(radius, amplitude, dim):
    return BumpKernel(radius, amplitude, dim)


@dataclass(frozen=True)
class MixingProfile:
    """alpha(u) = 0 beyond the dependence range, <= 1/4 inside (the trivial
    bound on strong mixing coefficients)."""

    dependence_range: float
    kappa: float
    a0: float
    alpha_integral_bound: float

    def alpha(self, u):
        return 0.0 if u > self.dependence_range else 0.25


def admissible_kappa_interval(a0, dim):
    """The open interval (0, min(1/3, 1/d) - 1/a0) of valid kappa."""
    if a0 <= max(3.0, float(dim)):
        raise ConstraintError("a0 > max(3, d)", constraint="a0 > max(3, d)")
    return 0.0, min(1.0 / 3.0, 1.0 / dim) - 1.0 / a0


def mixing_profile(spec: KernelSpec, kappa, a0):
    """Validated mixing certificate for the synthesized field."""
    lo, hi = admissible_kappa_interval(a0, spec.dim)
    if not lo < kappa < hi:
        raise ConstraintError(
            f"kappa must lie in (0, min(1/3, 1/d) - 1/a0) = ({lo}, {hi:.6g}); got {kappa}",
            constraint="kappa in (0, min(1/3, 1/d) - 1/a0)")
    rng = spec.dependence_range
    return MixingProfile(rng, kappa, a0,
                         alpha_integral_bound=rng * 0.25 ** kappa)


# ---------------------------------------------------------------------------
# counter-based lattice noise
# ---------------------------------------------------------------------------

def row_noise(seed, prefix, lo, hi, components):
    """Gaussian noise for lattice sites (prefix..., z) with z in [lo, hi).

    One Philox counter block (4 uint64) per site; draws depend only on
    (seed, site), never on the requested window.
    """
    if components > 4:
        raise CapabilityError("at most 4 noise components per site")
    key = np.random.SeedSequence(
        (int(seed),) + tuple(int(p) + _Z_SHIFT for p in prefix)
    ).generate_state(2, np.uint64)
    bg = np.random.Philox(key=key)
    bg.advance(int(lo) + _Z_SHIFT)
    u = np.random.Generator(bg).random((int(hi) - int(lo), 4))
    return ndtri(u[:, :components] + 2.0 ** -54)


def noise_for_box(spec: KernelSpec, seed, lattice_lo, lattice_hi):
    """Noise array for the lattice box prod [lo_i, hi_i): shape box + (d,),
    with the site vectors already mixed by A."""
    lattice_lo = tuple(int(v) for v in lattice_lo)
    lattice_hi = tuple(int(v) for v in lattice_hi)
    d = spec.dim
    if d == 1:
        xi = row_noise(seed, (), lattice_lo[0], lattice_hi[0], 1)
    else:
        n1 = lattice_hi[0] - lattice_lo[0]
        n2 = lattice_hi[1] - lattice_lo[1]
        xi = np.empty((n1, n2, d))
        for i in range(n1):
            xi[i] = row_noise(seed, (lattice_lo[0] + i,), lattice_lo[1],
                              lattice_hi[1], d)
    return xi @ spec.mixing.T


# ---------------------------------------------------------------------------
# realizations
# ---------------------------------------------------------------------------

class FieldRealization:
    """One sample of the field on a working box, with exact derivatives.

    The evaluator is the finite lattice sum; derivatives differentiate the
    kernel, never the sum structure.
    """

    def __init__(self, spec: KernelSpec, seed, lattice_lo, lattice_hi):
        self.spec = spec
        self.seed = int(seed)
        self.lattice_lo = np.asarray(lattice_lo, dtype=int)
        self.lattice_hi = np.asarray(lattice_hi, dtype=int)
        self.noise = noise_for_box(spec, seed, lattice_lo, lattice_hi)
        self._kernel = spec.kernel()
        h = spec.spacing
        self._window = int(np.ceil(spec.radius / h + 0.5))
        k = self._window
        if spec.dim == 1:
            self._offsets = np.arange(-k, k + 1)[:, None]
        else:
            o = np.arange(-k, k + 1)
            oi, oj = np.meshgrid(o, o, indexing="ij")
            self._offsets = np.stack([oi.ravel(), oj.ravel()], axis=-1)

    def evaluate(self, points, order=0):
        """D^order F at an (n, d) batch: shape (n, d) + (d,)*order."""
        spec = self.spec
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        h = spec.spacing
        base = np.round(pts / h).astype(int)                    # (n, d)
        sites = base[:, None, :] + self._offsets[None, :, :]    # (n, m, d)
        lo = self.lattice_lo
        hi = self.lattice_hi
        if np.any(sites < lo) or np.any(sites >= hi):
            need = np.maximum(np.max(sites - (hi - 1), initial=0),
                              np.max(lo - sites, initial=0))
            raise CoverageError(
                f"evaluation outside working box; extend by >= {need} sites "
                f"({need * h:.3g} length units)", required_margin=float(need * h))
        rel = sites - lo
        if spec.dim == 1:
            xi = self.noise[rel[..., 0]]
        else:
            xi = self.noise[rel[..., 0], rel[..., 1]]           # (n, m, d)
        offs = pts[:, None, :] - sites * h                      # (n, m, d)
        w = self._kernel.deriv_values(offs, order)              # (n, m, ...)
        out = np.einsum("nm...,nmi->ni...", w, xi)
        return out

    def __call__(self, points, order=0):
        return self.evaluate(points, order)


def box_for_bounds(spec: KernelSpec, lo, hi):
    """Lattice index ranges covering physical bounds plus the kernel reach."""
    h = spec.spacing
    margin = spec.radius / h + 1.5
    lat_lo = np.floor(np.asarray(lo, float) / h - margin).astype(int)
    lat_hi = np.ceil(np.asarray(hi, float) / h + margin).astype(int) + 1
    return lat_lo, lat_hi


def synthesize(spec: KernelSpec, seed, bounds):
    """Realization covering physical box `bounds` = (lo, hi) arrays."""
    lo, hi = bounds
    lo = np.broadcast_to(np.asarray(lo, float), (spec.dim,))
    hi = np.broadcast_to(np.asarray(hi, float), (spec.dim,))
    if np.any(hi < lo):
        raise ValueError("invalid bounds")
    lat_lo, lat_hi = box_for_bounds(spec, lo, hi)
    return FieldRealization(spec, seed, lat_lo, lat_hi)


# ---------------------------------------------------------------------------
# covariance oracle
# ---------------------------------------------------------------------------

def covariance_oracle(spec: KernelSpec, displacement, orders=(0, 0)):
    """Exact cell-averaged E[D^{k1} F(x) (x) D^{k2} F(x + delta)].

    Shape (d,) + (d,)*k1 + (d,) + (d,)*k2 indexed
    [i, alpha..., j, beta...] = Q_{ij} * corr(alpha, beta, delta); depends on
    the displacement only.
    """
    k1, k2 = orders
    if k1 > 3 or k2 > 3:
        raise CapabilityError("covariance oracle supports derivative orders <= 3")
    d = spec.dim
    delta = np.asarray(displacement, dtype=float).reshape(d)
    kernel = spec.kernel()
    Q = spec.noise_quadratic
    out = np.zeros((d,) + (d,) * k1 + (d,) + (d,) * k2)
    for alpha in _multi_indices(d, k1):
        for beta in _multi_indices(d, k2):
            rho = kernel.corr(alpha, beta, delta, spec.spacing)
            for i in range(d):
                for j in range(d):
                    out[(i,) + alpha + (j,) + beta] = Q[i, j] * rho
    return out


def scalar_correlation(spec: KernelSpec, alpha, beta, delta):
    """corr(alpha, beta, delta) without the component factor Q."""
    return spec.kernel().corr(tuple(alpha), tuple(beta), np.asarray(delta, float),
                              spec.spacing)
