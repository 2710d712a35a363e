"""Smooth bump supported in a ball, with exact derivatives up to order 3.

The reference profile is psi(z) = c_n * exp(-1/(1 - |z|^2)) on |z| < 1 and 0
outside, with c_n fixed so that the unit-ball integral equals 1.  A mollifier
of radius rho centered at x0 is the rescaling rho^(-n) * psi((x - x0)/rho).

Every derivative of psi is a polynomial in (z, u) times exp(-u), where
u = 1/(1 - |z|^2).  Differentiation stays inside that algebra:

    d/dz_i [z^b u^k e^-u] = b_i z^(b-e_i) u^k e^-u
                            + 2 k z^(b+e_i) u^(k+1) e^-u
                            - 2 z^(b+e_i) u^(k+2) e^-u

so partial derivatives of any order are generated exactly, with no symbolic
dependencies.  Coordinate products z_k * psi (needed by the Fourier module)
live in the same algebra.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .gauss import scaled_rule

MAX_DERIV_ORDER = 3


@dataclass(frozen=True)
class MultiIndex:
    """Derivative multi-index with per-axis orders."""

    orders: tuple

    def __post_init__(self):
        if any(o < 0 for o in self.orders):
            raise ValueError(f"negative entry in multi-index {self.orders}")

    @property
    def total(self):
        return sum(self.orders)

    @property
    def dim(self):
        return len(self.orders)

    def plus(self, axis, amount=1):
        o = list(self.orders)
        o[axis] += amount
        return MultiIndex(tuple(o))


def as_multiindex(alpha, dim):
    """Coerce a tuple/list/MultiIndex (or 0) to a MultiIndex of length dim."""
    if isinstance(alpha, MultiIndex):
        mi = alpha
    elif alpha == 0:
        mi = MultiIndex((0,) * dim)
    else:
        mi = MultiIndex(tuple(int(a) for a in alpha))
    if mi.dim != dim:
        raise ValueError(f"multi-index {mi.orders} does not match dimension {dim}")
    return mi


class BumpExpr:
    """Polynomial-times-exponential expression Q(z, u) * exp(-u) on |z| < 1.

    Terms are stored as {(beta, k): coeff} for the monomial z^beta * u^k.
    """

    __slots__ = ("dim", "terms", "_arrays")

    def __init__(self, dim, terms):
        self.dim = dim
        self.terms = {key: c for key, c in terms.items() if c != 0.0}
        betas = np.array(
            [key[0] for key in self.terms] or np.zeros((0, dim), dtype=int),
            dtype=int,
        ).reshape(-1, dim)
        ks = np.array([key[1] for key in self.terms], dtype=int)
        cs = np.array(list(self.terms.values()))
        self._arrays = (betas, ks, cs)

    def diff(self, axis):
        out = {}
        for (beta, k), c in self.terms.items():
            if beta[axis] > 0:
                lowered = list(beta)
                lowered[axis] -= 1
                key = (tuple(lowered), k)
                out[key] = out.get(key, 0.0) + c * beta[axis]
            raised = list(beta)
            raised[axis] += 1
            raised = tuple(raised)
            if k > 0:
                key = (raised, k + 1)
                out[key] = out.get(key, 0.0) + 2.0 * k * c
            key = (raised, k + 2)
            out[key] = out.get(key, 0.0) - 2.0 * c
        return BumpExpr(self.dim, out)

    def times_coordinate(self, axis):
        out = {}
        for (beta, k), c in self.terms.items():
            raised = list(beta)
            raised[axis] += 1
            out[(tuple(raised), k)] = c
        return BumpExpr(self.dim, out)

    def eval_from_tables(self, coord_pows, u_pows, expfac):
        """Evaluate from shared power tables (see power_tables)."""
        betas, ks, cs = self._arrays
        if len(cs) == 0:
            return np.zeros(expfac.shape)
        prod = u_pows[ks]
        for ax in range(self.dim):
            prod = prod * coord_pows[ax][betas[:, ax]]
        return np.einsum("t,tq->q", cs, prod) * expfac

    def __call__(self, z):
        """Evaluate at points z of shape (..., dim); exact 0 for |z| >= 1."""
        z = np.asarray(z, dtype=float)
        squeeze = z.ndim == 1
        if squeeze:
            z = z[None, :]
        s = np.einsum("...i,...i->...", z, z)
        out = np.zeros(s.shape)
        inside = s < 1.0
        if np.any(inside):
            zi = z[inside]
            u = 1.0 / (1.0 - s[inside])
            coord_pows, u_pows, expfac = power_tables(
                zi, u, self.max_beta(), self.max_k()
            )
            out[inside] = self.eval_from_tables(coord_pows, u_pows, expfac)
        return out[0] if squeeze else out

    def max_beta(self):
        betas, _, _ = self._arrays
        return betas.max(axis=0) if len(betas) else np.zeros(self.dim, dtype=int)

    def max_k(self):
        _, ks, _ = self._arrays
        return int(ks.max()) if len(ks) else 0


def power_tables(zi, u, max_beta, max_k):
    """Tables of coordinate and u powers shared across several expressions.

    zi: (Q, dim) points strictly inside the unit ball, u = 1/(1 - |zi|^2).
    Returns per-axis power stacks, u powers, and exp(-u).
    """
    coord_pows = []
    for ax in range(zi.shape[1]):
        tab = np.empty((int(max_beta[ax]) + 1, len(u)))
        tab[0] = 1.0
        for p in range(1, tab.shape[0]):
            tab[p] = tab[p - 1] * zi[:, ax]
        coord_pows.append(tab)
    u_pows = np.empty((max_k + 1, len(u)))
    u_pows[0] = 1.0
    for p in range(1, max_k + 1):
        u_pows[p] = u_pows[p - 1] * u
    return coord_pows, u_pows, np.exp(-u)


def eval_deriv_many(m, alphas, x):
    """Evaluate several derivative orders at once, sharing power tables.

    Returns {alpha: values} with the same leading shape as x[..., :-1].
    """
    exprs = {}
    for alpha in alphas:
        a = as_multiindex(alpha, m.dim)
        if a.total > MAX_DERIV_ORDER:
            raise ValueError(
                f"derivative order {a.total} exceeds supported maximum {MAX_DERIV_ORDER}"
            )
        exprs[a] = m.ref_expr(a)
    x = np.asarray(x, dtype=float)
    z = (x - m.center) / m.rho
    s = np.einsum("...i,...i->...", z, z)
    inside = s < 1.0
    out = {a: np.zeros(s.shape) for a in exprs}
    if np.any(inside):
        zi = z[inside]
        u = 1.0 / (1.0 - s[inside])
        max_beta = np.max([e.max_beta() for e in exprs.values()], axis=0)
        max_k = max(e.max_k() for e in exprs.values())
        tables = power_tables(zi, u, max_beta, max_k)
        for a, expr in exprs.items():
            out[a][inside] = expr.eval_from_tables(*tables)
    for a in exprs:
        out[a] *= m.rho ** (m.scale_power - a.total)
    return out


def _radial_moment(dim, power):
    # int_0^1 exp(-1/(1-r^2)) r^power dr by dense Gauss (smooth, flat at r=1)
    r, w = scaled_rule(200, 0.0, 1.0)
    return float(np.sum(np.exp(-1.0 / (1.0 - r * r)) * r**power * w))


@lru_cache(maxsize=None)
def normalization_constant(dim):
    """c_n with int_{B_1} c_n exp(-1/(1-|z|^2)) dz = 1."""
    if dim == 2:
        return 1.0 / (2.0 * np.pi * _radial_moment(2, 1))
    if dim == 3:
        return 1.0 / (4.0 * np.pi * _radial_moment(3, 2))
    raise ValueError(f"unsupported dimension {dim}")


@lru_cache(maxsize=None)
def _reference_expr(dim, coord_power_axis, alpha_orders):
    """d^alpha of the reference bump, optionally premultiplied by z_k."""
    base = BumpExpr(dim, {((0,) * dim, 0): normalization_constant(dim)})
    if coord_power_axis is not None:
        base = base.times_coordinate(coord_power_axis)
    expr = base
    for axis, count in enumerate(alpha_orders):
        for _ in range(count):
            expr = expr.diff(axis)
    return expr


@dataclass(frozen=True)
class Mollifier:
    """Rescaled bump rho^p * ref((x - center)/rho) supported in B_rho(center).

    For the plain mollifier p = -dim (unit integral); the coordinate product
    (x - center)_k * omega has p = 1 - dim and reference z_k * psi(z).
    """

    center: np.ndarray
    rho: float
    dim: int
    scale_power: int = None
    coord_axis: int = field(default=None)

    def __post_init__(self):
        if self.scale_power is None:
            object.__setattr__(self, "scale_power", -self.dim)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @property
    def normalization(self):
        return self.rho**self.scale_power

    def ref_expr(self, alpha):
        alpha = as_multiindex(alpha, self.dim)
        return _reference_expr(self.dim, self.coord_axis, alpha.orders)

    def __call__(self, x):
        return eval_deriv(self, MultiIndex((0,) * self.dim), x)


def make_mollifier(center, rho, dim):
    """Unit-integral bump of radius rho about center, in dimension 2 or 3."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    center = np.asarray(center, dtype=float)
    if center.shape != (dim,):
        raise ValueError(f"center shape {center.shape} does not match dim {dim}")
    return Mollifier(center=center, rho=float(rho), dim=dim)


def coordinate_product(m, axis):
    """The wrapped product (x - center)_axis * omega, same support as omega."""
    if m.coord_axis is not None:
        raise ValueError("coordinate product already applied")
    return Mollifier(
        center=m.center,
        rho=m.rho,
        dim=m.dim,
        scale_power=m.scale_power + 1,
        coord_axis=axis,
    )


def eval_deriv(m, alpha, x):
    """Exact partial derivative d^alpha of the mollifier at x (vectorized)."""
    alpha = as_multiindex(alpha, m.dim)
    if alpha.total > MAX_DERIV_ORDER:
        raise ValueError(
            f"derivative order {alpha.total} exceeds supported maximum {MAX_DERIV_ORDER}"
        )
    expr = m.ref_expr(alpha)
    x = np.asarray(x, dtype=float)
    z = (x - m.center) / m.rho
    factor = m.rho ** (m.scale_power - alpha.total)
    return factor * expr(z)


# L^infty sampling lattice per the module defaults: 200 radial x 128 angular.
_LINF_RADIAL = 200
_LINF_ANGULAR = 128


@lru_cache(maxsize=None)
def _reference_norms(dim, coord_axis, alpha_orders):
    expr = _reference_expr(dim, coord_axis, alpha_orders)
    if dim == 2:
        nrad, nang = 128, 2048
        r, wr = scaled_rule(nrad, 0.0, 1.0)
        theta = 2.0 * np.pi * np.arange(nang) / nang
        pts = np.empty((nrad, nang, 2))
        pts[..., 0] = r[:, None] * np.cos(theta)[None, :]
        pts[..., 1] = r[:, None] * np.sin(theta)[None, :]
        vals = expr(pts)
        l1 = float(np.sum(np.abs(vals) * (wr * r)[:, None]) * (2.0 * np.pi / nang))
        rs = np.linspace(0.0, 1.0 - 1e-9, _LINF_RADIAL)
        ts = 2.0 * np.pi * np.arange(_LINF_ANGULAR) / _LINF_ANGULAR
        grid = np.empty((_LINF_RADIAL, _LINF_ANGULAR, 2))
        grid[..., 0] = rs[:, None] * np.cos(ts)[None, :]
        grid[..., 1] = rs[:, None] * np.sin(ts)[None, :]
        linf = float(np.max(np.abs(expr(grid))))
    else:
        nrad, ncos, nphi = 96, 64, 128
        r, wr = scaled_rule(nrad, 0.0, 1.0)
        c, wc = scaled_rule(ncos, -1.0, 1.0)
        phi = 2.0 * np.pi * np.arange(nphi) / nphi
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - c * c))
        pts = np.empty((nrad, ncos, nphi, 3))
        pts[..., 0] = r[:, None, None] * sin_t[None, :, None] * np.cos(phi)[None, None, :]
        pts[..., 1] = r[:, None, None] * sin_t[None, :, None] * np.sin(phi)[None, None, :]
        pts[..., 2] = r[:, None, None] * c[None, :, None]
        vals = np.abs(expr(pts))
        l1 = float(
            np.einsum("i,j,ijk->", wr * r * r, wc, vals) * (2.0 * np.pi / nphi)
        )
        rs = np.linspace(0.0, 1.0 - 1e-9, _LINF_RADIAL)
        cs = np.linspace(-1.0, 1.0, 64)
        ps = 2.0 * np.pi * np.arange(64) / 64
        st = np.sqrt(np.maximum(0.0, 1.0 - cs * cs))
        grid = np.empty((_LINF_RADIAL, 64, 64, 3))
        grid[..., 0] = rs[:, None, None] * st[None, :, None] * np.cos(ps)[None, None, :]
        grid[..., 1] = rs[:, None, None] * st[None, :, None] * np.sin(ps)[None, None, :]
        grid[..., 2] = rs[:, None, None] * cs[None, :, None]
        linf = float(np.max(np.abs(expr(grid))))
    return l1, linf


def norm_table(m, alpha):
    """(L1, Linf) of d^alpha of the mollifier over its support.

    Both norms are computed once on the unit-ball reference and rescaled, so
    ratios across rho values obey the scaling law exactly.
    """
    alpha = as_multiindex(alpha, m.dim)
    if alpha.total > MAX_DERIV_ORDER:
        raise ValueError(
            f"derivative order {alpha.total} exceeds supported maximum {MAX_DERIV_ORDER}"
        )
    ref_l1, ref_linf = _reference_norms(m.dim, m.coord_axis, alpha.orders)
    l1 = m.rho ** (m.scale_power + m.dim - alpha.total) * ref_l1
    linf = m.rho ** (m.scale_power - alpha.total) * ref_linf
    return l1, linf


def unit_mass(m, n_radial=64):
    """Quadrature of the mollifier over its support ball (diagnostic)."""
    r, wr = scaled_rule(n_radial, 0.0, m.rho)
    if m.dim == 2:
        nang = 256
        theta = 2.0 * np.pi * np.arange(nang) / nang
        pts = m.center + np.stack(
            [
                r[:, None] * np.cos(theta)[None, :],
                r[:, None] * np.sin(theta)[None, :],
            ],
            axis=-1,
        )
        vals = eval_deriv(m, 0, pts)
        return float(np.sum(vals * (wr * r)[:, None]) * (2.0 * np.pi / nang))
    c, wc = scaled_rule(48, -1.0, 1.0)
    nphi = 96
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    st = np.sqrt(np.maximum(0.0, 1.0 - c * c))
    pts = np.empty((len(r), len(c), nphi, 3))
    pts[..., 0] = r[:, None, None] * st[None, :, None] * np.cos(phi)[None, None, :]
    pts[..., 1] = r[:, None, None] * st[None, :, None] * np.sin(phi)[None, None, :]
    pts[..., 2] = r[:, None, None] * c[None, :, None]
    vals = eval_deriv(m, 0, m.center + pts)
    return float(np.einsum("i,j,ijk->", wr * r * r, wc, vals) * (2.0 * np.pi / nphi))
