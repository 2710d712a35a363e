"""Exact polynomial calculus and the tensor identities it verifies.

Polynomials are coefficient maps {exponent tuple: float}.  Seeded random
coefficients are quantized to the dyadic grid 2^-20 so that differentiation
(integer scaling) and the cross-derivative cancellations are exact in double
precision; identity checks then produce exact zeros rather than roundoff.
"""

import numpy as np

DYADIC = 2.0**-20


class Poly:
    """Multivariate polynomial as a coefficient map {exponents: coeff}."""

    __slots__ = ("dim", "coeffs")

    def __init__(self, dim, coeffs=None):
        self.dim = dim
        self.coeffs = {}
        if coeffs:
            for k, c in coeffs.items():
                if c != 0.0:
                    self.coeffs[tuple(k)] = self.coeffs.get(tuple(k), 0.0) + c

    @classmethod
    def monomial(cls, dim, exponents, coeff=1.0):
        return cls(dim, {tuple(exponents): coeff})

    @classmethod
    def constant(cls, dim, value):
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def coordinate(cls, dim, axis):
        e = [0] * dim
        e[axis] = 1
        return cls(dim, {tuple(e): 1.0})

    def __add__(self, other):
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0.0) + c
        return Poly(self.dim, out)

    def __sub__(self, other):
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0.0) - c
        return Poly(self.dim, out)

    def __mul__(self, other):
        if isinstance(other, Poly):
            out = {}
            for k1, c1 in self.coeffs.items():
                for k2, c2 in other.coeffs.items():
                    k = tuple(a + b for a, b in zip(k1, k2))
                    out[k] = out.get(k, 0.0) + c1 * c2
            return Poly(self.dim, out)
        return Poly(self.dim, {k: other * c for k, c in self.coeffs.items()})

    __rmul__ = __mul__

    def diff(self, axis):
        out = {}
        for k, c in self.coeffs.items():
            if k[axis] > 0:
                kk = list(k)
                kk[axis] -= 1
                out[tuple(kk)] = out.get(tuple(kk), 0.0) + c * k[axis]
        return Poly(self.dim, out)

    def degree(self):
        return max((sum(k) for k in self.coeffs), default=0)

    def max_abs_coeff(self):
        return max((abs(c) for c in self.coeffs.values()), default=0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        out = np.zeros(x.shape[:-1])
        for k, c in self.coeffs.items():
            term = np.full(x.shape[:-1], c)
            for ax, p in enumerate(k):
                if p:
                    term = term * x[..., ax] ** p
            out += term
        return out[0] if squeeze else out

    def integral_box(self, half_widths):
        """Exact integral over the centered box with given half widths."""
        total = 0.0
        for k, c in self.coeffs.items():
            term = c
            for p, h in zip(k, half_widths):
                if p % 2 == 1:
                    term = 0.0
                    break
                term *= 2.0 * h ** (p + 1) / (p + 1)
            total += term
        return total


def random_poly(dim, degree, rng, dyadic=True):
    """Random polynomial with coefficients in [-1, 1], dyadically quantized."""
    coeffs = {}
    for k in _exponents(dim, degree):
        c = rng.uniform(-1.0, 1.0)
        if dyadic:
            c = np.round(c / DYADIC) * DYADIC
        coeffs[k] = c
    return Poly(dim, coeffs)


def _exponents(dim, degree):
    if dim == 1:
        return [(d,) for d in range(degree + 1)]
    out = []
    for d in range(degree + 1):
        for rest in _exponents(dim - 1, degree - d):
            out.append((d,) + rest)
    return out


class PolyField:
    """Vector (or tensor) field with polynomial components."""

    def __init__(self, components):
        self.components = list(components)
        self.dim = self.components[0].dim

    def __getitem__(self, i):
        return self.components[i]

    def __len__(self):
        return len(self.components)

    def diff(self, axis):
        return PolyField([p.diff(axis) for p in self.components])

    def __call__(self, x):
        vals = [p(x) for p in self.components]
        return np.stack(vals, axis=-1)


def random_vector_field(dim, degree, rng, dyadic=True):
    return PolyField([random_poly(dim, degree, rng, dyadic) for _ in range(dim)])


def jacobian(u):
    """(grad u)_{ij} = d_j u_i as a dim x dim nested list of Poly."""
    return [[u[i].diff(j) for j in range(u.dim)] for i in range(u.dim)]


def sym_jacobian(u):
    J = jacobian(u)
    n = u.dim
    return [[0.5 * (J[i][j] + J[j][i]) for j in range(n)] for i in range(n)]


def curl_vec(u):
    """3D curl of a vector PolyField."""
    return [
        u[2].diff(1) - u[1].diff(2),
        u[0].diff(2) - u[2].diff(0),
        u[1].diff(0) - u[0].diff(1),
    ]


def curl_rows(t):
    """Row-wise curl of a 3x3 Poly tensor."""
    out = []
    for row in t:
        out.append(
            [
                row[2].diff(1) - row[1].diff(2),
                row[0].diff(2) - row[2].diff(0),
                row[1].diff(0) - row[0].diff(1),
            ]
        )
    return out


def curl_grad_identity(u):
    """Largest |coefficient| of [grad(curl u)]^T - 2 curl(grad_S u) (3D).

    Both sides are assembled independently with exact coefficient calculus;
    the result is exactly 0 for every polynomial field.
    """
    if u.dim != 3:
        raise ValueError("the curl identity is three dimensional")
    c = curl_vec(u)
    lhs = [[c[j].diff(i) for j in range(3)] for i in range(3)]
    S = sym_jacobian(u)
    two_s = [[2.0 * S[i][j] for j in range(3)] for i in range(3)]
    rhs = curl_rows(two_s)
    worst = 0.0
    for i in range(3):
        for j in range(3):
            worst = max(worst, (lhs[i][j] - rhs[i][j]).max_abs_coeff())
    return worst


def box_bubble(half_widths):
    """Product of per-side bubbles (h^2 - x^2); vanishes on the box boundary."""
    dim = len(half_widths)
    bubble = Poly.constant(dim, 1.0)
    for ax, h in enumerate(half_widths):
        side = Poly.constant(dim, h * h) - (
            Poly.coordinate(dim, ax) * Poly.coordinate(dim, ax)
        )
        bubble = bubble * side
    return bubble


def poly_divergence_row(row):
    out = Poly(row[0].dim)
    for j, p in enumerate(row):
        out = out + p.diff(j)
    return out


def gradient_pairing(v, tau, half_widths):
    """<grad v, tau> = -int v . div tau, exact over the centered box.

    tau is a nested list of Poly forming a tensor that vanishes on the
    boundary (the caller enforces the cutoff)."""
    n = len(v)
    total = Poly(v[0].dim)
    for i in range(n):
        total = total + v[i] * poly_divergence_row(tau[i])
    return -total.integral_box(half_widths)


def symmetric_gradient_pairing(v, tau, half_widths):
    """<grad_S v, tau> via the symmetric part of tau."""
    n = len(v)
    tau_s = [[0.5 * (tau[i][j] + tau[j][i]) for j in range(n)] for i in range(n)]
    return gradient_pairing(v, tau_s, half_widths)


def symmetric_pairing_check(v, tau, domain):
    """|<grad v, tau> - <grad_S v, tau>| with the boundary cutoff enforced by
    multiplying tau by the box bubble.  Requires symmetric tau."""
    hw = domain.half_widths
    n = len(v)
    for i in range(n):
        for j in range(i + 1, n):
            if (tau[i][j] - tau[j][i]).max_abs_coeff() != 0.0:
                raise ValueError("tau must be symmetric")
    bubble = box_bubble(hw)
    tau_b = [[bubble * tau[i][j] for j in range(n)] for i in range(n)]
    a = gradient_pairing(v, tau_b, hw)
    b = symmetric_gradient_pairing(v, tau_b, hw)
    return abs(a - b)
