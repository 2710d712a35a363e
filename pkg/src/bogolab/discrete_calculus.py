"""Uniform-grid discrete calculus on rectangles and boxes.

Negative Sobolev norms are Riesz values: ||g||_-1 = |w|_1 with -Lap w = g
(Dirichlet), ||g||_-2 = |w|_2 with Lap^2 w = g (clamped, mirror ghosts).
Solves are matrix-free conjugate gradients.  The inf-sup constant beta_0
comes from the pressure Schur complement on a staggered (MAC) layout, by
inverse iteration with the constant pressure deflated.
"""

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class GridField:
    """Values on the full tensor grid (boundary nodes included).

    values has shape (*component_axes, n0+1, ..., n_{dim-1}+1).
    """

    domain: object
    values: np.ndarray
    spacing: tuple

    @property
    def dim(self):
        return self.domain.dim

    @property
    def grid_shape(self):
        return self.values.shape[-self.dim:]

    @property
    def components(self):
        lead = self.values.shape[: self.values.ndim - self.dim]
        return int(np.prod(lead)) if lead else 1


def grid_points(domain, n_cells):
    hw = domain.half_widths
    axes = [np.linspace(-h, h, n_cells + 1) for h in hw]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1)


def make_field(domain, n_cells, values):
    hw = domain.half_widths
    spacing = tuple(2.0 * h / n_cells for h in hw)
    return GridField(domain=domain, values=np.asarray(values, dtype=float),
                     spacing=spacing)


def field_from_callable(domain, n_cells, fn):
    return make_field(domain, n_cells, fn(grid_points(domain, n_cells)))


def _trapezoid_weights(shape, spacing):
    w = np.array([1.0])
    for n, h in zip(shape, spacing):
        wa = np.full(n, h)
        wa[0] *= 0.5
        wa[-1] *= 0.5
        w = np.multiply.outer(w, wa)
    return w.reshape(shape)


def grid_inner(a, b):
    """Trapezoid L2 inner product of two fields (componentwise contraction)."""
    w = _trapezoid_weights(a.grid_shape, a.spacing)
    return float(np.sum(a.values * b.values * w))


def grid_norm0(a):
    return np.sqrt(max(grid_inner(a, a), 0.0))


def _neg_laplacian(v, spacing):
    """-Lap on interior arrays with zero Dirichlet extension."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape)
    for ax, h in enumerate(spacing):
        n = v.shape[ax]
        sl = [slice(None)] * v.ndim
        up = [slice(None)] * v.ndim
        dn = [slice(None)] * v.ndim
        up[ax] = slice(1, n)
        dn[ax] = slice(0, n - 1)
        shifted = np.zeros_like(v)
        shifted[tuple(dn)] += v[tuple(up)]
        shifted[tuple(up)] += v[tuple(dn)]
        out += (2.0 * v - shifted) / (h * h)
    return out


def _cg(apply_op, b, rtol, maxiter, precond=None, label="cg"):
    shape = b.shape
    A = spla.LinearOperator(
        (b.size, b.size),
        matvec=lambda x: apply_op(x.reshape(shape)).ravel(),
    )
    M = None
    if precond is not None:
        M = spla.LinearOperator((b.size, b.size), matvec=lambda x: precond * x)
    x, info = spla.cg(A, b.ravel(), rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    if info != 0:
        raise RuntimeError(f"{label} failed to converge (info={info})")
    return x.reshape(shape)


def poisson_solve(g, rtol=1e-10, maxiter=20000):
    """-Lap w = g with homogeneous Dirichlet data; 5/7-point stencil."""
    if g.domain.kind not in ("rectangle", "box"):
        raise ValueError("grid solves require rectangle or box domains")
    interior = tuple(slice(1, -1) for _ in range(g.dim))
    b = g.values[interior]
    w_full = np.zeros(g.grid_shape)
    if np.any(b != 0.0):
        w_full[interior] = _cg(
            lambda v: _neg_laplacian(v, g.spacing), b, rtol, maxiter,
            label="poisson",
        )
    return GridField(domain=g.domain, values=w_full, spacing=g.spacing)


def _link_gradient_sq(w_full, spacing):
    """Dirichlet-form gradient energy: forward differences on all grid links
    (boundary links included, matching the Riesz identity |w|_1^2 = (w, g))."""
    dim = len(spacing)
    cell = float(np.prod(spacing))
    total = 0.0
    for ax, h in enumerate(spacing):
        up = [slice(None)] * dim
        dn = [slice(None)] * dim
        up[ax] = slice(1, None)
        dn[ax] = slice(0, -1)
        d = (w_full[tuple(up)] - w_full[tuple(dn)]) / h
        total += cell * float(np.sum(d * d))
    return total


def _link_gradient_inner(u_full, v_full, spacing):
    dim = len(spacing)
    cell = float(np.prod(spacing))
    total = 0.0
    for ax, h in enumerate(spacing):
        up = [slice(None)] * dim
        dn = [slice(None)] * dim
        up[ax] = slice(1, None)
        dn[ax] = slice(0, -1)
        du = (u_full[tuple(up)] - u_full[tuple(dn)]) / h
        dv = (v_full[tuple(up)] - v_full[tuple(dn)]) / h
        total += cell * float(np.sum(du * dv))
    return total


def _seminorm1(w_full, spacing):
    return np.sqrt(_link_gradient_sq(w_full, spacing))


def neg_norm_h1(g, rtol=1e-10):
    """Dual norm over H^1_0 with the |.|_1 seminorm, componentwise data."""
    vals = g.values.reshape((-1,) + g.grid_shape)
    total = 0.0
    for comp in vals:
        w = poisson_solve(
            GridField(domain=g.domain, values=comp, spacing=g.spacing), rtol
        )
        total += _seminorm1(w.values, g.spacing) ** 2
    return float(np.sqrt(total))


def neg_norm_h1_quotient(g, rtol=1e-10):
    """min over constants c of ||g - c||_-1 for scalar data g, with the
    minimizer; quadratic in c through the Riesz solves."""
    if g.values.shape != g.grid_shape:
        raise ValueError("quotient norm is for scalar data")
    w_g = poisson_solve(g, rtol).values
    ones = GridField(domain=g.domain,
                     values=np.ones(g.grid_shape), spacing=g.spacing)
    w_1 = poisson_solve(ones, rtol).values
    a11 = _link_gradient_inner(w_1, w_1, g.spacing)
    a1g = _link_gradient_inner(w_1, w_g, g.spacing)
    agg = _link_gradient_inner(w_g, w_g, g.spacing)
    c = a1g / a11
    val = np.sqrt(max(agg - c * a1g, 0.0))
    return float(val), float(c)


def _biharmonic(v, spacing):
    """Lap^2 on interior arrays: zero boundary ring, mirror ghost layer."""
    v = np.asarray(v, dtype=float)
    dim = len(spacing)
    ext = np.zeros(tuple(n + 4 for n in v.shape))
    core = tuple(slice(2, -2) for _ in range(dim))
    ext[core] = v
    for ax in range(dim):
        lo = [slice(None)] * dim
        lo_src = [slice(None)] * dim
        lo[ax] = 0
        lo_src[ax] = 2
        ext[tuple(lo)] = ext[tuple(lo_src)]
        hi = [slice(None)] * dim
        hi_src = [slice(None)] * dim
        hi[ax] = -1
        hi_src[ax] = -3
        ext[tuple(hi)] = ext[tuple(hi_src)]
    lap1 = np.zeros(tuple(n + 2 for n in v.shape))
    inner1 = tuple(slice(1, -1) for _ in range(dim))
    for ax, h in enumerate(spacing):
        up = [slice(1, -1)] * dim
        dn = [slice(1, -1)] * dim
        up[ax] = slice(2, None)
        dn[ax] = slice(0, -2)
        lap1 += (
            ext[tuple(up)] + ext[tuple(dn)] - 2.0 * ext[inner1]
        ) / (h * h)
    out = np.zeros(v.shape)
    inner2 = tuple(slice(1, -1) for _ in range(dim))
    for ax, h in enumerate(spacing):
        up = [slice(1, -1)] * dim
        dn = [slice(1, -1)] * dim
        up[ax] = slice(2, None)
        dn[ax] = slice(0, -2)
        out += (
            lap1[tuple(up)] + lap1[tuple(dn)] - 2.0 * lap1[inner2]
        ) / (h * h)
    return out


def biharmonic_solve(g, rtol=1e-9, maxiter=200000):
    """Lap^2 w = g with clamped conditions (w = dw/dn = 0)."""
    if g.domain.kind not in ("rectangle", "box"):
        raise ValueError("grid solves require rectangle or box domains")
    interior = tuple(slice(1, -1) for _ in range(g.dim))
    b = g.values[interior]
    w_full = np.zeros(g.grid_shape)
    if np.any(b != 0.0):
        diag = sum(6.0 / h**4 for h in g.spacing)
        for i, hi in enumerate(g.spacing):
            for hj in g.spacing[i + 1:]:
                diag += 8.0 / (hi * hi * hj * hj)
        w_full[interior] = _cg(
            lambda v: _biharmonic(v, g.spacing), b, rtol, maxiter,
            precond=1.0 / diag, label="biharmonic",
        )
    return GridField(domain=g.domain, values=w_full, spacing=g.spacing)


def _seminorm2(w_full, spacing):
    """Full second-derivative tensor (mixed terms included) at all grid
    nodes via mirror ghosts, with trapezoid weights so the near-boundary
    curvature of clamped fields is not dropped."""
    dim = len(spacing)
    ext = np.zeros(tuple(n + 2 for n in w_full.shape))
    core = tuple(slice(1, -1) for _ in range(dim))
    ext[core] = w_full
    for ax in range(dim):
        lo = [slice(None)] * dim
        src = [slice(None)] * dim
        lo[ax] = 0
        src[ax] = 2
        ext[tuple(lo)] = ext[tuple(src)]
        hi = [slice(None)] * dim
        src2 = [slice(None)] * dim
        hi[ax] = -1
        src2[ax] = -3
        ext[tuple(hi)] = ext[tuple(src2)]
    weights = _trapezoid_weights(w_full.shape, spacing)
    total = 0.0
    for a in range(dim):
        for b in range(dim):
            if a == b:
                up = [slice(1, -1)] * dim
                dn = [slice(1, -1)] * dim
                mid = [slice(1, -1)] * dim
                up[a] = slice(2, None)
                dn[a] = slice(0, -2)
                dd = (
                    ext[tuple(up)] + ext[tuple(dn)] - 2.0 * ext[tuple(mid)]
                ) / spacing[a] ** 2
            else:
                pp = [slice(1, -1)] * dim
                pm = [slice(1, -1)] * dim
                mp = [slice(1, -1)] * dim
                mm = [slice(1, -1)] * dim
                pp[a] = slice(2, None); pp[b] = slice(2, None)
                pm[a] = slice(2, None); pm[b] = slice(0, -2)
                mp[a] = slice(0, -2); mp[b] = slice(2, None)
                mm[a] = slice(0, -2); mm[b] = slice(0, -2)
                dd = (
                    ext[tuple(pp)] - ext[tuple(pm)] - ext[tuple(mp)] + ext[tuple(mm)]
                ) / (4.0 * spacing[a] * spacing[b])
            total += float(np.sum(weights * dd * dd))
    return np.sqrt(total)


def neg_norm_h2(g, rtol=1e-9):
    """Dual norm over H^2_0 with the |.|_2 seminorm, componentwise data."""
    vals = g.values.reshape((-1,) + g.grid_shape)
    total = 0.0
    for comp in vals:
        w = biharmonic_solve(
            GridField(domain=g.domain, values=comp, spacing=g.spacing), rtol
        )
        total += _seminorm2(w.values, g.spacing) ** 2
    return float(np.sqrt(total))


def poincare_constant(domain, resolution, tol=1e-12, maxiter=400):
    """C_P = 1/(R sqrt(lambda_1)), lambda_1 by inverse power iteration."""
    if domain.kind not in ("rectangle", "box"):
        raise ValueError("rectangle or box required")
    hw = domain.half_widths
    spacing = tuple(2.0 * h / resolution for h in hw)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(tuple(resolution - 1 for _ in hw))
    v /= np.linalg.norm(v)
    lam_old = np.inf
    for _ in range(maxiter):
        g = GridField(domain=domain,
                      values=np.pad(v, 1), spacing=spacing)
        w = poisson_solve(g, rtol=1e-12)
        v = w.values[tuple(slice(1, -1) for _ in hw)]
        v /= np.linalg.norm(v)
        Av = _neg_laplacian(v, spacing)
        lam = float(np.sum(v * Av) / np.sum(v * v))
        if abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    else:
        raise RuntimeError("eigeniteration stagnated")
    return 1.0 / (domain.diameter * np.sqrt(lam))


# ---------------------------------------------------------------------------
# MAC inf-sup


def _tridiag_stiffness(n, h, wall_half_links):
    main = np.full(n, 2.0 / h)
    off = np.full(n - 1, -1.0 / h)
    if wall_half_links:
        main[0] += 1.0 / h   # 2/(h/2) wall link replaces the missing 1/h one
        main[-1] += 1.0 / h
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _mac_matrices(domain, n_cells, norm="full"):
    dim = domain.dim
    hw = domain.half_widths
    h = [2.0 * w / n_cells for w in hw]
    blocks = []
    divs = []
    for a in range(dim):
        # kron assembly: sum over which factor carries the stiffness
        sizes = [n_cells - 1 if c == a else n_cells for c in range(dim)]
        Ms = [sp.identity(s, format="csr") * h[c] for c, s in enumerate(sizes)]
        Ks = [
            _tridiag_stiffness(s, h[c], wall_half_links=(c != a))
            for c, s in enumerate(sizes)
        ]
        stiff = None
        for c in range(dim):
            term = None
            for cc in range(dim):
                f = Ks[cc] if cc == c else Ms[cc]
                term = f if term is None else sp.kron(term, f, format="csr")
            stiff = term if stiff is None else stiff + term
        mass = None
        for cc in range(dim):
            term = Ms[cc]
            mass = term if mass is None else sp.kron(mass, term, format="csr")
        A_a = stiff + mass if norm == "full" else stiff
        blocks.append(A_a.tocsr())
        # divergence factor along axis a, identity along the others
        D1 = sp.diags(
            [np.full(n_cells - 1, 1.0 / h[a])], [0],
            shape=(n_cells, n_cells - 1), format="csr",
        ) + sp.diags(
            [np.full(n_cells - 1, -1.0 / h[a])], [-1],
            shape=(n_cells, n_cells - 1), format="csr",
        )
        B_a = None
        for cc in range(dim):
            f = D1 if cc == a else sp.identity(n_cells, format="csr")
            B_a = f if B_a is None else sp.kron(B_a, f, format="csr")
        divs.append(B_a.tocsr())
    A = sp.block_diag(blocks, format="csc")
    B = sp.hstack(divs, format="csr")
    return A, B, float(np.prod(h))


def _checkerboard(n_cells, dim):
    idx = np.indices(tuple(n_cells for _ in range(dim))).sum(axis=0)
    cb = np.where(idx % 2 == 0, 1.0, -1.0).ravel()
    return cb / np.linalg.norm(cb)


def infsup_beta0(domain, resolution, norm="full", tol=1e-10):
    """Smallest nonzero singular value of the MAC divergence against the
    velocity norm.  The pressure Schur complement has its constant kernel
    deflated by a rank-one shift; the smallest eigenvalues are clustered, so
    they are extracted by shift-invert Lanczos with inner CG solves."""
    if domain.kind not in ("rectangle", "box"):
        raise ValueError("rectangle or box required")
    A, B, cell = _mac_matrices(domain, resolution, norm)
    lu = spla.splu(A)
    m = B.shape[0]
    ones = np.ones(m) / np.sqrt(m)

    def K(q):
        return B @ lu.solve(B.T @ q)

    rng = np.random.default_rng(42)
    probe = rng.standard_normal(m)
    probe -= ones * (ones @ probe)
    probe /= np.linalg.norm(probe)
    shift = 10.0 * float(probe @ K(probe))

    def K_deflated(q):
        return K(q) + shift * ones * (ones @ q)

    Kop = spla.LinearOperator((m, m), matvec=K_deflated)

    def inv_apply(b):
        z, info = spla.cg(Kop, b, rtol=1e-12, atol=0.0, maxiter=20000)
        if info != 0:
            raise RuntimeError("Schur-complement CG failed to converge")
        return z

    OPinv = spla.LinearOperator((m, m), matvec=inv_apply)
    k = min(4, m - 2)
    v0 = rng.standard_normal(m)
    vals, vecs = spla.eigsh(
        Kop, k=k, sigma=0.0, which="LM", OPinv=OPinv, tol=tol, v0=v0
    )
    order = np.argsort(vals)
    mu = float(vals[order[0]])
    q = vecs[:, order[0]]
    if mu > 0.5 * shift:
        raise RuntimeError("eigensolve only found the deflated constant mode")
    cb = _checkerboard(resolution, domain.dim)
    cb_energy = float((q @ cb) ** 2)
    if cb_energy > 0.5:
        raise RuntimeError(
            f"inf-sup eigenvector is {cb_energy:.0%} checkerboard: spurious mode"
        )
    return float(np.sqrt(cell * mu))


# ---------------------------------------------------------------------------
# rigid body motions


@dataclass
class RMBasis:
    """Rigid body motions evaluated on the grid, with their Gram matrix."""

    domain: object
    fields: np.ndarray  # (m, dim, *grid)
    gram: np.ndarray
    spacing: tuple

    @property
    def size(self):
        return self.fields.shape[0]


def rm_basis(domain, n_cells):
    pts = grid_points(domain, n_cells)
    dim = domain.dim
    hw = domain.half_widths
    spacing = tuple(2.0 * h / n_cells for h in hw)
    grid_shape = pts.shape[:-1]
    fields = []
    for a in range(dim):
        f = np.zeros((dim,) + grid_shape)
        f[a] = 1.0
        fields.append(f)
    if dim == 2:
        r = np.zeros((2,) + grid_shape)
        r[0] = pts[..., 1]
        r[1] = -pts[..., 0]
        fields.append(r)
    else:
        for a in range(3):
            e = np.zeros(3)
            e[a] = 1.0
            r = np.cross(
                np.broadcast_to(e, grid_shape + (3,)), pts, axis=-1
            )
            fields.append(np.moveaxis(r, -1, 0))
    fields = np.stack(fields, axis=0)
    w = _trapezoid_weights(grid_shape, spacing)
    m = fields.shape[0]
    gram = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = gram[j, i] = float(
                np.sum(fields[i] * fields[j] * w[None])
            )
    return RMBasis(domain=domain, fields=fields, gram=gram, spacing=spacing)


def project_rm(v, basis=None):
    """L2 projection onto rigid body motions: coefficients and the residual
    norm ||v - Pi v||_0."""
    dim = v.dim
    if v.values.shape[: v.values.ndim - dim] != (dim,):
        raise ValueError("project_rm expects a vector field")
    n_cells = v.grid_shape[0] - 1
    if basis is None:
        basis = rm_basis(v.domain, n_cells)
    w = _trapezoid_weights(v.grid_shape, v.spacing)
    rhs = np.array(
        [float(np.sum(basis.fields[i] * v.values * w[None]))
         for i in range(basis.size)]
    )
    try:
        coeffs = np.linalg.solve(basis.gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("degenerate rigid-motion Gram matrix") from exc
    residual = v.values - np.tensordot(coeffs, basis.fields, axes=(0, 0))
    res_norm = np.sqrt(float(np.sum(residual * residual * w[None])))
    return coeffs, res_norm, GridField(domain=v.domain, values=residual,
                                       spacing=v.spacing)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"BGF1"


def save_field(field, path):
    """Flat binary dump: header (dims, spacing, components), row-major f64."""
    dim = field.dim
    comp = field.components
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", dim, comp))
        for n in field.grid_shape:
            fh.write(struct.pack("<Q", n))
        for h in field.spacing:
            fh.write(struct.pack("<d", h))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path, domain=None):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a grid-field file")
        dim, comp = struct.unpack("<II", fh.read(8))
        shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(dim))
        spacing = tuple(struct.unpack("<d", fh.read(8))[0] for _ in range(dim))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    lead = (comp,) if comp > 1 else ()
    values = payload.reshape(lead + shape).copy()
    return GridField(domain=domain, values=values, spacing=spacing)


def field_to_csv(field, path):
    """Index/value rows for small fields."""
    dim = field.dim
    vals = field.values.reshape((-1,) + field.grid_shape)
    with open(path, "w", encoding="utf-8") as fh:
        idx_cols = ",".join(f"i{a}" for a in range(dim))
        fh.write(f"component,{idx_cols},value\n")
        for c in range(vals.shape[0]):
            for idx in np.ndindex(*field.grid_shape):
                s = ",".join(str(i) for i in idx)
                fh.write(f"{c},{s},{vals[c][idx]:.12g}\n")
