"""Domains star-shaped with respect to a ball: geometry, membership, quadrature.

Supported kinds:
  rectangle(a, eps)   (-a, a) x (-eps, eps), star ball of radius eps at 0
  box(a, b, c)        (-a, a) x (-b, b) x (-c, c)
  ball(r)             dimension 2 or 3
  polar(profile)      2D domain r <= profile(theta), uniformly sampled profile

Membership uses the closed convention (boundary points belong to the domain).
"""

from dataclasses import dataclass

import numpy as np

from .gauss import scaled_rule


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, values):
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class StarDomain:
    kind: str
    dim: int
    params: dict
    star_center: np.ndarray
    star_radius: float
    diameter: float
    volume: float
    profile: np.ndarray = None

    @property
    def half_widths(self):
        if self.kind == "rectangle":
            return np.array([self.params["a"], self.params["eps"]])
        if self.kind == "box":
            return np.array([self.params["a"], self.params["b"], self.params["c"]])
        raise ValueError(f"half_widths undefined for kind {self.kind!r}")

    def describe(self):
        inner = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.kind}({inner})"


def _profile_radius(domain, theta):
    prof = domain.profile
    m = len(prof)
    t = np.mod(theta, 2.0 * np.pi) / (2.0 * np.pi) * m
    i0 = np.floor(t).astype(int) % m
    frac = t - np.floor(t)
    return prof[i0] * (1.0 - frac) + prof[(i0 + 1) % m] * frac


def make_domain(kind, **params):
    """Construct a StarDomain; geometry fields are exact for box-like kinds."""
    if kind == "rectangle":
        a, eps = float(params["a"]), float(params["eps"])
        if a <= 0 or eps <= 0:
            raise ValueError("rectangle parameters must be positive")
        if eps > a:
            raise ValueError("rectangle requires eps <= a")
        return StarDomain(
            kind="rectangle",
            dim=2,
            params={"a": a, "eps": eps},
            star_center=np.zeros(2),
            star_radius=eps,
            diameter=2.0 * np.hypot(a, eps),
            volume=4.0 * a * eps,
        )
    if kind == "box":
        a, b, c = (float(params[k]) for k in ("a", "b", "c"))
        if min(a, b, c) <= 0:
            raise ValueError("box parameters must be positive")
        return StarDomain(
            kind="box",
            dim=3,
            params={"a": a, "b": b, "c": c},
            star_center=np.zeros(3),
            star_radius=min(a, b, c),
            diameter=2.0 * np.sqrt(a * a + b * b + c * c),
            volume=8.0 * a * b * c,
        )
    if kind == "ball":
        r = float(params["r"])
        dim = int(params.get("dim", 2))
        if r <= 0:
            raise ValueError("ball radius must be positive")
        if dim not in (2, 3):
            raise ValueError(f"unsupported dimension {dim}")
        volume = np.pi * r * r if dim == 2 else 4.0 * np.pi * r**3 / 3.0
        return StarDomain(
            kind="ball",
            dim=dim,
            params={"r": r, "dim": dim},
            star_center=np.zeros(dim),
            star_radius=r,
            diameter=2.0 * r,
            volume=volume,
        )
    if kind == "polar":
        profile = np.asarray(params["profile"], dtype=float)
        if profile.ndim != 1 or len(profile) < 8:
            raise ValueError("polar profile needs at least 8 samples")
        if np.min(profile) <= 0:
            raise ValueError("polar profile must be positive")
        theta = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
        dom = StarDomain(
            kind="polar",
            dim=2,
            params={"samples": len(profile)},
            star_center=np.zeros(2),
            star_radius=float(np.min(profile)),
            diameter=0.0,
            volume=0.0,
            profile=profile,
        )
        r = _profile_radius(dom, theta)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
        sub = pts[::16]
        diam = float(
            np.max(np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=-1))
        )
        # exact area of the linearly interpolated profile: per-segment
        # integral of r(theta)^2/2 with r linear in theta
        nxt = np.roll(profile, -1)
        vol = float(
            (np.pi / (3.0 * len(profile)))
            * np.sum(profile**2 + profile * nxt + nxt**2)
        )
        rho = _polar_star_radius(dom)
        if rho <= 0:
            raise ValueError("polar profile is not star-shaped w.r.t. any centered ball")
        dom = StarDomain(
            kind="polar",
            dim=2,
            params={"samples": len(profile)},
            star_center=np.zeros(2),
            star_radius=rho,
            diameter=diam,
            volume=vol,
            profile=profile,
        )
        if not star_check(dom):
            raise ValueError("polar profile fails the star-shapedness check")
        return dom
    raise ValueError(f"unknown domain kind {kind!r}")


def contains(domain, x):
    """Membership test, vectorized over points of shape (..., dim)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if domain.kind in ("rectangle", "box"):
        hw = domain.half_widths
        ok = np.all(np.abs(x) <= hw, axis=-1)
    elif domain.kind == "ball":
        ok = np.linalg.norm(x, axis=-1) <= domain.params["r"]
    else:
        r = np.linalg.norm(x, axis=-1)
        theta = np.arctan2(x[..., 1], x[..., 0])
        ok = r <= _profile_radius(domain, theta)
    return bool(ok[0]) if squeeze else ok


def quadrature(domain, resolution):
    """Domain quadrature: tensor Gauss for boxes, radial Gauss x angular
    trapezoid for balls and polar kinds.  Weights sum to the volume."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if domain.kind in ("rectangle", "box"):
        axes = [scaled_rule(resolution, -h, h) for h in domain.half_widths]
        grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        w = axes[0][1]
        for _, wa in axes[1:]:
            w = np.multiply.outer(w, wa)
        return QuadratureRule(nodes=nodes, weights=w.ravel(), order=resolution)
    if domain.kind == "ball" and domain.dim == 3:
        rmax = domain.params["r"]
        r, wr = scaled_rule(resolution, 0.0, rmax)
        c, wc = scaled_rule(resolution, -1.0, 1.0)
        nphi = 2 * resolution
        phi = 2.0 * np.pi * np.arange(nphi) / nphi
        st = np.sqrt(np.maximum(0.0, 1.0 - c * c))
        nodes = np.empty((len(r), len(c), nphi, 3))
        nodes[..., 0] = r[:, None, None] * st[None, :, None] * np.cos(phi)
        nodes[..., 1] = r[:, None, None] * st[None, :, None] * np.sin(phi)
        nodes[..., 2] = r[:, None, None] * c[None, :, None]
        w = (
            (wr * r * r)[:, None, None]
            * wc[None, :, None]
            * np.full(nphi, 2.0 * np.pi / nphi)[None, None, :]
        )
        return QuadratureRule(
            nodes=nodes.reshape(-1, 3), weights=w.ravel(), order=resolution
        )
    # 2D ball and polar: per-angle radial extent
    if domain.kind == "ball":
        nang = 4 * resolution
        theta = 2.0 * np.pi * np.arange(nang) / nang
        wang = np.full(nang, 2.0 * np.pi / nang)
        rmax = np.full(nang, domain.params["r"])
    else:
        # per-segment angular Gauss: exact for the piecewise-linear profile,
        # so the weight sum reproduces the interpolated area to roundoff
        m = len(domain.profile)
        per = max(2, int(np.ceil(4 * resolution / m)))
        xg, wg = scaled_rule(per, 0.0, 1.0)
        seg = 2.0 * np.pi / m
        theta = (np.arange(m)[:, None] * seg + seg * xg[None, :]).ravel()
        wang = np.tile(seg * wg, m)
        rmax = _profile_radius(domain, theta)
    nang = len(theta)
    x01, w01 = scaled_rule(resolution, 0.0, 1.0)
    r = np.outer(x01, rmax)
    wr = np.outer(w01, rmax)
    nodes = np.empty((resolution, nang, 2))
    nodes[..., 0] = r * np.cos(theta)[None, :]
    nodes[..., 1] = r * np.sin(theta)[None, :]
    w = wr * r * wang[None, :]
    return QuadratureRule(nodes=nodes.reshape(-1, 2), weights=w.ravel(), order=resolution)


def boundary_points(domain, count):
    """Deterministic sample of count points on the boundary."""
    if domain.kind == "rectangle":
        a, eps = domain.params["a"], domain.params["eps"]
        perim = 4.0 * (a + eps)
        s = perim * (np.arange(count) + 0.5) / count
        pts = np.empty((count, 2))
        for i, si in enumerate(s):
            if si < 2 * a:
                pts[i] = (-a + si, -eps)
            elif si < 2 * a + 2 * eps:
                pts[i] = (a, -eps + (si - 2 * a))
            elif si < 4 * a + 2 * eps:
                pts[i] = (a - (si - 2 * a - 2 * eps), eps)
            else:
                pts[i] = (-a, eps - (si - 4 * a - 2 * eps))
        return pts
    if domain.kind == "box":
        hw = domain.half_widths
        rng = np.random.default_rng(1234)
        faces = rng.integers(0, 6, size=count)
        pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * hw
        for i, f in enumerate(faces):
            axis, side = divmod(f, 2)
            pts[i, axis] = hw[axis] * (1.0 if side else -1.0)
        return pts
    theta = 2.0 * np.pi * (np.arange(count) + 0.5) / count
    if domain.kind == "ball" and domain.dim == 3:
        # Fibonacci sphere
        i = np.arange(count)
        z = 1.0 - 2.0 * (i + 0.5) / count
        phi = np.pi * (1 + 5**0.5) * i
        st = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        r = domain.params["r"]
        return r * np.stack([st * np.cos(phi), st * np.sin(phi), z], axis=-1)
    if domain.kind == "ball":
        r = domain.params["r"]
        return r * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    r = _profile_radius(domain, theta)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def _ball_sample(domain, count):
    rng = np.random.default_rng(99)
    pts = rng.normal(size=(count, domain.dim))
    pts /= np.linalg.norm(pts, axis=-1, keepdims=True)
    radii = domain.star_radius * rng.uniform(0, 1, size=count) ** (1.0 / domain.dim)
    return domain.star_center + pts * radii[:, None]


def star_check(domain, n_ball=64, n_boundary=64, n_segment=32, shrink=1.0 - 1e-12):
    """Spot check: segments from sampled star-ball points to sampled boundary
    points stay inside the domain.  Segment points are pulled fractionally
    inward to stay clear of roundoff at the boundary itself."""
    ys = _ball_sample(domain, n_ball)
    xs = boundary_points(domain, n_boundary) * shrink
    t = np.linspace(0.0, 1.0, n_segment + 1)[1:-1]
    seg = ys[:, None, None, :] + t[None, None, :, None] * (
        xs[None, :, None, :] - ys[:, None, None, :]
    )
    return bool(np.all(contains(domain, seg.reshape(-1, domain.dim))))


def ball_inside_check(domain, n_sphere=256):
    """Membership of a sphere sample of the star ball (invariant check)."""
    if domain.dim == 2:
        theta = 2.0 * np.pi * np.arange(n_sphere) / n_sphere
        pts = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        i = np.arange(n_sphere)
        z = 1.0 - 2.0 * (i + 0.5) / n_sphere
        phi = np.pi * (1 + 5**0.5) * i
        st = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        pts = np.stack([st * np.cos(phi), st * np.sin(phi), z], axis=-1)
    pts = domain.star_center + domain.star_radius * pts
    return bool(np.all(contains(domain, pts)))


def _polar_trial(domain, rho):
    return StarDomain(
        kind="polar",
        dim=2,
        params=domain.params,
        star_center=np.zeros(2),
        star_radius=rho,
        diameter=0.0,
        volume=0.0,
        profile=domain.profile,
    )


def _polar_star_radius(domain):
    # coarse grid over candidate radii, refined by bisection against the
    # star check, then backed off so the returned ball passes with margin
    rmin = float(np.min(domain.profile))
    ok = None
    for rho in rmin * np.linspace(1.0, 0.05, 20):
        if star_check(_polar_trial(domain, rho)):
            ok = rho
            break
    if ok is None:
        return 0.0
    lo, hi = ok, rmin
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if star_check(_polar_trial(domain, mid)):
            lo = mid
        else:
            hi = mid
    return 0.98 * lo
