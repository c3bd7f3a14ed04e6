"""Convex domains, uniform grids with membership masks, finite differences, L^p norms.

Everything downstream (solvers, section geometry, covering experiments) works on the
node sets produced here. A node is exactly one of: exterior, boundary-adjacent, or
interior. Interior nodes have their full 8-neighborhood inside the domain, so central
stencils never reach outside; boundary-adjacent nodes fall back to one-sided stencils
that stay exact on quadratics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class DomainError(ValueError):
    """Invalid domain description (non-convex polygon, bad shape parameters)."""


class GridError(ValueError):
    """Grid cannot be built under the requested spacing."""


class FieldError(ValueError):
    """Field values incompatible with the grid, or an empty norm region."""


_MEMBERSHIP_TOL = 1e-12


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexDomain:
    """A bounded convex domain centered at the origin.

    Attributes
    ----------
    kind : str
        One of "disc", "ellipse", "square", "superellipse", "polygon".
    params : dict
        Shape parameters as passed to :func:`build_domain`.
    rho : float
        Normalization constant: min(interior tangent ball radius proxy,
        1 / enclosing ball radius). For a square the tangent-ball proxy is the
        inradius and the uniform convexity modulus below is 0; the two
        quantities are stored separately rather than blended.
    uniform_convexity_modulus : float
        Minimal boundary curvature (0 for flat-sided domains).
    """

    kind: str
    params: dict
    rho: float
    uniform_convexity_modulus: float
    _vertices: Optional[np.ndarray] = field(default=None, repr=False)
    _edge_normals: Optional[np.ndarray] = field(default=None, repr=False)
    _edge_offsets: Optional[np.ndarray] = field(default=None, repr=False)

    # -- membership -------------------------------------------------------

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Closed membership test for an (..., 2) array of points."""
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        if self.kind == "disc":
            r = self.params["radius"]
            return x * x + y * y <= r * r * (1.0 + _MEMBERSHIP_TOL) + _MEMBERSHIP_TOL
        if self.kind == "ellipse":
            a, b = self.params["a"], self.params["b"]
            return (x / a) ** 2 + (y / b) ** 2 <= 1.0 + _MEMBERSHIP_TOL
        if self.kind == "square":
            half = 0.5 * self.params["side"]
            return np.maximum(np.abs(x), np.abs(y)) <= half * (1.0 + _MEMBERSHIP_TOL) + _MEMBERSHIP_TOL
        if self.kind == "superellipse":
            a, b, p = self.params["a"], self.params["b"], self.params["power"]
            return np.abs(x / a) ** p + np.abs(y / b) ** p <= 1.0 + _MEMBERSHIP_TOL
        # polygon: inside all edge half-planes
        d = pts @ self._edge_normals.T - self._edge_offsets
        return np.all(d <= _MEMBERSHIP_TOL * max(1.0, float(np.max(np.abs(self._edge_offsets)))), axis=-1)

    # -- geometry ---------------------------------------------------------

    def bbox(self) -> tuple[float, float, float, float]:
        if self.kind == "disc":
            r = self.params["radius"]
            return (-r, r, -r, r)
        if self.kind in ("ellipse", "superellipse"):
            a, b = self.params["a"], self.params["b"]
            return (-a, a, -b, b)
        if self.kind == "square":
            half = 0.5 * self.params["side"]
            return (-half, half, -half, half)
        v = self._vertices
        return (float(v[:, 0].min()), float(v[:, 0].max()), float(v[:, 1].min()), float(v[:, 1].max()))

    def diameter(self) -> float:
        x0, x1, y0, y1 = self.bbox()
        if self.kind == "disc":
            return 2.0 * self.params["radius"]
        if self.kind == "ellipse":
            return 2.0 * max(self.params["a"], self.params["b"])
        if self.kind == "square":
            return self.params["side"] * np.sqrt(2.0)
        if self.kind == "polygon":
            v = self._vertices
            d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)
            return float(np.sqrt(d2.max()))
        return float(np.hypot(x1 - x0, y1 - y0))

    def boundary_samples(self, m: int) -> np.ndarray:
        """m deterministic boundary points, roughly arc-length distributed."""
        t = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
        if self.kind == "disc":
            r = self.params["radius"]
            return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
        if self.kind == "ellipse":
            a, b = self.params["a"], self.params["b"]
            return np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)
        if self.kind == "superellipse":
            a, b, p = self.params["a"], self.params["b"], self.params["power"]
            c, s = np.cos(t), np.sin(t)
            return np.stack(
                [a * np.sign(c) * np.abs(c) ** (2.0 / p), b * np.sign(s) * np.abs(s) ** (2.0 / p)],
                axis=-1,
            )
        if self.kind == "square":
            half = 0.5 * self.params["side"]
            verts = np.array([[half, half], [-half, half], [-half, -half], [half, -half]])
        else:
            verts = self._vertices
        # walk the closed polyline
        seg = np.roll(verts, -1, axis=0) - verts
        lens = np.hypot(seg[:, 0], seg[:, 1])
        total = lens.sum()
        s = np.linspace(0.0, total, m, endpoint=False)
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        idx = np.searchsorted(cum, s, side="right") - 1
        idx = np.clip(idx, 0, len(verts) - 1)
        frac = (s - cum[idx]) / lens[idx]
        return verts[idx] + seg[idx] * frac[:, None]

    def project_boundary(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest boundary point, distance, and outward unit normal there.

        Works for points inside or outside; distance is always nonnegative.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "disc":
            r = self.params["radius"]
            nrm = np.linalg.norm(pts, axis=-1)
            safe = np.where(nrm < 1e-300, 1.0, nrm)
            n = pts / safe[:, None]
            n[nrm < 1e-300] = np.array([0.0, 1.0])
            proj = r * n
            dist = np.abs(nrm - r)
            return proj, dist, n
        if self.kind == "square":
            half = 0.5 * self.params["side"]
            proj = np.empty_like(pts)
            normal = np.empty_like(pts)
            inside = self.contains(pts)
            for k, p in enumerate(pts):
                if inside[k]:
                    gaps = np.array([half - p[0], half + p[0], half - p[1], half + p[1]])
                    side_idx = int(np.argmin(gaps))
                    q = p.copy()
                    if side_idx == 0:
                        q[0] = half
                        n = np.array([1.0, 0.0])
                    elif side_idx == 1:
                        q[0] = -half
                        n = np.array([-1.0, 0.0])
                    elif side_idx == 2:
                        q[1] = half
                        n = np.array([0.0, 1.0])
                    else:
                        q[1] = -half
                        n = np.array([0.0, -1.0])
                else:
                    q = np.clip(p, -half, half)
                    d = p - q
                    nn = np.linalg.norm(d)
                    n = d / nn if nn > 0 else np.array([1.0, 0.0])
                proj[k] = q
                normal[k] = n
            dist = np.linalg.norm(pts - proj, axis=-1)
            return proj, dist, normal
        if self.kind == "ellipse":
            return self._project_ellipse(pts)
        if self.kind == "superellipse":
            return self._project_sampled(pts)
        return self._project_polygon(pts)

    def _project_ellipse(self, pts):
        a, b = self.params["a"], self.params["b"]
        sx = np.where(pts[:, 0] >= 0, 1.0, -1.0)
        sy = np.where(pts[:, 1] >= 0, 1.0, -1.0)
        qx = np.abs(pts[:, 0])
        qy = np.abs(pts[:, 1])
        px = np.zeros_like(qx)
        py = np.zeros_like(qy)
        # generic branch: root of F(t) = (a qx/(t+a^2))^2 + (b qy/(t+b^2))^2 - 1,
        # monotone decreasing in t; nearest point is (a^2 qx/(t+a^2), b^2 qy/(t+b^2))
        gen = (qx > 1e-14) & (qy > 1e-14)
        if np.any(gen):
            gx, gy = qx[gen], qy[gen]
            lo = np.full(gx.shape, -min(a, b) ** 2 * (1.0 - 1e-12))
            hi = np.maximum(a * gx, b * gy) + max(a, b) ** 2
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                f = (a * gx / (mid + a * a)) ** 2 + (b * gy / (mid + b * b)) ** 2 - 1.0
                lo = np.where(f > 0, mid, lo)
                hi = np.where(f > 0, hi, mid)
            t = 0.5 * (lo + hi)
            px[gen] = a * a * gx / (t + a * a)
            py[gen] = b * b * gy / (t + b * b)
        on_x = ~gen & (qy <= 1e-14)
        if np.any(on_x):
            gx = qx[on_x]
            if a > b:
                crit = (a * a - b * b) / a
                xc = np.where(gx >= crit, a, a * a * gx / (a * a - b * b))
            else:
                xc = np.full(gx.shape, a)
            px[on_x] = xc
            py[on_x] = b * np.sqrt(np.maximum(0.0, 1.0 - (xc / a) ** 2))
        on_y = ~gen & (qx <= 1e-14) & (qy > 1e-14)
        if np.any(on_y):
            gy = qy[on_y]
            if b > a:
                crit = (b * b - a * a) / b
                yc = np.where(gy >= crit, b, b * b * gy / (b * b - a * a))
            else:
                yc = np.full(gy.shape, b)
            py[on_y] = yc
            px[on_y] = a * np.sqrt(np.maximum(0.0, 1.0 - (yc / b) ** 2))
        proj = np.stack([sx * px, sy * py], axis=-1)
        grad = np.stack([proj[:, 0] / a**2, proj[:, 1] / b**2], axis=-1)
        gn = np.linalg.norm(grad, axis=-1, keepdims=True)
        gn[gn == 0] = 1.0
        normal = grad / gn
        dist = np.linalg.norm(pts - proj, axis=-1)
        return proj, dist, normal

    def _project_sampled(self, pts):
        bnd = self.boundary_samples(2048)
        d2 = ((pts[:, None, :] - bnd[None, :, :]) ** 2).sum(-1)
        k = np.argmin(d2, axis=1)
        proj = bnd[k]
        # one refinement pass: parabolic fit through the three nearest samples
        km = (k - 1) % len(bnd)
        kp = (k + 1) % len(bnd)
        for idx in range(len(pts)):
            trio = np.array([km[idx], k[idx], kp[idx]])
            cand = bnd[trio]
            dd = ((pts[idx] - cand) ** 2).sum(-1)
            proj[idx] = cand[np.argmin(dd)]
        a, b, p = self.params["a"], self.params["b"], self.params["power"]
        gx = p * np.sign(proj[:, 0]) * np.abs(proj[:, 0] / a) ** (p - 1) / a
        gy = p * np.sign(proj[:, 1]) * np.abs(proj[:, 1] / b) ** (p - 1) / b
        grad = np.stack([gx, gy], axis=-1)
        gn = np.linalg.norm(grad, axis=-1, keepdims=True)
        gn[gn == 0] = 1.0
        dist = np.linalg.norm(pts - proj, axis=-1)
        return proj, dist, grad / gn

    def _project_polygon(self, pts):
        v = self._vertices
        w = np.roll(v, -1, axis=0)
        seg = w - v
        seg_len2 = (seg**2).sum(-1)
        proj = np.empty_like(pts)
        normal = np.empty_like(pts)
        for k, p in enumerate(pts):
            t = np.clip(((p - v) * seg).sum(-1) / seg_len2, 0.0, 1.0)
            cand = v + t[:, None] * seg
            d2 = ((p - cand) ** 2).sum(-1)
            e = int(np.argmin(d2))
            proj[k] = cand[e]
            normal[k] = self._edge_normals[e]
        dist = np.linalg.norm(pts - proj, axis=-1)
        return proj, dist, normal


def _ellipse_constants(a: float, b: float) -> tuple[float, float, float]:
    big, small = max(a, b), min(a, b)
    tangent_r = small * small / big
    modulus = small / big**2
    enclosing = big
    return tangent_r, modulus, enclosing


def build_domain(kind: str, **params) -> ConvexDomain:
    """Validate shape parameters and compute rho and the convexity modulus.

    Parameters
    ----------
    kind : str
        "disc" (radius), "ellipse" (a, b), "square" (side),
        "superellipse" (a, b, power), or "polygon" (vertices).

    Raises
    ------
    DomainError
        On nonpositive sizes, or a non-convex polygon (the message names the
        first offending vertex index).
    """
    if kind == "disc":
        r = float(params.get("radius", 1.0))
        if r <= 0:
            raise DomainError(f"disc radius must be positive, got {r}")
        return ConvexDomain("disc", {"radius": r}, rho=min(r, 1.0 / r), uniform_convexity_modulus=1.0 / r)
    if kind == "ellipse":
        a, b = float(params["a"]), float(params["b"])
        if a <= 0 or b <= 0:
            raise DomainError(f"ellipse semi-axes must be positive, got a={a}, b={b}")
        tangent_r, modulus, enclosing = _ellipse_constants(a, b)
        return ConvexDomain(
            "ellipse", {"a": a, "b": b}, rho=min(tangent_r, 1.0 / enclosing), uniform_convexity_modulus=modulus
        )
    if kind == "square":
        s = float(params["side"])
        if s <= 0:
            raise DomainError(f"square side must be positive, got {s}")
        inradius = 0.5 * s
        circum = 0.5 * s * np.sqrt(2.0)
        return ConvexDomain("square", {"side": s}, rho=min(inradius, 1.0 / circum), uniform_convexity_modulus=0.0)
    if kind == "superellipse":
        a, b = float(params["a"]), float(params["b"])
        p = float(params.get("power", 4.0))
        if a <= 0 or b <= 0 or p < 2.0:
            raise DomainError(f"superellipse needs positive axes and power >= 2, got a={a}, b={b}, power={p}")
        dom = ConvexDomain("superellipse", {"a": a, "b": b, "power": p}, rho=0.0, uniform_convexity_modulus=0.0)
        bnd = dom.boundary_samples(4096)
        # curvature along the sampled boundary via tangent-angle differencing
        t1 = np.roll(bnd, -1, axis=0) - bnd
        ds = np.hypot(t1[:, 0], t1[:, 1])
        ang = np.arctan2(t1[:, 1], t1[:, 0])
        dang = np.diff(np.unwrap(np.concatenate([ang, ang[:1]])))
        curv = np.abs(dang) / np.maximum(ds, 1e-300)
        max_curv = float(np.max(curv))
        min_curv = float(np.min(curv))
        tangent_r = min(1.0 / max_curv, min(a, b))
        enclosing = float(np.max(np.hypot(bnd[:, 0], bnd[:, 1])))
        modulus = 0.0 if p > 2.0 else min_curv
        object.__setattr__(dom, "rho", min(tangent_r, 1.0 / enclosing))
        object.__setattr__(dom, "uniform_convexity_modulus", modulus)
        return dom
    if kind == "polygon":
        v = np.asarray(params["vertices"], dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise DomainError("polygon needs at least 3 vertices of shape (m, 2)")
        area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
        if abs(area2) < 1e-14:
            raise DomainError("polygon is degenerate (zero area)")
        if area2 < 0:
            v = v[::-1].copy()
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
        bad = np.nonzero(cross < -1e-12 * np.max(np.abs(v)))[0]
        if bad.size:
            k = int((bad[0] + 1) % len(v))
            raise DomainError(f"polygon is not convex at vertex index {k}")
        normals = np.stack([e[:, 1], -e[:, 0]], axis=-1)
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
        offsets = (normals * v).sum(-1)
        centroid = v.mean(axis=0)
        from scipy.optimize import linprog

        res = linprog(
            c=[0.0, 0.0, -1.0],
            A_ub=np.column_stack([normals, np.ones(len(v))]),
            b_ub=offsets,
            bounds=[(None, None), (None, None), (0, None)],
            method="highs",
        )
        inradius = float(res.x[2]) if res.success else float(np.min(offsets - normals @ centroid))
        circum = float(np.max(np.hypot(v[:, 0], v[:, 1])))
        return ConvexDomain(
            "polygon",
            {"vertices": v},
            rho=min(inradius, 1.0 / circum),
            uniform_convexity_modulus=0.0,
            _vertices=v,
            _edge_normals=normals,
            _edge_offsets=offsets,
        )
    raise DomainError(f"unknown domain kind {kind!r}")


# ---------------------------------------------------------------------------
# grids and masks
# ---------------------------------------------------------------------------


@dataclass
class Grid:
    """Uniform tensor grid over the domain's bounding box.

    Masks partition all nodes: exterior (outside the closed domain),
    boundary_adjacent (inside, but some 8-neighbor is exterior or off the
    array), interior (inside with the full 8-neighborhood inside).
    values[i, j] lives at (xs[i], ys[j]); cell_area = spacing**2.
    """

    domain: ConvexDomain
    spacing: float
    bounds: tuple[float, float, float, float]
    xs: np.ndarray
    ys: np.ndarray
    in_domain: np.ndarray
    interior: np.ndarray
    boundary_adjacent: np.ndarray

    @property
    def exterior(self) -> np.ndarray:
        return ~self.in_domain

    @property
    def cell_area(self) -> float:
        return self.spacing * self.spacing

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.xs), len(self.ys))

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def points(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        if mask is None:
            mask = self.in_domain
        X, Y = self.meshes()
        return np.stack([X[mask], Y[mask]], axis=-1)

    def nearest_node(self, p) -> tuple[int, int]:
        i = int(round((p[0] - self.xs[0]) / self.spacing))
        j = int(round((p[1] - self.ys[0]) / self.spacing))
        return (min(max(i, 0), len(self.xs) - 1), min(max(j, 0), len(self.ys) - 1))

    def interp(self, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of node values at arbitrary points.

        Cells touching exterior nodes carry NaN corners; sampling them yields
        NaN, which callers must either avoid or handle. Points outside the
        node lattice are NaN as well: bilinear weights are never extrapolated.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        h = self.spacing
        fx = (pts[:, 0] - self.xs[0]) / h
        fy = (pts[:, 1] - self.ys[0]) / h
        inside = (fx >= 0) & (fx <= len(self.xs) - 1) & (fy >= 0) & (fy <= len(self.ys) - 1)
        i = np.clip(np.floor(fx).astype(int), 0, len(self.xs) - 2)
        j = np.clip(np.floor(fy).astype(int), 0, len(self.ys) - 2)
        tx = fx - i
        ty = fy - j
        v00 = values[i, j]
        v10 = values[i + 1, j]
        v01 = values[i, j + 1]
        v11 = values[i + 1, j + 1]
        out = (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 + (1 - tx) * ty * v01 + tx * ty * v11
        return np.where(inside, out, np.nan)


def discretize(domain: ConvexDomain, spacing: float) -> Grid:
    """Build the grid and its masks for a domain at the given spacing.

    Raises
    ------
    GridError
        If spacing >= rho/4, or the grid ends up with fewer than 16 interior
        nodes (spacing too coarse).
    """
    if spacing <= 0:
        raise GridError(f"spacing must be positive, got {spacing}")
    if domain.rho > 0 and spacing >= domain.rho / 4.0:
        import warnings

        warnings.warn(
            f"spacing {spacing} is not below rho/4 = {domain.rho / 4.0:.6g}; "
            "near-boundary stencils may degrade",
            stacklevel=2,
        )
    x0, x1, y0, y1 = domain.bbox()
    nx = int(np.ceil((x1 - x0) / spacing - 1e-12)) + 1
    ny = int(np.ceil((y1 - y0) / spacing - 1e-12)) + 1
    xs = x0 + spacing * np.arange(nx)
    ys = y0 + spacing * np.arange(ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    inside = domain.contains(pts)
    padded = np.zeros((nx + 2, ny + 2), dtype=bool)
    padded[1:-1, 1:-1] = inside
    has_exterior_neighbor = np.zeros((nx, ny), dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            has_exterior_neighbor |= ~padded[1 + di : nx + 1 + di, 1 + dj : ny + 1 + dj]
    ring = inside & has_exterior_neighbor
    interior = inside & ~ring
    n_int = int(interior.sum())
    if n_int < 16:
        raise GridError(f"spacing too coarse: only {n_int} interior nodes (< 16)")
    return Grid(
        domain=domain,
        spacing=spacing,
        bounds=(x0, x1, y0, y1),
        xs=xs,
        ys=ys,
        in_domain=inside,
        interior=interior,
        boundary_adjacent=ring,
    )


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise FieldError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "ScalarField":
        X, Y = grid.meshes()
        vals = np.asarray(fn(X, Y), dtype=float) + np.zeros(grid.shape)
        vals = np.where(grid.in_domain, vals, np.nan)
        return cls(grid, vals)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    grid: Grid
    gx: np.ndarray
    gy: np.ndarray
    quadratic_exact: Optional[np.ndarray] = None

    def at(self, i: int, j: int) -> np.ndarray:
        return np.array([self.gx[i, j], self.gy[i, j]])


@dataclass
class MatrixField:
    """Symmetric 2x2 matrix field stored as the three entries xx, yy, xy."""

    grid: Grid
    xx: np.ndarray
    yy: np.ndarray
    xy: np.ndarray
    quadratic_exact: Optional[np.ndarray] = None

    def at(self, i: int, j: int) -> np.ndarray:
        return np.array([[self.xx[i, j], self.xy[i, j]], [self.xy[i, j], self.yy[i, j]]])

    def det(self) -> np.ndarray:
        return self.xx * self.yy - self.xy * self.xy

    def trace(self) -> np.ndarray:
        return self.xx + self.yy

    def eig_min(self) -> np.ndarray:
        mean = 0.5 * (self.xx + self.yy)
        rad = np.sqrt(np.maximum(0.25 * (self.xx - self.yy) ** 2 + self.xy**2, 0.0))
        return mean - rad


def _shift(a: np.ndarray, di: int, dj: int, fill=np.nan) -> np.ndarray:
    out = np.full_like(a, fill)
    nx, ny = a.shape
    src_i = slice(max(di, 0), nx + min(di, 0))
    dst_i = slice(max(-di, 0), nx + min(-di, 0))
    src_j = slice(max(dj, 0), ny + min(dj, 0))
    dst_j = slice(max(-dj, 0), ny + min(-dj, 0))
    out[dst_i, dst_j] = a[src_i, src_j]
    return out


def fd_derivatives(fld: ScalarField) -> tuple[VectorField, MatrixField]:
    """Gradient and symmetric Hessian by finite differences.

    Central stencils at interior nodes; one-sided three-point stencils at
    boundary-adjacent nodes (exact on quadratics); the cross term uses the
    four-corner formula where available, otherwise the first fully in-domain
    2x2 corner block. Exterior nodes stay NaN.
    """
    g = fld.grid
    h = g.spacing
    v = np.where(g.in_domain, fld.values, np.nan)
    ok = g.in_domain

    def sh(di, dj):
        return _shift(v, di, dj)

    def shok(di, dj):
        return _shift(ok, di, dj, fill=False)

    E, W = sh(1, 0), sh(-1, 0)
    N, S = sh(0, 1), sh(0, -1)
    EE, WW = sh(2, 0), sh(-2, 0)
    NN, SS = sh(0, 2), sh(0, -2)
    okE, okW, okN, okS = shok(1, 0), shok(-1, 0), shok(0, 1), shok(0, -1)
    okEE, okWW, okNN, okSS = shok(2, 0), shok(-2, 0), shok(0, 2), shok(0, -2)

    def first_deriv(plus, minus, plus2, minus2, okp, okm, okp2, okm2):
        central = (plus - minus) / (2 * h)
        fwd3 = (-3 * v + 4 * plus - plus2) / (2 * h)
        bwd3 = (3 * v - 4 * minus + minus2) / (2 * h)
        fwd2 = (plus - v) / h
        bwd2 = (v - minus) / h
        out = np.zeros_like(v)
        out = np.where(okm & ~okp & ~okm2, bwd2, out)
        out = np.where(okp & ~okm & ~okp2, fwd2, out)
        out = np.where(okm & okm2 & ~okp, bwd3, out)
        out = np.where(okp & okp2 & ~okm, fwd3, out)
        out = np.where(okp & okm, central, out)
        exact = (okp & okm) | (okp & okp2) | (okm & okm2)
        return np.where(ok, out, np.nan), exact

    gx, gx_exact = first_deriv(E, W, EE, WW, okE, okW, okEE, okWW)
    gy, gy_exact = first_deriv(N, S, NN, SS, okN, okS, okNN, okSS)

    def second_deriv(plus, minus, plus2, minus2, okp, okm, okp2, okm2):
        central = (plus - 2 * v + minus) / (h * h)
        fwd = (v - 2 * plus + plus2) / (h * h)
        bwd = (v - 2 * minus + minus2) / (h * h)
        out = np.zeros_like(v)
        out = np.where(okm & okm2 & ~okp, bwd, out)
        out = np.where(okp & okp2 & ~okm, fwd, out)
        out = np.where(okp & okm, central, out)
        exact = (okp & okm) | (okp & okp2) | (okm & okm2)
        return np.where(ok, out, np.nan), exact

    hxx, hxx_exact = second_deriv(E, W, EE, WW, okE, okW, okEE, okWW)
    hyy, hyy_exact = second_deriv(N, S, NN, SS, okN, okS, okNN, okSS)

    NE_v, NW_v = sh(1, 1), sh(-1, 1)
    SE_v, SW_v = sh(1, -1), sh(-1, -1)
    okNE, okNW = shok(1, 1), shok(-1, 1)
    okSE, okSW = shok(1, -1), shok(-1, -1)
    central_x = (NE_v + SW_v - NW_v - SE_v) / (4 * h * h)
    blk_pp = (NE_v - E - N + v) / (h * h)
    blk_mm = (SW_v - W - S + v) / (h * h)
    blk_pm = -(SE_v - E - S + v) / (h * h)
    blk_mp = -(NW_v - W - N + v) / (h * h)
    hxy = np.zeros_like(v)
    hxy = np.where(okW & okN & okNW, blk_mp, hxy)
    hxy = np.where(okE & okS & okSE, blk_pm, hxy)
    hxy = np.where(okW & okS & okSW, blk_mm, hxy)
    hxy = np.where(okE & okN & okNE, blk_pp, hxy)
    hxy = np.where(okNE & okNW & okSE & okSW, central_x, hxy)
    hxy = np.where(ok, hxy, np.nan)
    hxy_exact = (
        (okNE & okNW & okSE & okSW)
        | (okE & okN & okNE)
        | (okW & okS & okSW)
        | (okE & okS & okSE)
        | (okW & okN & okNW)
    )

    grad_exact = ok & gx_exact & gy_exact
    hess_exact = ok & hxx_exact & hyy_exact & hxy_exact
    return (
        VectorField(g, gx, gy, quadratic_exact=grad_exact),
        MatrixField(g, hxx, hyy, hxy, quadratic_exact=hess_exact),
    )


# ---------------------------------------------------------------------------
# norms and export
# ---------------------------------------------------------------------------


def lp_norm(fld, p: float, region: Optional[np.ndarray] = None) -> float:
    """Riemann-sum L^p norm over a node region (default: all in-domain nodes).

    p = inf gives the max norm. 0 < p < 1 is accepted and computed by the same
    formula (a quasi-norm, used by the small-exponent experiments).
    """
    if isinstance(fld, ScalarField):
        grid, values = fld.grid, fld.values
    else:
        grid, values = fld
    if region is None:
        region = grid.in_domain
    if not np.any(region):
        raise FieldError("lp_norm over an empty region")
    vals = values[region]
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise FieldError("lp_norm region holds no finite values")
    if np.isinf(p):
        return float(np.max(np.abs(vals)))
    if p <= 0:
        raise FieldError(f"p must be positive, got {p}")
    return float((np.abs(vals) ** p).sum() * grid.cell_area) ** (1.0 / p)


def fmt_float(x) -> str:
    """Shortest round-trip decimal form, used for deterministic CSV output."""
    return repr(float(x))


def write_field_csv(fld: ScalarField, path: str, mask: Optional[np.ndarray] = None) -> None:
    """Write (x, y, value) rows for masked nodes in row-major node order."""
    g = fld.grid
    if mask is None:
        mask = g.in_domain
    X, Y = g.meshes()
    lines = ["x,y,value"]
    idx = np.argwhere(mask)
    for i, j in idx:
        lines.append(f"{fmt_float(X[i, j])},{fmt_float(Y[i, j])},{fmt_float(fld.values[i, j])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
