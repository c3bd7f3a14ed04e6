"""Explicit boundary supersolutions and boundary Hoelder moduli.

The supersolution lives on the patch of the domain within delta of a boundary
point, in the affine frame that puts that point at the origin with the inner
normal along the second axis. Its closed form combines the normalized
potential with a linear lift minus two quadratic penalties; the verifier
checks the three defining inequalities node-wise and on sampled boundary
pieces.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain_grid import Grid, ScalarField, fd_derivatives
from .ma_solve import PotentialField, cofactor_field
from .lma_solve import operator_apply
from .section_geom import BoundaryFrame, boundary_frame, frame_gap, phi_extended, _gradient_at


class BarrierError(ValueError):
    pass


@dataclass
class BarrierReport:
    threshold: float
    interior_max: float
    interior_min: float
    n_interior: int
    boundary_min: float
    n_boundary: int
    boundary_tol: float
    circle_min: float
    n_circle: int
    circle_tol: float
    delta_tilde: float
    interior_passed: bool
    boundary_passed: bool
    circle_passed: bool

    @property
    def passed(self) -> bool:
        return self.interior_passed and self.boundary_passed and self.circle_passed


@dataclass
class Barrier:
    delta: float
    delta_tilde: float
    M_delta: float
    K: float
    lam: float
    Lam: float
    n: int
    frame: BoundaryFrame
    w: ScalarField
    mask: np.ndarray
    report: Optional[BarrierReport] = field(default=None, repr=False)


def _barrier_coefficients(lam: float, Lam: float, delta: float, n: int) -> tuple[float, float, float]:
    delta_tilde = delta ** 3 / 2.0
    M_delta = (2.0 ** (n - 1) * Lam ** n / lam ** (n - 1)) * delta ** (-(3 * n - 3))
    K = Lam ** n / (lam * delta_tilde) ** (n - 1)
    return delta_tilde, M_delta, K


def build_supersolution(
    potential: PotentialField,
    frame,
    lam: Optional[float] = None,
    Lam: Optional[float] = None,
    delta: float = 0.5,
    n: int = 2,
) -> Barrier:
    """Assemble the explicit supersolution on the boundary patch of radius delta.

    `frame` is the affine normalization at a boundary point (a point is also
    accepted and normalized here). The potential must genuinely be normalized
    by that frame: the frame's stored tangent data has to match the potential
    at the origin, and the origin has to lie on the boundary. The field is
    evaluated on every in-domain node so that difference stencils at the edge
    of the patch still see real values; `mask` marks the patch itself.
    """
    grid = potential.grid
    if lam is None:
        lam = potential.lam
    if Lam is None:
        Lam = potential.Lam
    if not (0.0 < lam <= Lam):
        raise BarrierError(f"need 0 < lam <= Lam, got lam={lam}, Lam={Lam}")
    rho = grid.domain.rho
    if not (0.0 < delta <= rho):
        raise BarrierError(f"delta must lie in (0, rho]; got delta={delta}, rho={rho}")

    if not isinstance(frame, BoundaryFrame):
        frame = boundary_frame(potential, frame)
    proj, dist, _ = grid.domain.project_boundary(frame.origin)
    if dist[0] > 1e-9:
        raise BarrierError(
            f"normalization not applied: frame origin lies {dist[0]:.3g} away from the boundary"
        )
    datum_here = float(np.atleast_1d(potential.boundary_datum(frame.origin[None, :]))[0])
    grad_here = _gradient_at(potential, frame.origin)
    if abs(datum_here - frame.phi_origin) > 1e-9 or np.max(np.abs(grad_here - frame.gradient_origin)) > 1e-9:
        raise BarrierError(
            "normalization not applied: frame tangent data does not match the potential at the origin"
        )

    delta_tilde, M_delta, K = _barrier_coefficients(lam, Lam, delta, n)
    X, Y = grid.meshes()
    dx = X - frame.origin[0]
    dy = Y - frame.origin[1]
    R = frame.rotation
    y1 = R[0, 0] * dx + R[0, 1] * dy
    y2 = R[1, 0] * dx + R[1, 1] * dy
    gap = frame_gap(potential, frame)
    w_vals = M_delta * y2 + gap - delta_tilde * y1 ** 2 - K * y2 ** 2
    mask = grid.in_domain & (y1 ** 2 + y2 ** 2 < delta ** 2)
    return Barrier(
        delta=float(delta),
        delta_tilde=delta_tilde,
        M_delta=M_delta,
        K=K,
        lam=float(lam),
        Lam=float(Lam),
        n=n,
        frame=frame,
        w=ScalarField(grid, w_vals),
        mask=mask,
    )


def verify_supersolution(
    barrier: Barrier,
    potential: PotentialField,
    tol_factor: float = 0.1,
    n_boundary_samples: int = 256,
) -> BarrierReport:
    """Check the three supersolution inequalities on the barrier patch.

    Interior: the linearized operator applied to w stays below -n*Lam plus a
    discretization allowance of tol_factor times n*Lam. Domain boundary part:
    w >= 0, evaluated exactly through the boundary datum. Patch circle part:
    w >= delta**3/2 up to an interpolation allowance proportional to the
    squared spacing.
    """
    grid = potential.grid
    if barrier.w.grid is not grid:
        raise BarrierError("barrier was built on a different grid")
    frame = barrier.frame

    L = operator_apply(cofactor_field(potential), barrier.w)
    nodes = grid.interior & barrier.mask
    if not nodes.any():
        raise BarrierError("barrier patch contains no interior nodes; refine the grid or enlarge delta")
    interior_max = float(np.max(L[nodes]))
    interior_min = float(np.min(L[nodes]))
    threshold = -barrier.n * barrier.Lam * (1.0 - tol_factor)

    def w_at(pts: np.ndarray, phi_vals: np.ndarray) -> np.ndarray:
        d = pts - frame.origin
        ys = d @ frame.rotation.T
        gap = phi_vals - frame.phi_origin - d @ frame.gradient_origin
        return (
            barrier.M_delta * ys[:, 1]
            + gap
            - barrier.delta_tilde * ys[:, 0] ** 2
            - barrier.K * ys[:, 1] ** 2
        )

    bpts = grid.domain.boundary_samples(n_boundary_samples)
    bpts = np.vstack([frame.origin[None, :], bpts])
    ys = frame.to_frame(bpts)
    keep = (ys ** 2).sum(axis=1) <= barrier.delta ** 2
    bpts = bpts[keep]
    wb = w_at(bpts, np.asarray(potential.boundary_datum(bpts), dtype=float))
    boundary_min = float(wb.min())
    boundary_tol = 1e-9 * (1.0 + barrier.M_delta * barrier.delta)

    theta = np.linspace(0.0, 2.0 * np.pi, n_boundary_samples, endpoint=False)
    circ = frame.from_frame(
        np.stack([barrier.delta * np.cos(theta), barrier.delta * np.sin(theta)], axis=-1)
    )
    phi_c = phi_extended(potential, circ)
    ok = np.isfinite(phi_c)
    n_circle = int(ok.sum())
    if n_circle:
        wc = w_at(circ[ok], phi_c[ok])
        circle_min = float(wc.min())
    else:
        circle_min = np.inf
    hess = potential.hess
    hmax = float(
        max(np.nanmax(np.abs(hess.xx)), np.nanmax(np.abs(hess.yy)), np.nanmax(np.abs(hess.xy)))
    )
    circle_tol = grid.spacing ** 2 * (hmax + 2.0 * barrier.delta_tilde + 2.0 * barrier.K)

    report = BarrierReport(
        threshold=threshold,
        interior_max=interior_max,
        interior_min=interior_min,
        n_interior=int(nodes.sum()),
        boundary_min=boundary_min,
        n_boundary=int(bpts.shape[0]),
        boundary_tol=boundary_tol,
        circle_min=circle_min,
        n_circle=n_circle,
        circle_tol=circle_tol,
        delta_tilde=barrier.delta_tilde,
        interior_passed=interior_max <= threshold,
        boundary_passed=boundary_min >= -boundary_tol,
        circle_passed=circle_min >= barrier.delta_tilde - circle_tol,
    )
    barrier.report = report
    return report


@dataclass
class HolderFit:
    exponent: float
    scale: float
    radii: np.ndarray
    moduli: np.ndarray
    passed: bool


def boundary_holder_modulus(
    u: ScalarField,
    x0,
    radius: float,
    u0: Optional[float] = None,
    n_angles: int = 720,
    min_radii: int = 4,
) -> HolderFit:
    """Fitted growth exponent of sup|u - u(x0)| on circles around a boundary point.

    Radii halve from `radius` down to two grid cells; each circle is sampled
    at n_angles angles and only in-domain samples count. When u0 is not given
    it is extended from the nearest in-domain node by a first-order Taylor
    step, which is exact for affine fields.
    """
    grid = u.grid
    p = np.asarray(x0, dtype=float)
    proj, _, _ = grid.domain.project_boundary(p)
    p = proj[0]

    if u0 is None:
        idx = grid.nearest_node(p)
        grad, _ = fd_derivatives(u)
        step = p - np.array([grid.xs[idx[0]], grid.ys[idx[1]]])
        u0 = float(u.values[idx] + grad.gx[idx] * step[0] + grad.gy[idx] * step[1])

    theta = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    omega = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    radii = []
    moduli = []
    r = float(radius)
    while r >= 2.0 * grid.spacing:
        vals = grid.interp(u.values, p[None, :] + r * omega)
        fin = np.isfinite(vals)
        if fin.any():
            radii.append(r)
            moduli.append(float(np.max(np.abs(vals[fin] - u0))))
        r *= 0.5
    if len(radii) < min_radii:
        raise BarrierError(
            f"only {len(radii)} dyadic radii are resolvable at spacing {grid.spacing}; "
            f"need {min_radii} (enlarge radius or refine the grid)"
        )
    radii = np.array(radii)
    moduli = np.array(moduli)
    pos = moduli > 0
    if pos.sum() < min_radii:
        raise BarrierError("modulus vanishes on too many circles to fit an exponent")
    slope, intercept = np.polyfit(np.log(radii[pos]), np.log(moduli[pos]), 1)
    return HolderFit(
        exponent=float(slope),
        scale=float(np.exp(intercept)),
        radii=radii,
        moduli=moduli,
        passed=slope > 0,
    )
