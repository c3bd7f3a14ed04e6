"""Nine-point non-divergence solver for trace(Phi D^2 u) = f.

Phi is a cofactor coefficient field (from ma_solve) or any symmetric positive
coefficient field. No upwinding is applied: in the pinched-density regime the
cross term is small next to the diagonal, which keeps the stencil close to an
M-matrix; monotonicity is not guaranteed far from that regime and the maximum
principle is checked empirically by the tests rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .domain_grid import FieldError, Grid, MatrixField, ScalarField, VectorField, fd_derivatives, lp_norm
from .ma_solve import CofactorField, NodeSystem, PotentialField, SolveError, _coerce_datum, _coerce_samples, cofactor_field, linear_solve


@dataclass
class LmaSolution:
    grid: Grid
    u: ScalarField
    grad: VectorField
    hess: MatrixField
    f_values: np.ndarray
    residual_max: float


@dataclass
class AbpReport:
    """Scale-invariant ratio ||u||_inf / (diam * ||f||_{L^2}) for a solve."""

    ratio: float
    u_inf: float
    f_l2: float
    diam: float


def identity_coefficients(grid: Grid) -> CofactorField:
    """Coefficient field Phi = I, for manufactured-solution checks."""
    ones = np.ones(grid.shape)
    return CofactorField(grid=grid, xx=ones, yy=ones.copy(), xy=np.zeros(grid.shape))


def solve_lma(
    operator: Union[CofactorField, PotentialField],
    f,
    boundary=0.0,
    tol_lma: float = 1e-8,
) -> LmaSolution:
    """Solve trace(Phi D^2 u) = f with Dirichlet datum `boundary`.

    Raises
    ------
    SolveError
        If the assembled system is singular (the smallest pivot is reported).
    """
    cof = cofactor_field(operator) if isinstance(operator, PotentialField) else operator
    grid = cof.grid
    f_vals = _coerce_samples(grid, f)
    datum = _coerce_datum(boundary)
    sysm = NodeSystem(grid, datum)
    c11 = cof.xx[grid.interior]
    c22 = cof.yy[grid.interior]
    c12 = cof.xy[grid.interior]
    if np.any(~np.isfinite(c11)) or np.any(~np.isfinite(c22)) or np.any(~np.isfinite(c12)):
        raise SolveError("coefficient field holds non-finite interior values")
    A = sysm.interior_matrix(c11, c22, c12)
    rhs = np.zeros(sysm.n)
    rhs[sysm.int_rows] = f_vals[grid.interior]
    rhs[sysm.ring_rows] = sysm.ring_rhs
    U = linear_solve(A, rhs)
    resid = A @ U - rhs
    residual_max = float(np.max(np.abs(resid[sysm.int_rows]))) if len(sysm.int_rows) else 0.0
    if residual_max > max(tol_lma, 1e-9 * max(1.0, float(np.max(np.abs(rhs))))):
        raise SolveError(f"linear solve residual {residual_max:.3e} above tolerance {tol_lma:.3e}")
    vals = sysm.to_grid_values(U)
    u = ScalarField(grid, vals)
    grad, hess = fd_derivatives(u)
    return LmaSolution(grid=grid, u=u, grad=grad, hess=hess, f_values=f_vals, residual_max=residual_max)


def operator_apply(cof: CofactorField, u: ScalarField) -> np.ndarray:
    """Node-wise trace(Phi D^2 u) from the discrete Hessian of u."""
    _, hess = fd_derivatives(u)
    return cof.xx * hess.xx + cof.yy * hess.yy + 2.0 * cof.xy * hess.xy


def abp_check(solution: LmaSolution, domain_diameter: Optional[float] = None) -> AbpReport:
    """Measure the scale-invariant maximum-principle ratio of a solve.

    R = ||u||_inf / (diam * ||f||_{L^2}); dimension 2 fixes the f-norm
    exponent. A vanishing f forces a vanishing solution under zero boundary
    data, so that case reports R = 0; a vanishing f under a nonzero solution
    has no finite ratio and raises FieldError.
    """
    grid = solution.grid
    f_fld = ScalarField(grid, np.where(grid.in_domain, solution.f_values, np.nan))
    f_l2 = lp_norm(f_fld, 2.0)
    u_inf = lp_norm(solution.u, np.inf)
    diam = grid.domain.diameter() if domain_diameter is None else float(domain_diameter)
    if f_l2 == 0.0:
        if u_inf <= 1e-12:
            return AbpReport(ratio=0.0, u_inf=u_inf, f_l2=f_l2, diam=diam)
        raise FieldError("ABP ratio undefined: f vanishes but the solution does not")
    return AbpReport(ratio=u_inf / (diam * f_l2), u_inf=u_inf, f_l2=f_l2, diam=diam)
