"""Rosenbluth potentials and collision coefficients.

The potentials solve the cascaded Poisson problems

    lap H = -8 pi f,    lap G = H,

on the cylindrical (v_perp, v_par) grid with a second-order 5-point stencil.
Dirichlet ghost values come from two-term (monopole + quadrupole) far-field
multipole expansions evaluated at ghost centers in the frame c = v - u:

    H_ghost = 2 n / c + 2 (c_par^2 - c_perp^2/2) / c^5 * Q,
    G_ghost = n c + M_perp / c + c_perp^2 / (2 c^3) * Q.

The diffusion tensor D = hess(G) uses centered second differences (cross
term from the 4-point corner stencil) and the friction A = grad(H) is taken
directly at faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import aniso
from .errors import LinearSolverError
from .mesh import GridSpec, maxwellian_values

EIGHT_PI = 8.0 * np.pi


@dataclass
class MultipoleMoments:
    """Moments of f in the shifted frame c = v - u_ref."""

    n: float
    m_perp: float
    q: float
    u_ref: float


@dataclass
class PotentialPair:
    """Potentials with one populated ghost layer each, plus solve residuals."""

    H: np.ndarray  # (n1+2, n2+2)
    G: np.ndarray
    residual_H: float
    residual_G: float


@dataclass
class CoefficientSet:
    """Cell-centered tensor components and the face/center values the RFP
    discretization consumes. Face arrays cover interior faces only; boundary
    faces carry no flux."""

    grid: GridSpec
    D_pp: np.ndarray  # (n1, n2) cell centers
    D_pl: np.ndarray
    D_ll: np.ndarray
    A_perp_f1: np.ndarray  # (n1-1, n2) direction-1 interior faces
    A_par_f2: np.ndarray  # (n1, n2-1) direction-2 interior faces
    D_pp_f1: np.ndarray = field(init=False)
    D_pl_f1: np.ndarray = field(init=False)
    D_ll_f2: np.ndarray = field(init=False)
    D_pl_f2: np.ndarray = field(init=False)
    lam1: np.ndarray = field(init=False)
    lam2: np.ndarray = field(init=False)

    def __post_init__(self):
        # arithmetic face averages; tensors may be exactly singular, so no
        # harmonic averaging
        self.D_pp_f1 = 0.5 * (self.D_pp[:-1, :] + self.D_pp[1:, :])
        self.D_pl_f1 = 0.5 * (self.D_pl[:-1, :] + self.D_pl[1:, :])
        self.D_ll_f2 = 0.5 * (self.D_ll[:, :-1] + self.D_ll[:, 1:])
        self.D_pl_f2 = 0.5 * (self.D_pl[:, :-1] + self.D_pl[:, 1:])
        self.lam1, self.lam2, _ = aniso.eigen_decompose(self.D_pp, self.D_pl, self.D_ll)

    def scaled(self, factor):
        """Coefficient set multiplied by a constant collision prefactor."""
        return CoefficientSet(
            self.grid,
            factor * self.D_pp,
            factor * self.D_pl,
            factor * self.D_ll,
            factor * self.A_perp_f1,
            factor * self.A_par_f2,
        )


def multipole_moments(f_values, u_ref, grid):
    """Quadrature moments n, M_perp = <f c_perp^2/2>, Q = <f (c_par^2 - c_perp^2/2)>."""
    f = np.asarray(f_values, dtype=float)
    vol = grid.cell_vol
    c1, c2 = grid.mesh_centers()
    cpar = c2 - u_ref
    n = float(np.sum(f * vol))
    m_perp = float(np.sum(f * 0.5 * c1 * c1 * vol))
    q = float(np.sum(f * (cpar * cpar - 0.5 * c1 * c1) * vol))
    return MultipoleMoments(n, m_perp, q, float(u_ref))


def ghost_potentials(mom, c_perp, c_par):
    """Far-field multipole H and G values at points (c_perp, c_par)."""
    c2 = c_perp * c_perp + c_par * c_par
    c = np.sqrt(c2)
    assert np.all(c > 0.0), "ghost points must not coincide with the drift"
    quad = c_par * c_par - 0.5 * c_perp * c_perp
    H = 2.0 * mom.n / c + 2.0 * quad / c**5 * mom.q
    G = mom.n * c + mom.m_perp / c + 0.5 * c_perp * c_perp / c**3 * mom.q
    return H, G


def _ghost_coords(grid):
    g1 = np.concatenate(([grid.centers1[0] - grid.d1], grid.centers1, [grid.centers1[-1] + grid.d1]))
    g2 = np.concatenate(([grid.centers2[0] - grid.d2], grid.centers2, [grid.centers2[-1] + grid.d2]))
    return g1, g2


def poisson_matrix(grid):
    """Cylindrical 5-point Laplacian, ghost values eliminated to the RHS.

    At the axis the v_perp = 0 face weight vanishes, enforcing regularity
    with no special-casing; the remaining three boundaries are Dirichlet
    through ghost cells.
    """
    n1, n2 = grid.shape
    dvp, dvl = grid.d1, grid.d2
    vp = grid.centers1
    vf = grid.faces1
    idx = np.arange(n1 * n2).reshape(n1, n2)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.broadcast_to(r, np.broadcast_shapes(r.shape, np.shape(v))).ravel())
        cols.append(np.broadcast_to(c, np.broadcast_shapes(c.shape, np.shape(v))).ravel())
        vals.append(np.broadcast_to(v, np.broadcast_shapes(r.shape, np.shape(v))).ravel().astype(float))

    # perpendicular couplings: coefficient v_{i+1/2}/(v_i dv^2)
    cp = (vf[1:] / vp / dvp**2)[:, None]  # i+1/2 face of cell i
    cm = (vf[:-1] / vp / dvp**2)[:, None]  # i-1/2 face
    add(idx[:-1, :], idx[1:, :], np.broadcast_to(cp[:-1], (n1 - 1, n2)))
    add(idx[1:, :], idx[:-1, :], np.broadcast_to(cm[1:], (n1 - 1, n2)))
    add(idx, idx, np.broadcast_to(-(cp + cm), (n1, n2)))
    # parallel couplings
    cl = 1.0 / dvl**2
    add(idx[:, :-1], idx[:, 1:], np.full((n1, n2 - 1), cl))
    add(idx[:, 1:], idx[:, :-1], np.full((n1, n2 - 1), cl))
    add(idx, idx, np.full((n1, n2), -2.0 * cl))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n1 * n2, n1 * n2))


class PoissonSolver:
    """Factorized cylindrical Poisson operator, reused across timesteps."""

    def __init__(self, grid):
        self.grid = grid
        self.A = poisson_matrix(grid).tocsc()
        self.lu = spla.splu(self.A)

    def solve(self, source, ghost_row_hi, ghost_col_lo, ghost_col_hi, lin_tol=1e-12):
        """Solve lap u = source with Dirichlet ghosts on the three far sides."""
        grid = self.grid
        n1, n2 = grid.shape
        rhs = np.array(source, dtype=float)
        vf = grid.faces1
        vp = grid.centers1
        rhs[-1, :] -= (vf[-1] / vp[-1] / grid.d1**2) * ghost_row_hi
        rhs[:, 0] -= ghost_col_lo / grid.d2**2
        rhs[:, -1] -= ghost_col_hi / grid.d2**2
        b = rhs.ravel()
        x = self.lu.solve(b)
        x = x + self.lu.solve(b - self.A @ x)  # one refinement pass
        res = float(np.linalg.norm(self.A @ x - b))
        bnorm = float(np.linalg.norm(b))
        if bnorm > 0 and res > lin_tol * bnorm:
            raise LinearSolverError(
                f"Poisson residual {res:.3e} exceeds {lin_tol:.1e} * |rhs|", residual=res
            )
        return x.reshape(n1, n2), res / max(bnorm, 1e-300)


def solve_potentials(f_values, grid, lin_tol=1e-12, u_ref=None, moments_override=None,
                     solver=None):
    """Solve for H then G, returning padded arrays with multipole ghosts.

    ``u_ref`` defaults to the instantaneous drift of f. An explicit
    ``moments_override`` replaces the quadrature multipole moments; the
    linearized tests use this when the analytic background moments are known
    (a narrow velocity window may not even contain the background bulk).
    """
    f = np.asarray(f_values, dtype=float)
    if u_ref is None:
        vol = grid.cell_vol
        c2 = grid.mesh_centers()[1]
        mass = float(np.sum(f * vol))
        u_ref = float(np.sum(c2 * f * vol)) / mass if mass > 0 else 0.0
    mom = moments_override or multipole_moments(f, u_ref, grid)
    g1, g2 = _ghost_coords(grid)
    cpar = g2 - mom.u_ref
    Hg, Gg = ghost_potentials(mom, np.abs(g1)[:, None], cpar[None, :])

    solver = solver or PoissonSolver(grid)
    H, res_h = solver.solve(-EIGHT_PI * f, Hg[-1, 1:-1], Hg[1:-1, 0], Hg[1:-1, -1], lin_tol)
    G, res_g = solver.solve(H, Gg[-1, 1:-1], Gg[1:-1, 0], Gg[1:-1, -1], lin_tol)

    Hp, Gp = Hg, Gg  # ghost template already holds multipole values
    Hp[1:-1, 1:-1] = H
    Gp[1:-1, 1:-1] = G
    # axis ghosts: fields are even in v_perp
    Hp[0, :] = Hp[1, :]
    Gp[0, :] = Gp[1, :]
    return PotentialPair(Hp, Gp, res_h, res_g)


def coefficients(pot, grid):
    """Diffusion tensor and friction vector from the padded potentials.

    D_pp, D_ll by centered second differences of G, D_pl by the 4-point
    cross stencil, A components by first differences of H at interior faces.
    """
    G, H = pot.G, pot.H
    dvp, dvl = grid.d1, grid.d2
    D_pp = (G[2:, 1:-1] - 2.0 * G[1:-1, 1:-1] + G[:-2, 1:-1]) / dvp**2
    D_ll = (G[1:-1, 2:] - 2.0 * G[1:-1, 1:-1] + G[1:-1, :-2]) / dvl**2
    D_pl = (G[2:, 2:] - G[2:, :-2] - G[:-2, 2:] + G[:-2, :-2]) / (4.0 * dvp * dvl)
    A_perp_f1 = (H[2:-1, 1:-1] - H[1:-2, 1:-1]) / dvp
    A_par_f2 = (H[1:-1, 2:-1] - H[1:-1, 1:-2]) / dvl
    return CoefficientSet(grid, D_pp, D_pl, D_ll, A_perp_f1, A_par_f2)


def background_coefficients(grid, v_th_bg, u_bg, n_bg=1.0, lin_tol=1e-12, solver=None):
    """Coefficients of a Maxwellian background for the linearized operator.

    Computed by running the potential solves on the sampled background
    Maxwellian (self-consistent with the solver's own discretization). The
    multipole moments are taken analytically: M_perp = n v_th^2 and Q = 0 for
    an isotropic Maxwellian, which stays valid when the grid window does not
    cover the background bulk (beam test).
    """
    f_bg = maxwellian_values(grid, n_bg, u_bg, v_th_bg, d=3)
    mom = MultipoleMoments(n=n_bg, m_perp=n_bg * v_th_bg**2, q=0.0, u_ref=u_bg)
    pot = solve_potentials(f_bg, grid, lin_tol, u_ref=u_bg, moments_override=mom,
                           solver=solver)
    return coefficients(pot, grid)
