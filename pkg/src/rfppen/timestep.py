"""EIN penalized backward-Euler stepping and adaptive timestep control.

One penalized step for the diffusion problem solves

    (I - dt L_beta) f^{n+1} = f^n + dt (Q(f^n) - L_beta f^n),

with L_beta f = div(beta grad f) an easy-to-invert isotropic operator.
The amplification-factor analysis motivates beta >= lambda_1 / 2; the
adaptive controller limits the sign-indefinite anisotropic kernel
contribution, giving the logarithmic stepping

    dt_n = alpha_n / (1 - alpha_n) * dt_{n-1} / alpha_{n-1},
    alpha_n = eps / max_mesh[(lambda_1 - lambda_2) / (2 beta)].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import aniso
from .errors import LinearSolverError
DEFAULT_EPS_CAP = 0.05  # upper bound of the adaptive-eps rule
CFL_SAFETY = 0.9


@dataclass
class StepConfig:
    """Stepping parameters shared by the heat and kinetic drivers."""

    n_cfl_max: float = 500.0
    eps_pos: float | None = None  # None -> min(0.05, ratio_max/2) rule
    dt_max: float | None = None
    lin_tol: float = 1e-12
    lin_maxit: int = 200

    def __post_init__(self):
        if self.eps_pos is not None and not (0.0 < self.eps_pos < 1.0):
            raise ValueError("eps_pos must lie in (0, 1)")
        if not (0.0 < self.lin_tol <= 1e-6):
            raise ValueError("lin_tol must lie in (0, 1e-6]")
        if self.n_cfl_max < 1.0:
            raise ValueError("n_cfl_max must be >= 1")


@dataclass
class AdaptiveState:
    """Controller memory: previous dt and alpha, current time, step index."""

    t: float = 0.0
    dt_prev: float = 0.0
    alpha_prev: float = 0.0
    n: int = 0


def amplification_factor(k1, k2, lam1, lam2, beta, dt):
    """Fourier amplification factor of the penalized backward-Euler step.

    R = 1 - dt (lam1 k1^2 + lam2 k2^2) / (1 + dt beta (k1^2 + k2^2)).
    Reference implementation used by the stability tests only.
    """
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    num = dt * (lam1 * k1 * k1 + lam2 * k2 * k2)
    den = 1.0 + dt * beta * (k1 * k1 + k2 * k2)
    return 1.0 - num / den


def dt_cfl(grid, lam1_max, safety=CFL_SAFETY):
    """Explicit diffusion stability step 0.9 / max[2 lam1 (1/d1^2 + 1/d2^2)]."""
    if lam1_max <= 0.0:
        raise ValueError("lam1_max must be positive")
    return safety / (2.0 * lam1_max * (1.0 / grid.d1**2 + 1.0 / grid.d2**2))


def default_eps(ratio_max):
    """eps = min(0.05, (lam1 - lam2)/(4 beta)) with the mesh-max reduction."""
    return min(DEFAULT_EPS_CAP, 0.5 * ratio_max)


def adaptive_dt(ratio_max, dt_cfl_now, state, config):
    """Next timestep of the positivity-preserving controller.

    ``ratio_max`` is max over the mesh of (lam1 - lam2)/(2 beta). The first
    step uses the explicit stability constraint; afterwards the logarithmic
    recurrence applies, clamped at n_cfl_max * dt_cfl (and dt_max if set).
    Isotropic tensors (ratio_max == 0) jump straight to the cap. Returns
    (dt, alpha) and mutates ``state``.
    """
    cap = config.n_cfl_max * dt_cfl_now
    if config.dt_max is not None:
        cap = min(cap, config.dt_max)
    if ratio_max <= 0.0:
        dt = cap
        alpha = 0.0
    else:
        eps = config.eps_pos if config.eps_pos is not None else default_eps(ratio_max)
        alpha = min(eps / ratio_max, 0.5)
        if state.n == 0:
            dt = min(dt_cfl_now, cap)
        else:
            dt = (alpha / (1.0 - alpha)) * state.dt_prev / state.alpha_prev
            dt = min(dt, cap)
    state.n += 1
    state.dt_prev = dt
    state.alpha_prev = alpha if alpha > 0.0 else 1.0  # keep recurrence well posed
    state.t += dt
    return dt, alpha


def identity_minus_dt_L(L, dt):
    n = L.shape[0]
    return (sp.identity(n, format="csr") - dt * L).tocsc()


def implicit_solve(L, rhs_values, dt, lin_tol=1e-12, factor=None):
    """Solve (I - dt L) f = rhs to a relative residual <= lin_tol.

    Any direct sparse factorization meeting the residual bound conforms; a
    prefactorized operator may be passed through ``factor`` to reuse across
    steps with static coefficients. Raises LinearSolverError with the
    achieved residual when the bound is missed.
    """
    rhs = np.asarray(rhs_values, dtype=float)
    shape = rhs.shape
    b = rhs.ravel()
    if dt == 0.0:
        return rhs.copy()
    if factor is None:
        A = identity_minus_dt_L(L, dt)
        factor = spla.splu(A)
        x = factor.solve(b)
        x = x + factor.solve(b - A @ x)  # one refinement pass
        res = np.linalg.norm(A @ x - b)
    else:
        x = factor.solve(b)
        res = np.linalg.norm(factor.matvec(x) - b) if hasattr(factor, "matvec") else None
    if res is not None:
        bnorm = np.linalg.norm(b)
        if bnorm > 0 and res > lin_tol * bnorm:
            raise LinearSolverError(
                f"implicit solve residual {res:.3e} exceeds {lin_tol:.1e} * |rhs|",
                residual=res,
            )
    return x.reshape(shape)


class FactoredStep:
    """Cached LU of (I - dt L) for repeated solves with static coefficients.

    One pass of iterative refinement follows the triangular solves; the
    nonlinear parameter iterations resolve differences near 1e-14, so the
    raw LU round-off would otherwise set their convergence floor.
    """

    def __init__(self, L, dt, lin_tol=1e-12):
        self.A = identity_minus_dt_L(L, dt)
        self.lu = spla.splu(self.A)
        self.lin_tol = lin_tol

    def solve(self, rhs_values):
        rhs = np.asarray(rhs_values, dtype=float)
        b = rhs.ravel()
        x = self.lu.solve(b)
        x = x + self.lu.solve(b - self.A @ x)
        res = np.linalg.norm(self.A @ x - b)
        bnorm = np.linalg.norm(b)
        if bnorm > 0 and res > self.lin_tol * bnorm:
            raise LinearSolverError(
                f"implicit solve residual {res:.3e} exceeds {self.lin_tol:.1e} * |rhs|",
                residual=res,
            )
        return x.reshape(rhs.shape)


def lbeta_matrix_cartesian(beta_values, grid):
    """Sparse 5-point matrix of div(beta grad .) with zero-flux boundaries.

    Flux form with arithmetic face averages of beta; boundary faces carry no
    flux, so the volume-weighted row sums vanish and mass is conserved by
    construction.
    """
    n1, n2 = grid.shape
    dx, dy = grid.d1, grid.d2
    beta = np.asarray(beta_values, dtype=float)
    idx = np.arange(n1 * n2).reshape(n1, n2)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    # direction-1 interior faces between cells (k-1, j) and (k, j)
    bf = 0.5 * (beta[:-1, :] + beta[1:, :]) / dx**2
    add(idx[:-1, :], idx[1:, :], bf)
    add(idx[:-1, :], idx[:-1, :], -bf)
    add(idx[1:, :], idx[:-1, :], bf)
    add(idx[1:, :], idx[1:, :], -bf)
    # direction-2 interior faces
    bf = 0.5 * (beta[:, :-1] + beta[:, 1:]) / dy**2
    add(idx[:, :-1], idx[:, 1:], bf)
    add(idx[:, :-1], idx[:, :-1], -bf)
    add(idx[:, 1:], idx[:, :-1], bf)
    add(idx[:, 1:], idx[:, 1:], -bf)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n1 * n2, n1 * n2))


def apply_lbeta_cartesian(f_values, beta_values, grid):
    """Explicit evaluation of div(beta grad f), zero-flux boundaries."""
    f = np.asarray(f_values, dtype=float)
    beta = np.asarray(beta_values, dtype=float)
    n1, n2 = grid.shape
    out = np.zeros_like(f)
    bf = 0.5 * (beta[:-1, :] + beta[1:, :])
    J1 = bf * (f[1:, :] - f[:-1, :]) / grid.d1
    out[:-1, :] += J1 / grid.d1
    out[1:, :] -= J1 / grid.d1
    bf = 0.5 * (beta[:, :-1] + beta[:, 1:])
    J2 = bf * (f[:, 1:] - f[:, :-1]) / grid.d2
    out[:, :-1] += J2 / grid.d2
    out[:, 1:] -= J2 / grid.d2
    return out


class HeatStepper:
    """EIN stepping for the generic anisotropic-diffusion equation.

    Coefficients are static, so the penalization matrix is assembled once and
    factorizations are cached per timestep value.
    """

    def __init__(self, grid, D, config=None):
        self.grid = grid
        self.D = D
        self.config = config or StepConfig()
        self.beta = aniso.beta_field(D)
        self.L = lbeta_matrix_cartesian(self.beta, grid)
        self.ratio_max = aniso.aniso_ratio_max(D, self.beta)
        self.dt_cfl = dt_cfl(grid, float(np.max(D.lam1)))
        self._faces = aniso._FaceTensors(D)
        self._factors: dict[float, FactoredStep] = {}

    def _factor(self, dt):
        f = self._factors.get(dt)
        if f is None:
            f = FactoredStep(self.L, dt, self.config.lin_tol)
            if len(self._factors) > 8:
                self._factors.clear()
            self._factors[dt] = f
        return f

    def ein_step(self, f_values, dt):
        """One penalized backward-Euler step; conserves the total mass."""
        f = np.asarray(f_values, dtype=float)
        fq = np.maximum(f, aniso.LOG_FLOOR)
        rhs = f + dt * (aniso.apply_Q(fq, self.D, self.grid, self._faces)
                        - apply_lbeta_cartesian(f, self.beta, self.grid))
        return self._factor(dt).solve(rhs)

    def explicit_step(self, f_values, dt):
        f = np.asarray(f_values, dtype=float)
        fq = np.maximum(f, aniso.LOG_FLOOR)
        return f + dt * aniso.apply_Q(fq, self.D, self.grid, self._faces)


def ein_step_diffusion(f_values, D, beta_values, dt, grid, lin_tol=1e-12):
    """Single penalized diffusion step (assembles and factors on the fly)."""
    f = np.asarray(f_values, dtype=float)
    L = lbeta_matrix_cartesian(beta_values, grid)
    fq = np.maximum(f, aniso.LOG_FLOOR)
    rhs = f + dt * (aniso.apply_Q(fq, D, grid) - apply_lbeta_cartesian(f, beta_values, grid))
    return implicit_solve(L, rhs, dt, lin_tol)
