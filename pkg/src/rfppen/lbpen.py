"""Conservative variable-coefficient penalization operator L_beta.

In cylindrical velocity coordinates,

    L_beta f = 1/v_perp d/dv_perp (v_perp J_perp) + d/dv_par J_par,
    J = beta(v) [grad f + (v - u_beta)/lambda_beta f],

discretized in flux form with arithmetic face averages of beta, central
diffusion, and classical Chang-Cooper face interpolation of the drift term
with weights w_perp = v_perp_face / lambda_beta and
w_par = (v_par_face - u_par_beta) / lambda_beta. Boundary faces carry no
flux (the axis face vanishes through its v_perp = 0 factor), so mass is
conserved to round-off.

The parameters (lambda_beta, u_par_beta) are beta-weighted moments of f
solving

    lambda_beta = (n_b E_b - p_b^2) / (n_b B_b - A_b p_b),
    u_beta      = (p_b - lambda_beta A_b) / n_b,

which makes L_beta exactly momentum- and energy-conserving. The discrete
moment sums reuse the very face values of the flux assembly, and since the
Chang-Cooper weights themselves depend on (lambda, u), the solve is a small
nonlinear fixed point, accelerated with Anderson acceleration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, DegenerateInputError, DomainError
from .mesh import conserved_moments, match_maxwellian_to_moments
from .timestep import FactoredStep

CC_SERIES_THRESHOLD = 0.02  # |dv*w| below which the series branch is used


def cc_weight(w, dv):
    """Classical Chang-Cooper weight delta(w) = 1/(dv w) - 1/(exp(dv w) - 1).

    delta lies in (0, 1), tends to 1/2 as w -> 0 and to full upwinding as
    |w| -> inf, and satisfies delta(-w) = 1 - delta(w). For small |dv*w| the
    two-term difference cancels catastrophically; the Bernoulli series
    delta = 1/2 - x/12 + x^3/720 - x^5/30240 takes over below |x| = 0.02.
    At the switch both branches agree to a few 1e-15 absolute, so the
    weights stay smooth to round-off as the parameters move (the nonlinear
    parameter solves resolve 1e-14 differences through these weights).
    """
    x = np.asarray(dv * np.asarray(w, dtype=float))
    small = np.abs(x) < CC_SERIES_THRESHOLD
    xs = np.where(small, 1.0, x)  # keep expm1 branch finite
    main = 1.0 / xs - 1.0 / np.expm1(xs)
    x2 = x * x
    series = 0.5 - x / 12.0 * (1.0 - x2 / 60.0 * (1.0 - x2 / 42.0))
    out = np.where(small, series, main)
    return out if out.ndim else float(out)


@dataclass
class PenalizationState:
    """beta-weighted moments and the solved conservation parameters."""

    n_beta: float
    A_par: float
    p_par: float
    B_beta: float
    E_beta: float
    lam: float
    u_par: float
    converged: bool = False
    iterations: int = 0


@dataclass
class AndersonConfig:
    """Anderson acceleration over the (u_par, lambda) fixed point."""

    window: int = 5
    tol: float = 1e-10
    max_iter: int = 50
    cond_max: float = 1e12
    cond_drop: float = 1e8
    growth_cap: float = 10.0


def _aa_combine(rs, gs, gx, r, cfg):
    """Least-squares residual extrapolation with stale-column dropping.

    Residual differences become nearly collinear as the iteration
    converges; old large columns then poison the fit at the new residual's
    scale, so columns are normalized and the oldest dropped until the
    system is well conditioned. Components of the residual that are already
    converged (below a tenth of the tolerance) are excluded from the fit:
    they carry only round-off, and fitting them exactly contaminates the
    extrapolation of the live components. Returns None to request a plain
    Picard step.
    """
    active = np.abs(r) >= 0.1 * cfg.tol
    if not np.any(active):
        return None
    cols_r = [(rs[i + 1] - rs[i])[active] for i in range(len(rs) - 1)]
    cols_g = [gs[i + 1] - gs[i] for i in range(len(gs) - 1)]
    r_act = r[active]
    while cols_r:
        dR = np.column_stack(cols_r)
        norms = np.linalg.norm(dR, axis=0)
        if np.any(norms == 0.0):
            cols_r.pop(0)
            cols_g.pop(0)
            continue
        dRn = dR / norms
        try:
            cond = np.linalg.cond(dRn)
        except np.linalg.LinAlgError:
            return None
        if cond > cfg.cond_drop and len(cols_r) > 1:
            cols_r.pop(0)
            cols_g.pop(0)
            continue
        if cond > cfg.cond_max:
            return None
        alpha, *_ = np.linalg.lstsq(dRn, r_act, rcond=None)
        dG = np.column_stack(cols_g)
        return gx - dG @ (alpha / norms)
    return None


class AndersonAccelerator:
    """Anderson-accelerated fixed-point solver with iterate/residual history.

    Thin object wrapper around :func:`anderson_fixed_point`; the residual
    history of the last solve is kept for diagnostics.
    """

    def __init__(self, window=5, tol=1e-10, max_iter=50):
        self.config = AndersonConfig(window=window, tol=tol, max_iter=max_iter)
        self.history = []
        self.iterations = 0

    def solve(self, g, x0):
        x, self.iterations, self.history = anderson_fixed_point(g, x0, self.config)
        return x


def anderson_fixed_point(g, x0, cfg):
    """Anderson-accelerated fixed point of x = g(x) in R^d.

    Stops when every component of the update |x_{k+1} - x_k| drops below
    cfg.tol. Falls back to the plain Picard iterate whenever the residual
    least-squares system is ill conditioned, or retroactively when an
    accepted extrapolation grew the residual by more than cfg.growth_cap.
    Returns (x, iterations, residual_history).
    """
    x = np.asarray(x0, dtype=float)
    xs, gs, rs = [], [], []
    history = []
    prev_rnorm = None
    it = 0
    while it < cfg.max_iter:
        gx = np.asarray(g(x), dtype=float)
        it += 1
        r = gx - x
        rnorm = float(np.max(np.abs(r)))
        history.append(rnorm)
        if prev_rnorm is not None and rnorm > cfg.growth_cap * prev_rnorm and len(xs) > 1:
            # safeguard: drop the extrapolation history, restart from the
            # Picard iterate of the previous point
            x = gs[-1]
            xs, gs, rs = [], [], []
            prev_rnorm = None
            continue
        if rnorm < cfg.tol:
            # accepting the Picard iterate already satisfies the
            # |x_{k+1} - x_k| < tol stopping rule
            return gx, it, history
        xs.append(x)
        gs.append(gx)
        rs.append(r)
        if len(xs) > cfg.window + 1:
            xs.pop(0)
            gs.pop(0)
            rs.pop(0)
        x_new = None
        if len(xs) >= 2 and rnorm > 2.0 * cfg.tol:
            # extrapolating at the noise floor only injects least-squares
            # noise; plain Picard finishes the last digits
            x_new = _aa_combine(rs, gs, gx, r, cfg)
        if x_new is None:
            x_new = gx
        step = float(np.max(np.abs(x_new - x)))
        prev_rnorm = rnorm
        x = x_new
        if step < cfg.tol:
            return x, it, history
    raise ConvergenceError(
        f"Anderson iteration exhausted {cfg.max_iter} iterations", history=history
    )


def _face_geometry(grid):
    vp_f = grid.faces1[1:-1]  # interior perpendicular faces
    vl_f = grid.faces2[1:-1]  # interior parallel faces
    return vp_f, vl_f


def _lbeta_faces(f, beta, lam, u_par, grid):
    """Face fluxes and the ingredients shared by apply/moments/matrix."""
    if lam <= 0.0:
        raise DomainError("lambda_beta must be positive")
    dvp, dvl = grid.d1, grid.d2
    vp_f, vl_f = _face_geometry(grid)
    beta_f1 = 0.5 * (beta[:-1, :] + beta[1:, :])
    beta_f2 = 0.5 * (beta[:, :-1] + beta[:, 1:])
    w1 = vp_f[:, None] / lam
    w2 = (vl_f[None, :] - u_par) / lam
    d1 = cc_weight(w1, dvp) * np.ones_like(beta_f1)
    d2 = cc_weight(w2, dvl) * np.ones_like(beta_f2)
    fface1 = (1.0 - d1) * f[1:, :] + d1 * f[:-1, :]
    fface2 = (1.0 - d2) * f[:, 1:] + d2 * f[:, :-1]
    df1 = (f[1:, :] - f[:-1, :]) / dvp
    df2 = (f[:, 1:] - f[:, :-1]) / dvl
    J1 = beta_f1 * (df1 + w1 * fface1)
    J2 = beta_f2 * (df2 + w2 * fface2)
    return dict(beta_f1=beta_f1, beta_f2=beta_f2, w1=w1, w2=w2, d1=d1, d2=d2,
                fface1=fface1, fface2=fface2, df1=df1, df2=df2, J1=J1, J2=J2)


def _divergence(J1, J2, grid):
    """Flux-form divergence with zero boundary fluxes."""
    n1, n2 = grid.shape
    vp = grid.centers1[:, None]
    vf = grid.faces1
    out = np.zeros((n1, n2))
    out[:-1, :] += vf[1:-1, None] * J1 / (vp[:-1] * grid.d1)
    out[1:, :] -= vf[1:-1, None] * J1 / (vp[1:] * grid.d1)
    out[:, :-1] += J2 / grid.d2
    out[:, 1:] -= J2 / grid.d2
    return out


def apply_Lbeta(f_values, beta_values, lam, u_par, grid):
    """Evaluate L_beta f with zero-flux boundaries."""
    f = np.asarray(f_values, dtype=float)
    beta = np.asarray(beta_values, dtype=float)
    fc = _lbeta_faces(f, beta, lam, u_par, grid)
    return _divergence(fc["J1"], fc["J2"], grid)


def beta_moments_discrete(f_values, beta_values, lam, u_par, grid):
    """beta-weighted moments with CC face values at (lam, u_par), and the
    (lambda, u) pair solving the conservation constraints for those moments.

    The numerator n_b E_b - p_b^2 is nonnegative and the denominator
    n_b B_b - A_b p_b positive for admissible positive f (checked; a
    violation signals a non-admissible input such as an unresolved spike).
    """
    f = np.asarray(f_values, dtype=float)
    beta = np.asarray(beta_values, dtype=float)
    fc = _lbeta_faces(f, beta, lam, u_par, grid)
    vp = grid.centers1[:, None]
    vp_f, vl_f = _face_geometry(grid)
    w = 2.0 * np.pi * grid.d1 * grid.d2

    A_par = -w * float(np.sum(vp * fc["beta_f2"] * fc["df2"]))
    p_par = w * float(np.sum(vp * fc["beta_f2"] * vl_f[None, :] * fc["fface2"]))
    n_b = w * float(np.sum(vp * fc["beta_f2"] * fc["fface2"]))
    B_b = -w * float(np.sum(vp_f[:, None] ** 2 * fc["beta_f1"] * fc["df1"])
                     + np.sum(vp * vl_f[None, :] * fc["beta_f2"] * fc["df2"]))
    E_b = w * float(np.sum(vp_f[:, None] ** 3 * fc["beta_f1"] * fc["fface1"])
                    + np.sum(vp * vl_f[None, :] ** 2 * fc["beta_f2"] * fc["fface2"]))

    num = n_b * E_b - p_par * p_par
    den = n_b * B_b - A_par * p_par
    if den <= 0.0:
        raise DegenerateInputError(
            f"lambda_beta denominator {den:.3e} <= 0: input not admissible"
        )
    if num < 0.0 and num < -1e-14 * abs(n_b * E_b):
        raise DegenerateInputError(f"lambda_beta numerator {num:.3e} < 0")
    lam_new = num / den
    u_new = (p_par - lam_new * A_par) / n_b
    return PenalizationState(n_b, A_par, p_par, B_b, E_b, lam_new, u_new)


def lbeta_matrix(beta_values, lam, u_par, grid):
    """Sparse matrix of the CC-discretized L_beta (5-point, nonsymmetric)."""
    beta = np.asarray(beta_values, dtype=float)
    if lam <= 0.0:
        raise DomainError("lambda_beta must be positive")
    n1, n2 = grid.shape
    dvp, dvl = grid.d1, grid.d2
    vp = grid.centers1
    vp_f, vl_f = _face_geometry(grid)
    beta_f1 = 0.5 * (beta[:-1, :] + beta[1:, :])
    beta_f2 = 0.5 * (beta[:, :-1] + beta[:, 1:])
    w1 = (vp_f / lam)[:, None]
    w2 = ((vl_f - u_par) / lam)[None, :]
    d1 = cc_weight(w1, dvp) * np.ones((n1 - 1, n2))
    d2 = cc_weight(w2, dvl) * np.ones((n1, n2 - 1))

    # J1 face coefficients on (f_lo, f_hi) = (cell i, cell i+1)
    c1_lo = beta_f1 * (-1.0 / dvp + w1 * d1)
    c1_hi = beta_f1 * (1.0 / dvp + w1 * (1.0 - d1))
    c2_lo = beta_f2 * (-1.0 / dvl + w2 * d2)
    c2_hi = beta_f2 * (1.0 / dvl + w2 * (1.0 - d2))

    idx = np.arange(n1 * n2).reshape(n1, n2)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    geom_lo = (vp_f[:, None] / (vp[:-1, None] * dvp)) * np.ones((n1 - 1, n2))
    geom_hi = (vp_f[:, None] / (vp[1:, None] * dvp)) * np.ones((n1 - 1, n2))
    add(idx[:-1, :], idx[:-1, :], geom_lo * c1_lo)
    add(idx[:-1, :], idx[1:, :], geom_lo * c1_hi)
    add(idx[1:, :], idx[:-1, :], -geom_hi * c1_lo)
    add(idx[1:, :], idx[1:, :], -geom_hi * c1_hi)

    add(idx[:, :-1], idx[:, :-1], c2_lo / dvl)
    add(idx[:, :-1], idx[:, 1:], c2_hi / dvl)
    add(idx[:, 1:], idx[:, :-1], -c2_lo / dvl)
    add(idx[:, 1:], idx[:, 1:], -c2_hi / dvl)

    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n1 * n2, n1 * n2),
    )


def initial_parameter_guess(f_values, grid):
    """(u_par, lambda) of the discrete-moment-matched Maxwellian of f.

    At a sampled Maxwellian these are exactly the sampling parameters, which
    are also the fixed point of the beta-moment map, so the parameter solves
    start already converged at equilibrium.
    """
    mass, mom, energy = conserved_moments(np.asarray(f_values, dtype=float), grid)
    _, u_m, v_th = match_maxwellian_to_moments(grid, mass, mom, energy)
    return np.array([u_m, v_th * v_th])


def central_parameter_guess(f_values, beta_values, grid):
    """Closed-form (u_par, lambda) from the beta-weighted moment sums with
    midpoint (w -> 0 limit) face values.

    This is the continuum limit of the Chang-Cooper moment solve, so it lands
    within the CC interpolation error of the fixed point; far from
    equilibrium it is a much closer initializer than the Maxwellian-matched
    parameters.
    """
    f = np.asarray(f_values, dtype=float)
    beta = np.asarray(beta_values, dtype=float)
    vp = grid.centers1[:, None]
    vp_f, vl_f = _face_geometry(grid)
    w = 2.0 * np.pi * grid.d1 * grid.d2
    bf1 = 0.5 * (beta[:-1, :] + beta[1:, :])
    bf2 = 0.5 * (beta[:, :-1] + beta[:, 1:])
    df1 = (f[1:, :] - f[:-1, :]) / grid.d1
    df2 = (f[:, 1:] - f[:, :-1]) / grid.d2
    ff1 = 0.5 * (f[1:, :] + f[:-1, :])
    ff2 = 0.5 * (f[:, 1:] + f[:, :-1])
    A = -w * float(np.sum(vp * bf2 * df2))
    p = w * float(np.sum(vp * bf2 * vl_f[None, :] * ff2))
    nb = w * float(np.sum(vp * bf2 * ff2))
    B = -w * (float(np.sum(vp_f[:, None] ** 2 * bf1 * df1))
              + float(np.sum(vp * vl_f[None, :] * bf2 * df2)))
    E = w * (float(np.sum(vp_f[:, None] ** 3 * bf1 * ff1))
             + float(np.sum(vp * vl_f[None, :] ** 2 * bf2 * ff2)))
    den = nb * B - A * p
    if den <= 0.0:
        raise DegenerateInputError("central parameter guess is degenerate")
    lam = (nb * E - p * p) / den
    return np.array([(p - lam * A) / nb, lam])


def solve_params_rhs(f_values, beta_values, grid, aa=None, x0=None):
    """Algorithm 1: fixed point of the beta-weighted moment solve for known f."""
    f = np.asarray(f_values, dtype=float)
    beta = np.asarray(beta_values, dtype=float)
    aa = aa or AndersonConfig()
    if x0 is None:
        x0 = initial_parameter_guess(f, grid)

    def g(x):
        st = beta_moments_discrete(f, beta, x[1], x[0], grid)
        return np.array([st.u_par, st.lam])

    x, iters, history = anderson_fixed_point(g, x0, aa)
    st = beta_moments_discrete(f, beta, x[1], x[0], grid)
    out = PenalizationState(st.n_beta, st.A_par, st.p_par, st.B_beta, st.E_beta,
                            x[1], x[0], converged=True, iterations=iters)
    return out


def penalized_rfp_step(f_values, C_values, beta_values, dt, grid, aa=None,
                       state_n=None, lin_tol=1e-12, x0=None):
    """Algorithm 2: one penalized implicit step of f_t = C(f).

    Solves (I - dt L_beta^{n+1}) f = f^n - dt L_beta^n f^n + dt C(f^n),
    iterating the (u, lambda)^{n+1} parameters of the implicit operator to
    their beta-moment fixed point with Anderson acceleration. ``C_values``
    is the collision operator evaluated at f^n (it stays frozen during the
    iteration). The initial parameter guess defaults to the time-n values;
    callers tracking the parameter history can pass an extrapolated ``x0``.
    Returns (f_next, info dict).
    """
    f = np.asarray(f_values, dtype=float)
    beta = np.asarray(beta_values, dtype=float)
    aa = aa or AndersonConfig()
    if state_n is None:
        state_n = solve_params_rhs(f, beta, grid, aa)
    rhs = f - dt * apply_Lbeta(f, beta, state_n.lam, state_n.u_par, grid) \
        + dt * np.asarray(C_values, dtype=float)
    return _implicit_parameter_iteration(f, rhs, beta, dt, grid, aa, state_n, lin_tol,
                                         x0)


def penalized_step_fixed_params(f_values, C_values, beta_values, dt, grid,
                                u_fixed, lam_fixed, lin_tol=1e-12, factor=None):
    """Penalized implicit step with externally fixed (u, lambda) penalization
    parameters (the linearized cross-species operator is penalized toward its
    own equilibrium, which is known and time independent).

    Returns (f_next, info, factor) where ``factor`` is the reusable
    factorization of (I - dt L_beta).
    """
    f = np.asarray(f_values, dtype=float)
    beta = np.asarray(beta_values, dtype=float)
    rhs = f - dt * apply_Lbeta(f, beta, lam_fixed, u_fixed, grid) \
        + dt * np.asarray(C_values, dtype=float)
    if factor is None:
        factor = FactoredStep(lbeta_matrix(beta, lam_fixed, u_fixed, grid), dt, lin_tol)
    f_next = factor.solve(rhs)
    info = dict(state_n=None, u_par=float(u_fixed), lam=float(lam_fixed),
                aa_iters_lhs=1, aa_iters_rhs=0, residual_history=[])
    return f_next, info, factor


def _implicit_parameter_iteration(f, rhs, beta, dt, grid, aa, state_n, lin_tol, x0):

    cache = {}

    def f_star(x):
        key = (float(x[0]), float(x[1]))
        if key not in cache:
            L = lbeta_matrix(beta, x[1], x[0], grid)
            cache[key] = FactoredStep(L, dt, lin_tol).solve(rhs)
            if len(cache) > 12:
                k0 = next(iter(cache))
                if k0 != key:
                    del cache[k0]
        return cache[key]

    def g(x):
        st = beta_moments_discrete(f_star(x), beta, x[1], x[0], grid)
        return np.array([st.u_par, st.lam])

    if x0 is None:
        x0 = np.array([state_n.u_par, state_n.lam])
    x, iters, history = anderson_fixed_point(g, x0, aa)
    f_next = f_star(x)
    info = dict(
        state_n=state_n,
        u_par=float(x[0]),
        lam=float(x[1]),
        aa_iters_lhs=iters,
        aa_iters_rhs=state_n.iterations,
        residual_history=history,
    )
    return f_next, info
