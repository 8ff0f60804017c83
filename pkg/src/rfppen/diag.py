"""Physics diagnostics and semi-analytic rate oracles.

Includes the Maxwell integral psi(x) = (2/sqrt(pi)) int_0^x sqrt(t) e^-t dt
(evaluated through the incomplete-gamma/erf identity), the theoretical
slowing-down / perpendicular / parallel relaxation rates of a cold beam on
a Maxwellian background, their time-averaged numerical counterparts, the
temperature-isotropization frequency nu_T with its two-temperature
reference ODE, and per-step conservation tracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DegenerateInputError, DomainError
from .mesh import conserved_moments
from .rfp import entropy


def psi(x):
    """Maxwell integral via psi(x) = erf(sqrt(x)) - (2/sqrt(pi)) sqrt(x) e^{-x}."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise DomainError("psi requires x >= 0")
    rx = np.sqrt(x)
    out = np.vectorize(math.erf)(rx) - 2.0 / math.sqrt(math.pi) * rx * np.exp(-x)
    return float(out) if out.ndim == 0 else out


def psi_prime(x):
    """d psi/dx = (2/sqrt(pi)) sqrt(x) e^{-x}."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise DomainError("psi_prime requires x >= 0")
    out = 2.0 / math.sqrt(math.pi) * np.sqrt(x) * np.exp(-x)
    return float(out) if out.ndim == 0 else out


@dataclass
class BeamParams:
    """Physical parameters of the test-particle beam problem."""

    e_test: float = 1.0
    e_bg: float = 13.0
    coulomb_log: float = 1.0
    n_bg: float = 1.0
    m_test: float = 2.0
    m_bg: float = 27.0
    v_th_bg: float = 1.0  # background thermal speed, v_th^2 = 2 T_bg / m_bg


@dataclass
class RateRecord:
    """Measured vs theoretical relaxation rates at a given drift."""

    u_par: float
    nu_s_num: float
    nu_perp_num: float
    nu_par_num: float
    nu_s_th: float
    nu_perp_th: float
    nu_par_th: float


def theoretical_rates(u_par, params):
    """Slowing-down, perpendicular-, and parallel-diffusion rates of a cold
    beam drifting at u_par through a Maxwellian background:

        nu_s    = (1 + m_t/m_b) psi(x) nu_0,
        nu_perp = 2 [ (1 - 1/(2x)) psi(x) + psi'(x) ] nu_0,
        nu_par  = [ psi(x) / x ] nu_0,

    with nu_0 = 4 pi e_t^2 e_b^2 lambda n_b / (m_t^2 u^3), x = u^2/v_th_b^2.
    """
    if u_par <= 0.0:
        raise DomainError("theoretical rates are singular at u_par = 0")
    p = params
    nu0 = 4.0 * math.pi * p.e_test**2 * p.e_bg**2 * p.coulomb_log * p.n_bg \
        / (p.m_test**2 * u_par**3)
    x = u_par**2 / p.v_th_bg**2
    ps = psi(x)
    nu_s = (1.0 + p.m_test / p.m_bg) * ps * nu0
    nu_perp = 2.0 * ((1.0 - 0.5 / x) * ps + psi_prime(x)) * nu0
    nu_par = ps / x * nu0
    return nu_s, nu_perp, nu_par


def measured_rates(history, m_test):
    """Time-averaged numerical rates from a per-step (t, u, T_perp, T_par)
    history. T_perp here is the full perpendicular moment m<v_perp^2>/n (both
    degrees of freedom), matching the theoretical normalization:

        <nu_s>    = sum_p |du_p / u_p|          / sum_p dt_p,
        <nu_perp> = sum_p |dT_perp,p|/(m u_p^2) / sum_p dt_p,
        <nu_par>  = sum_p |dT_par,p|/(m u_p^2)  / sum_p dt_p.

    Each step is weighted by its own dt (for uniform stepping this is the
    standard 1/(N dt) average).
    """
    hist = np.asarray(history, dtype=float)
    if hist.ndim != 2 or hist.shape[0] < 2:
        raise DegenerateInputError("rate history needs at least two entries")
    t, u, tp, tl = hist[:, 0], hist[:, 1], hist[:, 2], hist[:, 3]
    total = t[-1] - t[0]
    if total <= 0.0:
        raise DegenerateInputError("history spans zero time")
    du = np.abs(np.diff(u) / u[1:])
    dtp = np.abs(np.diff(tp)) / (m_test * u[1:] ** 2)
    dtl = np.abs(np.diff(tl)) / (m_test * u[1:] ** 2)
    return float(np.sum(du) / total), float(np.sum(dtp) / total), float(np.sum(dtl) / total)


@dataclass
class IsotropizationParams:
    """Prefactor data of nu_T = 2 sqrt(pi) e^4 n lambda / (sqrt(m) T_par^{3/2}) ...

    The solver's normalized collision operator corresponds to
    2 pi e^4 lambda / m^2 = 1, i.e. e4_lambda = m^2/(2 pi); override when
    comparing against differently normalized data.
    """

    n: float = 1.0
    m: float = 1.0
    e4_lambda: float = field(default=1.0 / (2.0 * math.pi))


def nu_T(T_perp, T_par, params=None):
    """Temperature-isotropization frequency for T_perp > T_par:

        nu_T = 2 sqrt(pi) e^4 n lambda / (sqrt(m) T_par^{3/2})
               * A^{-2} [ -3 + (A+3) arctan(sqrt(A))/sqrt(A) ],  A = T_perp/T_par - 1.
    """
    p = params or IsotropizationParams()
    if T_par <= 0.0 or T_perp <= 0.0:
        raise DomainError("temperatures must be positive")
    A = T_perp / T_par - 1.0
    if A <= 0.0:
        raise DomainError("nu_T implemented for the T_perp > T_par branch only")
    pref = 2.0 * math.sqrt(math.pi) * p.e4_lambda * p.n / (math.sqrt(p.m) * T_par**1.5)
    if A < 1e-6:
        bracket = 4.0 / 15.0 - (8.0 / 35.0) * A  # Taylor of the A -> 0 limit
    else:
        sq = math.sqrt(A)
        bracket = (-3.0 + (A + 3.0) * math.atan(sq) / sq) / (A * A)
    return pref * bracket


def isotropization_reference(T_perp0, T_par0, params=None, t_end=1.0, t_eval=None,
                             rtol=1e-8):
    """Reference trajectory of dT_perp/dt = -nu_T (T_perp - T_par),
    dT_par/dt = +2 nu_T (T_perp - T_par), integrated with an adaptive
    embedded Runge-Kutta pair. Conserves (2 T_perp + T_par)/3 exactly.
    """
    p = params or IsotropizationParams()

    def rhs(_t, y):
        tp, tl = y
        if tp <= tl:  # equilibrated to rounding; freeze
            return [0.0, 0.0]
        nt = nu_T(tp, tl, p)
        return [-nt * (tp - tl), 2.0 * nt * (tp - tl)]

    sol = solve_ivp(rhs, (0.0, t_end), [T_perp0, T_par0], method="RK45",
                    rtol=rtol, atol=1e-12, t_eval=t_eval, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"isotropization reference ODE failed: {sol.message}")
    return sol


@dataclass
class StepReport:
    """Per-step diagnostics row."""

    step: int
    t: float
    dt: float
    n_cfl: float
    min_f: float
    mass: float
    momentum: float
    energy: float
    entropy: float
    d_mass: float = 0.0
    d_momentum: float = 0.0
    d_energy: float = 0.0
    lin_iters: int = 1
    aa_iters_lhs: int = 0
    aa_iters_rhs: int = 0
    lambda_beta: float = 0.0
    u_par_beta: float = 0.0
    gamma: float = 0.0
    eps_par: float = 0.0

    CSV_HEADER = ("step,t,dt,n_cfl,min_f,mass,momentum,energy,lin_iters,"
                  "aa_iters_lhs,aa_iters_rhs,lambda_beta,u_par_beta,gamma,"
                  "eps_par,entropy,d_mass,d_momentum,d_energy")

    def csv_row(self):
        vals = [self.step, self.t, self.dt, self.n_cfl, self.min_f, self.mass,
                self.momentum, self.energy, self.lin_iters, self.aa_iters_lhs,
                self.aa_iters_rhs, self.lambda_beta, self.u_par_beta, self.gamma,
                self.eps_par, self.entropy, self.d_mass, self.d_momentum,
                self.d_energy]
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in vals)


def track_step(f_values, grid, step, t, dt, n_cfl, initial=None, **extra):
    """Build a StepReport from the current state; deltas vs `initial`
    (mass, momentum, energy) when provided."""
    f = np.asarray(f_values, dtype=float)
    mass, mom, en = conserved_moments(f, grid)
    rep = StepReport(
        step=step, t=t, dt=dt, n_cfl=n_cfl,
        min_f=float(np.min(f)), mass=mass, momentum=mom, energy=en,
        entropy=entropy(f, grid), **extra,
    )
    if initial is not None:
        rep.d_mass = mass - initial[0]
        rep.d_momentum = mom - initial[1]
        rep.d_energy = en - initial[2]
    return rep
