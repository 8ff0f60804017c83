"""Cartesian anisotropic-diffusion operator Q(f) = div(D grad f).

Diagonal fluxes a*df/dx, c*df/dy are centrally differenced. Off-diagonal
fluxes b*df/dy (resp. b*df/dx) are "advectionalized": written as
phi*f with phi = b * d(ln f) evaluated at faces through four-corner
averages of ln f, and the face value of f reconstructed with a
monotone SMART-limited QUICK scheme. Zero-flux boundaries are enforced by
zeroing boundary-face fluxes, which makes the cell-volume-weighted sum of
Q(f) telescope to exactly zero.

The per-cell eigen-decomposition of D feeds the penalization coefficient
beta = lambda_1 / 2 and the adaptive timestep controller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, PositivityError
from .mesh import GridSpec

LOG_FLOOR = 1e-300  # floor before taking logs; avoids -inf only
BETA_FLOOR_FRACTION = 1e-3  # beta floored at this fraction of max lambda_1

# Relative tail floor for the advectionalized log gradients. A Gaussian tail
# has |grad ln f| growing linearly in radius, and round-off-scale cells
# floored at the absolute LOG_FLOOR contrast against their neighbors by
# hundreds of log units; both produce explicit advection far stiffer than
# the implicit isotropic damping can absorb at large timesteps. Flooring
# the log input at a fraction of max(f) flattens gradients only where
# f <= 1e-6 max(f), which is dynamically irrelevant, and caps the advective
# coefficients at the crossing-level slope.
TAIL_FLOOR_REL = 1e-6


def eigen_decompose(a, b, c):
    """Eigenvalues (lam1 >= lam2) and principal angle of [[a, b], [b, c]].

    Works elementwise on arrays. theta in (-pi/2, pi/2] is the angle of the
    lam1 eigenvector; for b = 0, theta = 0 when a >= c and pi/2 otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    mean = 0.5 * (a + c)
    disc = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    lam1 = mean + disc
    # product form avoids the cancellation of mean - disc for small lam2
    det = a * c - b * b
    lam2 = np.where(lam1 > 0.0, det / np.where(lam1 > 0.0, lam1, 1.0), mean - disc)
    theta = 0.5 * np.arctan2(2.0 * b, a - c)
    # arctan2(0, 0) -> 0 covers the isotropic case; fold to (-pi/2, pi/2]
    theta = np.where(theta <= -0.5 * np.pi, theta + np.pi, theta)
    return lam1, lam2, theta


@dataclass
class DiffusionTensorField:
    """Symmetric 2x2 tensor per cell: components a, b, c plus eigen data."""

    grid: GridSpec
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lam1: np.ndarray = field(init=False, repr=False)
    lam2: np.ndarray = field(init=False, repr=False)
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.a = np.broadcast_to(np.asarray(self.a, dtype=float), self.grid.shape).copy()
        self.b = np.broadcast_to(np.asarray(self.b, dtype=float), self.grid.shape).copy()
        self.c = np.broadcast_to(np.asarray(self.c, dtype=float), self.grid.shape).copy()
        if np.any(self.a < 0) or np.any(self.c < 0):
            raise DegenerateInputError("diagonal tensor entries must be nonnegative")
        det = self.a * self.c - self.b * self.b
        scale = max(float(np.max(self.a * self.c)), 1.0)
        if np.any(det < -1e-12 * scale):
            raise DegenerateInputError("tensor field is not positive semi-definite")
        self.lam1, self.lam2, self.theta = eigen_decompose(self.a, self.b, self.c)


def rotated_tensor(lam1, lam2, theta):
    """(a, b, c) of R(theta) diag(lam1, lam2) R(theta)^T."""
    ct, st = np.cos(theta), np.sin(theta)
    a = lam1 * ct * ct + lam2 * st * st
    c = lam1 * st * st + lam2 * ct * ct
    b = (lam1 - lam2) * ct * st
    return a, b, c


def beta_field(D):
    """Penalization coefficient beta = lambda_1 / 2, floored where lambda_1 = 0.

    The floor 1e-3 * max(lambda_1) keeps the implicit operator invertible on
    tensors that are exactly singular somewhere (ring test at the origin).
    """
    lam1_max = float(np.max(D.lam1))
    if lam1_max <= 0.0:
        raise DegenerateInputError("all-zero diffusion tensor field")
    return np.maximum(0.5 * D.lam1, BETA_FLOOR_FRACTION * lam1_max)


def aniso_ratio_max(D, beta):
    """max over the mesh of (lambda_1 - lambda_2) / (2 beta), the local
    inverse stiffness ratio driving the adaptive timestep rule."""
    return float(np.max((D.lam1 - D.lam2) / (2.0 * beta)))


def smart_limiter(r):
    """SMART bounds applied to the QUICK reconstruction: psi(r) = max(0, min(2r, 0.25 + 0.75r, 4))."""
    r = np.asarray(r, dtype=float)
    return np.maximum(0.0, np.minimum(np.minimum(2.0 * r, 0.25 + 0.75 * r), 4.0))


def smart_face_value(f_upwind2, f_upwind, f_downwind, flow_sign=1.0):
    """Monotone face reconstruction from an upwind-ordered triple.

    The value is the QUICK reconstruction limited by the SMART bounds and
    finally clamped into [min(f_upwind, f_downwind), max(...)], so the result
    is always bounded by its neighbors and reduces to the upwind value at
    local extrema. ``flow_sign`` only documents the orientation the caller
    used; the triple must already be ordered along the flow.
    """
    f_uu = np.asarray(f_upwind2, dtype=float)
    f_u = np.asarray(f_upwind, dtype=float)
    f_d = np.asarray(f_downwind, dtype=float)
    den = f_d - f_u
    safe = np.where(np.abs(den) > 0.0, den, 1.0)
    r = (f_u - f_uu) / safe
    face = f_u + 0.5 * smart_limiter(r) * den
    face = np.where(np.abs(den) > 0.0, face, f_u)
    lo = np.minimum(f_u, f_d)
    hi = np.maximum(f_u, f_d)
    out = np.minimum(np.maximum(face, lo), hi)
    return out if out.ndim else float(out)


def _smart_faces_axis0(fp, phi):
    """Face values for interior direction-1 faces of a padded array.

    fp has one ghost layer; faces k = 1..n1-1 sit between interior cells
    k-1 and k.  For the flux +phi*f_face the advective velocity is -phi, so
    phi > 0 transports from the high-index side: upwind cell k, second-upwind
    k+1, downwind k-1.  Second-upwind cells that fall in the ghost layer drop
    the stencil to first-order upwind.
    """
    n1 = fp.shape[0] - 2
    left = fp[1:n1, 1:-1]      # cell k-1, interior rows
    right = fp[2 : n1 + 1, 1:-1]  # cell k
    uu_pos = fp[3 : n1 + 2, 1:-1]  # cell k+1 (ghost when k = n1-1)
    uu_neg = fp[0 : n1 - 1, 1:-1]  # cell k-2 (ghost when k = 1)
    face_pos = smart_face_value(uu_pos, right, left)
    face_neg = smart_face_value(uu_neg, left, right)
    # boundary-adjacent stencils: second upwind lives in the ghost layer
    face_pos[-1, :] = right[-1, :]
    face_neg[0, :] = left[0, :]
    return np.where(phi > 0.0, face_pos, face_neg)


def _smart_faces_axis1(fp, phi):
    """Same as :func:`_smart_faces_axis0` for direction-2 faces."""
    n2 = fp.shape[1] - 2
    left = fp[1:-1, 1:n2]
    right = fp[1:-1, 2 : n2 + 1]
    uu_pos = fp[1:-1, 3 : n2 + 2]
    uu_neg = fp[1:-1, 0 : n2 - 1]
    face_pos = smart_face_value(uu_pos, right, left)
    face_neg = smart_face_value(uu_neg, left, right)
    face_pos[:, -1] = right[:, -1]
    face_neg[:, 0] = left[:, 0]
    return np.where(phi > 0.0, face_pos, face_neg)


def _corner_log(fp):
    """ln f at cell corners as the average of the four surrounding centers."""
    lnf = np.log(np.maximum(fp, LOG_FLOOR))
    return 0.25 * (lnf[:-1, :-1] + lnf[1:, :-1] + lnf[:-1, 1:] + lnf[1:, 1:])


class _FaceTensors:
    """Arithmetic face averages of a static tensor field (cached)."""

    def __init__(self, D):
        self.a_face = 0.5 * (D.a[:-1, :] + D.a[1:, :])
        self.b_face1 = 0.5 * (D.b[:-1, :] + D.b[1:, :])
        self.c_face = 0.5 * (D.c[:, :-1] + D.c[:, 1:])
        self.b_face2 = 0.5 * (D.b[:, :-1] + D.b[:, 1:])


def apply_Q(f_values, D, grid, faces=None):
    """Anisotropic diffusion operator with zero-flux boundaries.

    Returns the cell-centered divergence of the diagonal (central) plus
    advectionalized off-diagonal fluxes. Requires strictly positive input
    (the off-diagonal coefficients divide by f through ln f). ``faces``
    optionally carries precomputed face tensors for repeated applications.
    """
    f = np.asarray(f_values, dtype=float)
    if np.any(f <= 0.0):
        raise PositivityError("apply_Q requires strictly positive f")
    n1, n2 = grid.shape
    dx, dy = grid.d1, grid.d2
    fp = np.empty((n1 + 2, n2 + 2))
    fp[1:-1, 1:-1] = f
    fp[0, 1:-1] = f[0]
    fp[-1, 1:-1] = f[-1]
    fp[1:-1, 0] = f[:, 0]
    fp[1:-1, -1] = f[:, -1]
    fp[0, 0], fp[0, -1], fp[-1, 0], fp[-1, -1] = f[0, 0], f[0, -1], f[-1, 0], f[-1, -1]

    floor = TAIL_FLOOR_REL * float(np.max(f))
    all_safe = float(np.min(f)) > floor
    if all_safe:
        corners = _corner_log(fp)
    else:
        flog = np.maximum(fp, floor)
        corners = _corner_log(flog)
        # advectionalization (division by f through ln f) is meaningful
        # only where the stencil is safely positive; faces touching floored
        # cells fall back to the plain central off-diagonal flux, which the
        # penalized Fourier analysis covers directly
        corner_safe = (fp[:-1, :-1] > floor) & (fp[1:, :-1] > floor) \
            & (fp[:-1, 1:] > floor) & (fp[1:, 1:] > floor)
        corner_f = 0.25 * (fp[:-1, :-1] + fp[1:, :-1] + fp[:-1, 1:] + fp[1:, 1:])

    ft = faces or _FaceTensors(D)

    # direction-1 (x) faces, interior k = 1..n1-1
    J1 = np.zeros((n1 + 1, n2))
    J1[1:-1, :] = ft.a_face * (f[1:, :] - f[:-1, :]) / dx
    phi1 = ft.b_face1 * (corners[1:-1, 1:] - corners[1:-1, :-1]) / dy
    adv1 = phi1 * _smart_faces_axis0(fp, phi1)
    if all_safe:
        J1[1:-1, :] += adv1
    else:
        safe1 = corner_safe[1:-1, 1:] & corner_safe[1:-1, :-1]
        central1 = ft.b_face1 * (corner_f[1:-1, 1:] - corner_f[1:-1, :-1]) / dy
        J1[1:-1, :] += np.where(safe1, adv1, central1)

    # direction-2 (y) faces, interior m = 1..n2-1
    J2 = np.zeros((n1, n2 + 1))
    J2[:, 1:-1] = ft.c_face * (f[:, 1:] - f[:, :-1]) / dy
    phi2 = ft.b_face2 * (corners[1:, 1:-1] - corners[:-1, 1:-1]) / dx
    adv2 = phi2 * _smart_faces_axis1(fp, phi2)
    if all_safe:
        J2[:, 1:-1] += adv2
    else:
        safe2 = corner_safe[1:, 1:-1] & corner_safe[:-1, 1:-1]
        central2 = ft.b_face2 * (corner_f[1:, 1:-1] - corner_f[:-1, 1:-1]) / dx
        J2[:, 1:-1] += np.where(safe2, adv2, central2)

    return (J1[1:, :] - J1[:-1, :]) / dx + (J2[:, 1:] - J2[:, :-1]) / dy
