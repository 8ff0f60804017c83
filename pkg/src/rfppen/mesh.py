"""Structured 2D grids, cell-centered fields, quadrature, and moments.

Two grid kinds are supported:

* ``cylindrical`` velocity grids (v_perp, v_par) with centers
  v_perp_i = (i - 1/2) dv_perp, v_par_j = v_par_min + (j - 1/2) dv_par and
  cell volumes 2*pi*v_perp_i*dv_perp*dv_par (azimuthal symmetry),
* ``cartesian`` (x, y) grids with volumes dx*dy.

All moment integrals use midpoint quadrature, the same sums the conservative
flux discretizations telescope against, so "conserved" and "measured"
moments are one and the same quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, DomainError

GHOST_POLICIES = ("zero-flux", "maxwellian-fill", "dirichlet-far-field")


@dataclass
class GridSpec:
    """Structured 2D grid with cell centers, faces, and quadrature weights."""

    kind: str
    n1: int
    n2: int
    bounds1: tuple[float, float]
    bounds2: tuple[float, float]
    d1: float = field(init=False)
    d2: float = field(init=False)
    centers1: np.ndarray = field(init=False, repr=False)
    centers2: np.ndarray = field(init=False, repr=False)
    faces1: np.ndarray = field(init=False, repr=False)
    faces2: np.ndarray = field(init=False, repr=False)
    cell_vol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lo1, hi1 = self.bounds1
        lo2, hi2 = self.bounds2
        self.d1 = (hi1 - lo1) / self.n1
        self.d2 = (hi2 - lo2) / self.n2
        self.faces1 = lo1 + self.d1 * np.arange(self.n1 + 1)
        self.faces2 = lo2 + self.d2 * np.arange(self.n2 + 1)
        self.centers1 = lo1 + self.d1 * (np.arange(self.n1) + 0.5)
        self.centers2 = lo2 + self.d2 * (np.arange(self.n2) + 0.5)
        if self.kind == "cylindrical":
            w1 = 2.0 * np.pi * self.centers1 * self.d1
        else:
            w1 = np.full(self.n1, self.d1)
        self.cell_vol = np.outer(w1, np.full(self.n2, self.d2))

    @property
    def shape(self):
        return (self.n1, self.n2)

    def mesh_centers(self):
        """Broadcastable center coordinate arrays (c1 column, c2 row)."""
        return self.centers1[:, None], self.centers2[None, :]


def build_grid(kind, n1, n2, bounds1, bounds2):
    """Construct a GridSpec, validating counts and bounds."""
    if kind not in ("cylindrical", "cartesian"):
        raise ConfigurationError(f"unknown grid kind {kind!r}")
    if n1 < 4 or n2 < 4:
        raise ConfigurationError("grids need at least 4 cells per direction")
    lo1, hi1 = float(bounds1[0]), float(bounds1[1])
    lo2, hi2 = float(bounds2[0]), float(bounds2[1])
    if not (hi1 > lo1 and hi2 > lo2):
        raise ConfigurationError("empty grid bounds")
    if kind == "cylindrical" and lo1 != 0.0:
        raise ConfigurationError("cylindrical grids start at v_perp = 0")
    return GridSpec(kind, int(n1), int(n2), (lo1, hi1), (lo2, hi2))


@dataclass
class ScalarField2D:
    """Cell-centered scalar field with a ghost-fill policy tag.

    For the ``maxwellian-fill`` policy the analytic Maxwellian parameters
    (n, u_par, v_th) used to populate far ghosts are carried on the field.
    """

    grid: GridSpec
    values: np.ndarray
    ghost_policy: str = "zero-flux"
    maxwell_params: tuple[float, float, float] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigurationError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if self.ghost_policy not in GHOST_POLICIES:
            raise ConfigurationError(f"unknown ghost policy {self.ghost_policy!r}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field values must be finite")

    def with_values(self, values):
        return ScalarField2D(self.grid, values, self.ghost_policy, self.maxwell_params)


@dataclass
class FaceField2D:
    """Face-centered values: direction-1 faces (n1+1, n2), direction-2 (n1, n2+1)."""

    grid: GridSpec
    values1: np.ndarray
    values2: np.ndarray

    def __post_init__(self):
        n1, n2 = self.grid.shape
        if self.values1.shape != (n1 + 1, n2) or self.values2.shape != (n1, n2 + 1):
            raise ConfigurationError("face value shapes do not match grid faces")


@dataclass
class MomentSet:
    """Density, drift, and temperatures of a distribution (T_perp per degree of freedom)."""

    n: float
    u_par: float
    T: float
    T_perp: float
    T_par: float
    v_th: float


def maxwellian_values(grid, n, u_par, v_th, d=3):
    """Raw array of the drifting Maxwellian sampled at cell centers."""
    if n <= 0 or v_th <= 0:
        raise DomainError("maxwellian requires n > 0 and v_th > 0")
    if d not in (2, 3):
        raise DomainError("dimension d must be 2 or 3")
    c1, c2 = grid.mesh_centers()
    arg = (c1 * c1 + (c2 - u_par) ** 2) / (2.0 * v_th * v_th)
    return n / ((2.0 * np.pi) ** (d / 2.0) * v_th**d) * np.exp(-arg)


def maxwellian(grid, n, u_par, v_th, d=3, ghost_policy="maxwellian-fill"):
    """Drifting Maxwellian field f^M(v) = n/((2 pi)^{d/2} v_th^d) exp(-|v-u|^2 / 2 v_th^2)."""
    vals = maxwellian_values(grid, n, u_par, v_th, d)
    return ScalarField2D(grid, vals, ghost_policy, (float(n), float(u_par), float(v_th)))


def integrate(values, grid):
    """Midpoint quadrature of a cell-centered array."""
    return float(np.sum(values * grid.cell_vol))


def moments(f, grid=None, m=1.0):
    """Midpoint-quadrature moments of a distribution.

    T_par = m <(v_par - u)^2 f>/n, T_perp = m <v_perp^2 f>/(2n) per
    perpendicular degree of freedom, so T = (2 T_perp + T_par)/3.
    """
    if isinstance(f, ScalarField2D):
        grid = f.grid
        vals = f.values
    else:
        vals = np.asarray(f)
    if grid is None:
        raise ConfigurationError("moments needs a grid")
    vol = grid.cell_vol
    c1, c2 = grid.mesh_centers()
    n = float(np.sum(vals * vol))
    if n <= 0.0:
        raise DegenerateInputError("distribution has nonpositive mass")
    u_par = float(np.sum(c2 * vals * vol)) / n
    T_par = m * float(np.sum((c2 - u_par) ** 2 * vals * vol)) / n
    T_perp = 0.5 * m * float(np.sum(c1 * c1 * vals * vol)) / n
    T = (2.0 * T_perp + T_par) / 3.0
    return MomentSet(n, u_par, T, T_perp, T_par, math.sqrt(max(T, 0.0) / m))


def conserved_moments(values, grid):
    """(mass, parallel momentum, energy) with energy = <v^2, f>."""
    vol = grid.cell_vol
    c1, c2 = grid.mesh_centers()
    mass = float(np.sum(values * vol))
    mom = float(np.sum(c2 * values * vol))
    energy = float(np.sum((c1 * c1 + c2 * c2) * values * vol))
    return mass, mom, energy


def match_maxwellian_to_moments(grid, mass, momentum, energy, d=3, tol=1e-13, max_iter=50):
    """Parameters (n, u_par, v_th) of the sampled Maxwellian whose *discrete*
    moments equal the given conserved (mass, momentum, energy).

    Midpoint quadrature of a sampled Maxwellian carries an O(dv_perp^2) offset
    from the analytic moments (the v_perp = 0 boundary term), so the discrete
    equilibrium selected by conservation is the Maxwellian solving this
    3x3 moment-matching system, not the analytically parametrized one.
    Newton iteration from the analytic-map initial guess.
    """
    if mass <= 0:
        raise DegenerateInputError("nonpositive mass")
    u0 = momentum / mass
    T0 = (energy / mass - u0 * u0) / 3.0
    if T0 <= 0:
        raise DegenerateInputError("nonpositive temperature from moments")
    x = np.array([mass, u0, math.sqrt(T0)])
    target = np.array([mass, momentum, energy])
    scale = np.array([abs(mass), max(abs(momentum), abs(mass) * x[2]), abs(energy)])

    def residual(p):
        vals = maxwellian_values(grid, p[0], p[1], p[2], d)
        return np.array(conserved_moments(vals, grid)) - target

    for _ in range(max_iter):
        r = residual(x)
        if np.all(np.abs(r) <= tol * scale):
            return float(x[0]), float(x[1]), float(x[2])
        # finite-difference Jacobian; the system is small and well scaled
        J = np.empty((3, 3))
        for k in range(3):
            h = 1e-7 * max(abs(x[k]), 1e-8)
            xp = x.copy()
            xp[k] += h
            J[:, k] = (residual(xp) - r) / h
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise DegenerateInputError("maxwellian moment match is singular") from exc
        x = x + dx
        if x[0] <= 0 or x[2] <= 0:
            raise DegenerateInputError("maxwellian moment match left the domain")
    raise DegenerateInputError("maxwellian moment match did not converge")


def pad_ghosts(f, grid=None, policy=None, maxwell_params=None):
    """Return an (n1+2, n2+2) array with one ghost layer per side.

    ``zero-flux`` mirrors the adjacent interior cell on every side. The
    ``maxwellian-fill`` policy evaluates the analytic Maxwellian at the ghost
    centers of the three far boundaries of a cylindrical grid; the v_perp = 0
    axis side is an even reflection (same physical locus rotated by pi), so it
    mirrors the first interior row.
    """
    if isinstance(f, ScalarField2D):
        grid = f.grid
        policy = policy or f.ghost_policy
        maxwell_params = maxwell_params or f.maxwell_params
        vals = f.values
    else:
        vals = np.asarray(f)
        policy = policy or "zero-flux"
    n1, n2 = grid.shape
    out = np.empty((n1 + 2, n2 + 2))
    out[1:-1, 1:-1] = vals
    if policy == "zero-flux":
        out[0, 1:-1] = vals[0, :]
        out[-1, 1:-1] = vals[-1, :]
        out[1:-1, 0] = vals[:, 0]
        out[1:-1, -1] = vals[:, -1]
        out[0, 0] = vals[0, 0]
        out[0, -1] = vals[0, -1]
        out[-1, 0] = vals[-1, 0]
        out[-1, -1] = vals[-1, -1]
        return out
    if policy == "maxwellian-fill":
        if maxwell_params is None:
            raise ConfigurationError("maxwellian-fill requires maxwell parameters")
        n, u_par, v_th = maxwell_params
        g1 = np.concatenate(([grid.centers1[0] - grid.d1], grid.centers1, [grid.centers1[-1] + grid.d1]))
        g2 = np.concatenate(([grid.centers2[0] - grid.d2], grid.centers2, [grid.centers2[-1] + grid.d2]))
        d = 3 if grid.kind == "cylindrical" else 2
        fm = n / ((2.0 * np.pi) ** (d / 2.0) * v_th**d) * np.exp(
            -(g1[:, None] ** 2 + (g2[None, :] - u_par) ** 2) / (2.0 * v_th**2)
        )
        out[:, 0] = fm[:, 0]
        out[:, -1] = fm[:, -1]
        out[-1, :] = fm[-1, :]
        if grid.kind == "cylindrical":
            out[0, :] = out[1, :]  # axis: even reflection
        else:
            out[0, :] = fm[0, :]
        return out
    raise ConfigurationError(f"pad_ghosts cannot fill policy {policy!r}")


# --- field snapshot CSV format -------------------------------------------------
#
# Line 1:  "# <kind>,<n1>,<n2>,<lo1>,<hi1>,<lo2>,<hi2>"
# Line 2:  "i,j,coord1,coord2,value"
# Then n1*n2 rows, row-major in i (i outer loop), 1-based indices, floats
# written with repr (shortest round-trip representation) for bit-exactness.


def save_field(path, f):
    """Write a ScalarField2D snapshot in the documented CSV format."""
    grid = f.grid
    lo1, hi1 = grid.bounds1
    lo2, hi2 = grid.bounds2
    lines = [f"# {grid.kind},{grid.n1},{grid.n2},{lo1!r},{hi1!r},{lo2!r},{hi2!r}"]
    lines.append("i,j,coord1,coord2,value")
    vals = f.values
    for i in range(grid.n1):
        c1 = float(grid.centers1[i])
        for j in range(grid.n2):
            lines.append(
                f"{i + 1},{j + 1},{c1!r},{float(grid.centers2[j])!r},{float(vals[i, j])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path, ghost_policy="zero-flux"):
    """Read a snapshot CSV back into a ScalarField2D."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# "):
            raise ConfigurationError(f"{path}: missing grid header line")
        parts = header[2:].split(",")
        if len(parts) != 7:
            raise ConfigurationError(f"{path}: malformed grid header")
        kind = parts[0]
        n1, n2 = int(parts[1]), int(parts[2])
        b1 = (float(parts[3]), float(parts[4]))
        b2 = (float(parts[5]), float(parts[6]))
        cols = fh.readline().strip()
        if cols != "i,j,coord1,coord2,value":
            raise ConfigurationError(f"{path}: unexpected column header {cols!r}")
        grid = build_grid(kind, n1, n2, b1, b2)
        vals = np.empty((n1, n2))
        count = 0
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i_s, j_s, _, _, v_s = line.split(",")
            vals[int(i_s) - 1, int(j_s) - 1] = float(v_s)
            count += 1
        if count != n1 * n2:
            raise ConfigurationError(f"{path}: expected {n1 * n2} rows, got {count}")
    return ScalarField2D(grid, vals, ghost_policy)
