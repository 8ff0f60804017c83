"""Parsers for the solver's documented CSV formats.

Field snapshot:
    line 1: "# <kind>,<n1>,<n2>,<lo1>,<hi1>,<lo2>,<hi2>"
    line 2: "i,j,coord1,coord2,value"
    then n1*n2 rows, row-major in i, 1-based indices.

Diagnostics stream: header
    step,t,dt,n_cfl,min_f,mass,momentum,energy,lin_iters,aa_iters_lhs,
    aa_iters_rhs,lambda_beta,u_par_beta,gamma,eps_par,entropy,d_mass,
    d_momentum,d_energy

Rates table: header
    u_par,nu_s_num,nu_s_th,nu_perp_num,nu_perp_th,nu_par_num,nu_par_th

Convergence table: "dt,l2_error" or "h,l2_error" rows plus a trailing
"# fitted_slope,<value>" comment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

DIAGNOSTICS_COLUMNS = (
    "step", "t", "dt", "n_cfl", "min_f", "mass", "momentum", "energy",
    "lin_iters", "aa_iters_lhs", "aa_iters_rhs", "lambda_beta", "u_par_beta",
    "gamma", "eps_par", "entropy", "d_mass", "d_momentum", "d_energy",
)

RATES_COLUMNS = ("u_par", "nu_s_num", "nu_s_th", "nu_perp_num", "nu_perp_th",
                 "nu_par_num", "nu_par_th")


class SchemaError(ValueError):
    """A CSV artifact does not match its documented schema."""


@dataclass
class Snapshot:
    kind: str
    n1: int
    n2: int
    bounds1: tuple[float, float]
    bounds2: tuple[float, float]
    coords1: np.ndarray
    coords2: np.ndarray
    values: np.ndarray


def read_snapshot(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# "):
            raise SchemaError(f"{path}: missing grid header line")
        parts = header[2:].split(",")
        if len(parts) != 7:
            raise SchemaError(f"{path}: grid header needs 7 fields, got {len(parts)}")
        kind = parts[0]
        n1, n2 = int(parts[1]), int(parts[2])
        b1 = (float(parts[3]), float(parts[4]))
        b2 = (float(parts[5]), float(parts[6]))
        cols = fh.readline().strip()
        if cols != "i,j,coord1,coord2,value":
            raise SchemaError(f"{path}: unexpected column header {cols!r}")
        values = np.empty((n1, n2))
        c1 = np.empty(n1)
        c2 = np.empty(n2)
        count = 0
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i_s, j_s, x1, x2, v = line.split(",")
            i, j = int(i_s) - 1, int(j_s) - 1
            values[i, j] = float(v)
            c1[i] = float(x1)
            c2[j] = float(x2)
            count += 1
        if count != n1 * n2:
            raise SchemaError(f"{path}: expected {n1 * n2} rows, got {count}")
    return Snapshot(kind, n1, n2, b1, b2, c1, c2, values)


def _read_table(path, required):
    with open(path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = [r for r in reader if r[required[0]] and not
                r[required[0]].startswith("#")]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = {col: np.array([float(r[col]) for r in rows]) for col in required}
    return data


def read_diagnostics(path):
    return _read_table(path, DIAGNOSTICS_COLUMNS)


def read_rates(path):
    return _read_table(path, RATES_COLUMNS)


def read_convergence(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) != 2 or header[1] != "l2_error":
        raise SchemaError(f"{path}: missing column 'l2_error'")
    xname = header[0]
    xs, errs = [], []
    slope = None
    for ln in lines[1:]:
        if ln.startswith("#"):
            parts = ln[1:].strip().split(",")
            if parts[0] == "fitted_slope":
                slope = float(parts[1])
            continue
        x_s, e_s = ln.split(",")
        xs.append(float(x_s))
        errs.append(float(e_s))
    if not xs:
        raise SchemaError(f"{path}: no data rows")
    return xname, np.array(xs), np.array(errs), slope
