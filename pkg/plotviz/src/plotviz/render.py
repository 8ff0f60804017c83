"""Figure renderers for the five plot kinds.

All figures are rendered with the Agg backend at a fixed dpi and stripped
PNG metadata, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import formats  # noqa: E402

KINDS = ("snapshot-grid", "history", "rates", "convergence", "conservation")
_SAVE_KW = dict(dpi=110, metadata={"Software": None})


@dataclass
class PlotSpec:
    """What to render: input CSVs, figure kind, output path, axis options."""

    kind: str
    inputs: tuple[str, ...]
    output: str
    log_value: bool = False
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}")
        if not self.inputs:
            raise formats.SchemaError("no input files given")
        for p in self.inputs:
            if not Path(p).exists():
                raise formats.SchemaError(f"input file {p} does not exist")


def render(spec):
    """Render the figure described by ``spec``; returns the output path."""
    fig = _RENDERERS[spec.kind](spec)
    fig.savefig(spec.output, **_SAVE_KW)
    plt.close(fig)
    return spec.output


def _render_snapshot_grid(spec):
    snaps = [formats.read_snapshot(p) for p in spec.inputs[:4]]
    n = len(snaps)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    for ax, snap, path in zip(axes[0], snaps, spec.inputs):
        vals = np.log10(np.maximum(np.abs(snap.values), 1e-300)) if spec.log_value \
            else snap.values
        im = ax.pcolormesh(snap.coords2, snap.coords1, vals, shading="nearest")
        ax.set_xlabel("coord2")
        ax.set_ylabel("coord1")
        ax.set_title(Path(path).stem, fontsize=8)
        fig.colorbar(im, ax=ax, shrink=0.8)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


def _render_history(spec):
    data = formats.read_diagnostics(spec.inputs[0])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.0))
    ax1.plot(data["t"], data["min_f"], lw=1.0)
    ax1.axhline(0.0, color="k", lw=0.5)
    ax1.set_xlabel("t")
    ax1.set_ylabel("min f")
    ax2.semilogy(data["t"], np.maximum(data["n_cfl"], 1e-12), lw=1.0)
    ax2.set_xlabel("t")
    ax2.set_ylabel("N_CFL")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


def _render_rates(spec):
    data = formats.read_rates(spec.inputs[0])
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    order = np.argsort(data["u_par"])
    u = data["u_par"][order]
    for name, color in (("nu_s", "C0"), ("nu_perp", "C1"), ("nu_par", "C2")):
        ax.loglog(u, data[f"{name}_th"][order], "-", color=color, lw=1.0,
                  label=f"{name} theory")
        ax.loglog(u, data[f"{name}_num"][order], "o", color=color, ms=4,
                  mfc="none", label=f"{name} numerical")
    ax.set_xlabel("u_par")
    ax.set_ylabel("rate")
    ax.legend(fontsize=6)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return fig


def _render_convergence(spec):
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    for path in spec.inputs:
        xname, xs, errs, slope = formats.read_convergence(path)
        label = f"{Path(path).stem}"
        if slope is not None:
            label += f" (slope {slope:.2f})"
        ax.loglog(xs, errs, "o-", ms=4, label=label)
        ax.set_xlabel(xname)
    ax.set_ylabel("L2 error")
    ax.legend(fontsize=7)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return fig


def _render_conservation(spec):
    data = formats.read_diagnostics(spec.inputs[0])
    fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.0))
    for ax, key in zip(axes, ("d_mass", "d_momentum", "d_energy")):
        ax.semilogy(data["t"], np.maximum(np.abs(data[key]), 1e-300), lw=1.0)
        ax.set_xlabel("t")
        ax.set_ylabel(f"|{key}|")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


_RENDERERS = {
    "snapshot-grid": _render_snapshot_grid,
    "history": _render_history,
    "rates": _render_rates,
    "convergence": _render_convergence,
    "conservation": _render_conservation,
}
