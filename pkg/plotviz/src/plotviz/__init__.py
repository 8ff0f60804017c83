"""Read-only figure rendering for the solver's CSV artifacts.

The package consumes the documented CSV formats (field snapshots,
per-step diagnostics, rate tables, convergence tables) and renders
paper-style figures. No numerical post-processing happens here beyond
axis transforms.
"""

__version__ = "0.1.0"
