"""Structure-preserving penalized implicit solver for the single-species
Rosenbluth-Fokker-Planck collision operator in cylindrical velocity space,
with a generic anisotropic-diffusion engine and adaptive positivity-
preserving timestepping."""

__version__ = "0.1.0"
