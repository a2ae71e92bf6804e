"""Prescribed-mean-curvature graphs on the flat torus: solver and diagnostics."""

from .grid import (
    TorusGrid,
    ScalarField,
    GradientField,
    gradient,
    divergence,
    mean,
    lp_norm,
    sobolev_norm,
    c1_norm,
    interpolate,
    read_field,
    write_field,
)

__all__ = [
    "TorusGrid",
    "ScalarField",
    "GradientField",
    "gradient",
    "divergence",
    "mean",
    "lp_norm",
    "sobolev_norm",
    "c1_norm",
    "interpolate",
    "read_field",
    "write_field",
]

__version__ = "0.1.0"
