"""sdhom: variational homogenization of periodic maximal monotone fields.

The package builds selfdual Lagrangian representations of monotone
vector fields, homogenizes them through periodic cell problems, solves
divergence-form Dirichlet problems with a zero-infimum certificate, and
provides numerical convergence harnesses for the limit passage.
"""

from .grids import BoxGrid, GapReport, TabulatedFunction
from .convex import (
    graph_extract,
    inf_convolution,
    legendre_transform,
    moreau_regularize,
    prox,
    selfdual_gap_check,
    swap_args,
)

__version__ = "0.1.0"
