"""Spatiotemporal autoregression for compositional areal panels.

Compositions are mapped to ilr coordinates, modelled with a multivariate
spatial and temporal autoregression, and estimated by quasi maximum
likelihood.
"""

__version__ = "0.1.0"

from .estimate import FitOptions, FitResult, concentrated_loglik, fit, loglik
from .exceptions import CompostarError, NumericalError, ValidationError
from .model import ModelParams, PanelData, SpatialFilter, stability_check
from .simplex import IlrBasis, build_basis, clr, clr_inv, closure, ilr, ilr_inv
from .simulate import SimConfig, simulate
from .weights import SpatialWeights, distance_cutoff, from_adjacency, rook_grid, row_standardize

__all__ = [
    "CompostarError",
    "FitOptions",
    "FitResult",
    "IlrBasis",
    "ModelParams",
    "NumericalError",
    "PanelData",
    "SimConfig",
    "SpatialFilter",
    "SpatialWeights",
    "ValidationError",
    "build_basis",
    "closure",
    "clr",
    "clr_inv",
    "concentrated_loglik",
    "distance_cutoff",
    "fit",
    "from_adjacency",
    "ilr",
    "ilr_inv",
    "loglik",
    "rook_grid",
    "row_standardize",
    "simulate",
    "stability_check",
]
