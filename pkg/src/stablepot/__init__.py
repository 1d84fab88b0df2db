"""Potential theory of rotationally symmetric alpha-stable processes on bounded domains.

Modules
-------
geometry        domains, stable indices, boundary meshes
kernels         closed-form Green, Poisson and Martin kernels on balls
quad            singular quadrature and the discretised Green operator
sampler         walk-on-spheres exit sampling
martin          Martin kernels as boundary ratio limits, 3G ratios
conditioned     h-conditioned processes and conditional lifetimes
schrodinger     gauge, conditional gauge and the Schrodinger Green function
representation  Martin/Green decomposition of nonnegative harmonic functions
cli             batch command line
"""

from . import conditioned, geometry, kernels, martin, quad, representation, rng, sampler, schrodinger
from .errors import (
    DimensionMismatch,
    EnvelopeFailure,
    MaxStepsExceeded,
    NonContraction,
    NotGaugeable,
    NotHarmonic,
    NumericalFailure,
    QuadratureError,
    RecurrentRegime,
    StablePotError,
    ValidationError,
)
from .geometry import Ball, Box, Polytope, StableIndex, domain_from_dict

__version__ = "0.1.0"

__all__ = [
    "Ball", "Box", "Polytope", "StableIndex", "domain_from_dict",
    "conditioned", "geometry", "kernels", "martin", "quad", "representation", "rng", "sampler", "schrodinger",
    "DimensionMismatch", "EnvelopeFailure", "MaxStepsExceeded", "NonContraction", "NotGaugeable",
    "NotHarmonic", "NumericalFailure", "QuadratureError", "RecurrentRegime", "StablePotError",
    "ValidationError",
]
