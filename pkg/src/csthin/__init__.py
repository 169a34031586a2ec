"""Thinned planar array synthesis by reweighted l1 minimization with
spacing and mutual-coupling constraints."""

from .coupling import (
    CouplingModel,
    coupling_burden,
    coupling_vectors,
    mutual_impedance,
    s12_to_z12,
    z_to_s12,
)
from .errors import (
    CsThinError,
    DegenerateNetworkError,
    InfeasibleError,
    InsufficientResolutionError,
    InvalidArgumentError,
    OutOfDomainError,
    PatternFormatError,
    UndefinedDirectivityError,
)
from .fields import (
    DirectionGrid,
    FarFieldPattern,
    IsotropicPattern,
    TabulatedPattern,
    build_steering,
    directivity,
    evaluate_pattern,
    hemisphere_grid,
    pattern_metrics,
    thetaphi_to_azel,
)
from .geometry import ArrayGrid, build_grid, pairwise_distances
from .solver import (
    CsProblem,
    SolverConfig,
    enforce_min_spacing,
    repair_spacing,
    reweight_loop,
    solve_weighted_l1,
)
from .taper import ReferenceSpec, chebyshev_taper, reference_pattern, ura_reference_taper
from .thinning import SynthesisResult, SynthesisSpec, compare, synthesize

__version__ = "0.1.0"
