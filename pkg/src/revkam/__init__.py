"""Reducible invariant tori of reversible vector fields via modifying terms."""

from .fourier import (
    FourierSeries,
    GridFunction,
    analyze,
    average,
    grid_points,
    omega_derivative,
    pointwise_map,
    sup_norm,
    synthesize,
)
from .homological import (
    DiophantineCertificate,
    ModifyingTerms,
    ResonanceError,
    SmallDivisorError,
    ad_D_action,
    diophantine_check,
    homological_solve,
)
from .reversing import (
    AffineTorusField,
    InvolutionSpec,
    ReversibleContext,
    ad_G,
    classify_context,
    fixed_points_on_torus,
    lie_bracket,
    normalize_torus_involution,
    reversibility_residual,
    split_pm,
)
from .tmatrix import (
    KernelBasis,
    SpectrumClassification,
    TMatrixSpec,
    classify_anticommuting_pair,
    commutant_basis,
    kernel_basis_minus,
    tmatrix_dense,
    tmatrix_spectrum,
)

__version__ = "0.1.0"
