"""Spectral laboratory for div-curl estimates of elliptic systems of complex vector fields."""
from .elliptic import (
    DimensionMismatchError,
    EllipticConstraintError,
    EllipticityCertificate,
    EllipticSystem,
    NotEllipticError,
    SystemDefinitionError,
    certify_ellipticity,
    gradient_system,
    laplacian_symbol,
    load_system,
    new_system,
    save_system,
    symbol,
)
from .grid import (
    GridError,
    GridMismatchError,
    GridSpec,
    MatrixField,
    ScalarField,
    VectorField,
    apply_multiplier,
    forward_transform,
    integrate,
    inverse_laplacian,
    inverse_transform,
    make_grid,
)
from .harness import (
    EnsembleSpec,
    ExperimentReport,
    calderon_oracle,
    family_witnesses,
    random_field,
    ratio_calderon,
    ratio_theorem_12,
    ratio_theorem_13,
    ratio_theorem_A,
    run_experiment,
    thmB_lower,
)
from .hodge import HodgeResult, hodge_decompose
from .norms import (
    BallFamily,
    BallSpec,
    MollifierSpec,
    bmo_norm,
    dyadic_scales,
    grand_maximal,
    h1_norm,
    hl_maximal,
    lp_norm,
    make_ball_family,
    pair,
)
from .operators import Pairing, commutator_symbol, curl_L, div_Lstar, dot, grad_L
from .witnesses import (
    CutoffSpec,
    WitnessPair,
    factorize_phi,
    make_cutoff,
    rescale_to_ball,
    verify,
    witness_large_p,
    witness_small_p,
    witness_unit_ball,
)

__version__ = "0.1.0"


def cr_system():
    """``L_1 = d_1 + i d_3``, ``L_2 = d_2`` on ``R^3``."""
    return new_system(2, 3, [[1j], [0]])
