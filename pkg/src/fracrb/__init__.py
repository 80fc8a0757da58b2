"""Reduced basis acceleration of sinc quadrature for the spectral fractional
Laplacian ``(-Delta)^{-s} f`` with P1 finite elements."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BasisFormatError,
    FracRBError,
    InvalidParameter,
    MeshFormatError,
    MeshValidationError,
    OracleTooLarge,
    SingularMatrix,
    SolverFailure,
)
from .fractional import (  # noqa: E402
    FractionalProblem,
    evaluate_full,
    evaluate_oracle,
    exact_series,
    solve_shifted,
)
from .linalg import EigenDecomposition, generalized_eigen, solve_dense, solve_spd  # noqa: E402
from .mesh import (  # noqa: E402
    AssembledSystem,
    Mesh,
    assemble,
    build_interval_mesh,
    build_lshape_mesh,
    build_square_mesh,
    h10_norm,
    hr_norm,
    l2_norm,
    load_mesh,
    save_mesh,
)
from .reduced_basis import (  # noqa: E402
    ReducedBasis,
    TrainingSet,
    error_norm,
    evaluate_rb,
    greedy_build,
    greedy_build_exact,
    load_basis,
    rb_solve,
    residual_dual_norm,
    save_basis,
)
from .sinc import SincGrid, scalar_sinc, sinc_params, universal_params, weights  # noqa: E402
