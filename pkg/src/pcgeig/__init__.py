"""Preconditioned CG-like eigensolvers for Hermitian definite pencils.

Computes the smallest eigenvalue (and eigenvector) of ``A x = lambda M x``
with Hermitian A, positive definite M, using single-vector preconditioned
schemes built around a weighted Rayleigh-Ritz step: steepest descent,
locally optimal (three-term) CG variants with optional basis anchoring, and
genuine two-term recurrence CG variants with residual-peak-triggered
augmentation.  Ships with sharp a-priori convergence estimates, problem
generators, canonical-form transformations for non-standard eigenvalue
problems, and a reproducible experiment harness.
"""

from .history import ConvergenceHistory, IterationRecord
from .linops import (
    CountingOperator,
    DenseHermitianOperator,
    DiagonalOperator,
    HermitianOperator,
    HermitianPencil,
    IdentityOperator,
    MatrixMarketError,
    NotHermitian,
    NotPositiveDefinite,
    NumericalBreakdown,
    SparseHermitianOperator,
    as_operator,
    load_matrix_market,
    m_inner,
    m_norm,
    rayleigh_quotient,
    residual,
    residual_norm,
)
from .precond import (
    DensePreconditioner,
    DenseShiftedInverse,
    IdentityPreconditioner,
    IncompleteCholesky,
    JacobiPreconditioner,
    incomplete_cholesky,
    jacobi_preconditioner,
    quality_metrics,
)
from .rayleigh_ritz import (
    DegenerateSubspace,
    GramConditioningError,
    RitzOutput,
    TrialBasis,
    m_orthogonalize_with_reduction,
    rrw,
    small_dense_eigensolve,
)
from .estimates import (
    BoundInputs,
    average_factor_psi2,
    chebyshev,
    eta_parameter,
    pcg_bound,
    psd_factor,
    asymptotic_terms,
)
from .problems import (
    dense_oracle,
    gen_diag,
    gen_laplace1d,
    gen_laplace2d,
    gen_slit2d,
    reference_smallest,
    transform_definite_pencil,
    transform_interior_folded,
    transform_linear_response,
    transform_shift_definite,
)
from .solvers import (
    SolveResult,
    SolverConfig,
    solve,
    solve_gd,
    solve_lopcg,
    solve_lopcga,
    solve_lopcgx,
    solve_pcg_heuristic,
    solve_psd,
    solve_tpcg,
    solve_tpcga,
)
from .harness import (
    RunConfig,
    emit_csv,
    initial_guess,
    load_config,
    parse_csv,
    run_grid,
)

__version__ = "0.1.0"
