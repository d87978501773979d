"""Nonsymmetric generalized Golub-Kahan (nsCRAIG) solver for saddle-point systems."""
from .baselines import (
    BlockPreconditionedSystem,
    SchurOperator,
    compute_restart_kmax,
    fom_solve,
    gmres_solve,
    memory_estimate,
    schur_apply,
)
from .gkb import (
    Criterion,
    NsGkbState,
    SolveReport,
    SolverConfig,
    Termination,
    error_estimate,
    exact_error_energy_norm,
    gkb_init,
    gkb_step,
    nscraig_solve,
    recover_solution,
    residual_norm,
)
from .linalg import SparseFactorization, SparseMatrixCSR, factorize
from .problems import ProblemSpec, SaddleSystem, make_system, validate_system

__version__ = "0.1.0"
