"""Reference solvers for the comparison protocol.

FOM on the Schur complement ``S = A^T M^{-1} A`` (applied implicitly), and
right block-preconditioned GMRES on the full saddle-point matrix with the
memory-matched restart length.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    DimensionError,
    SparseFactorization,
    SparseMatrixCSR,
    apply_inverse,
    spmv,
    spmv_t,
)

log = logging.getLogger(__name__)

__all__ = [
    "SchurOperator",
    "ArnoldiBasis",
    "BlockPreconditionedSystem",
    "FomResult",
    "GmresResult",
    "FomBreakdownError",
    "MemoryBudgetError",
    "schur_apply",
    "fom_solve",
    "gmres_solve",
    "compute_restart_kmax",
    "memory_estimate",
]


class FomBreakdownError(ArithmeticError):
    def __init__(self, step: int, message: str):
        super().__init__(f"FOM breakdown at step {step}: {message}")
        self.step = step


class MemoryBudgetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SchurOperator:
    """``x -> A^T M^{-1} A x``; ``S`` is never formed."""

    A: SparseMatrixCSR
    fact: SparseFactorization

    @property
    def n(self) -> int:
        return self.A.ncols

    def apply(self, x) -> np.ndarray:
        return schur_apply(self, x)


def schur_apply(op: SchurOperator, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (op.n,):
        raise DimensionError(f"schur_apply: expected length {op.n}, got shape {x.shape}")
    return spmv_t(op.A, apply_inverse(op.fact, spmv(op.A, x)))


@dataclass
class ArnoldiBasis:
    """Orthonormal Krylov vectors and the Hessenberg coefficients that link them."""

    vectors: list[np.ndarray] = field(default_factory=list)
    hess: list[np.ndarray] = field(default_factory=list)  # column j has j+2 entries

    def hessenberg(self, k: int | None = None, square: bool = True) -> np.ndarray:
        k = len(self.hess) if k is None else k
        H = np.zeros((k + 1, k))
        for j in range(k):
            H[: j + 2, j] = self.hess[j]
        return H[:k] if square else H

    def expand(self, w: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
        """MGS-orthogonalize ``w`` against the basis; returns (h, norm, residual vector)."""
        h = np.empty(len(self.vectors) + 1)
        for i, vi in enumerate(self.vectors):
            h[i] = vi @ w
            w = w - h[i] * vi
        h[-1] = float(np.linalg.norm(w))
        self.hess.append(h)
        return h, h[-1], w


@dataclass
class FomResult:
    p: np.ndarray
    history: np.ndarray  # absolute residual norms, one per iteration
    iterations: int
    converged: bool
    iterates: list[np.ndarray] | None = None


def fom_solve(op: SchurOperator, rhs, tol: float, maxit: int, *,
              keep_iterates: bool = False) -> FomResult:
    """Full orthogonalization method for ``S p = rhs`` from a zero initial guess.

    ``x_k = V_k H_k^{-1} (||rhs|| e_1)``; the residual norm is
    ``h_{k+1,k} |e_k^T y_k|``. Stops when it falls to ``tol * ||rhs||``.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if tol <= 0 or maxit < 1:
        raise ValueError("tol must be positive and maxit >= 1")
    beta = float(np.linalg.norm(rhs))
    if beta == 0.0:
        return FomResult(np.zeros_like(rhs), np.zeros(0), 0, True, [] if keep_iterates else None)
    basis = ArnoldiBasis([rhs / beta])
    history: list[float] = []
    iterates: list[np.ndarray] = []
    y = np.zeros(0)
    converged = False
    for k in range(1, min(maxit, op.n) + 1):
        w = schur_apply(op, basis.vectors[-1])
        wnorm = float(np.linalg.norm(w))
        _, hnext, w = basis.expand(w)
        H = basis.hessenberg(k)
        e1 = np.zeros(k)
        e1[0] = beta
        try:
            y = np.linalg.solve(H, e1)
        except np.linalg.LinAlgError as exc:
            raise FomBreakdownError(k, f"singular Hessenberg matrix ({exc})") from exc
        if not np.all(np.isfinite(y)):
            raise FomBreakdownError(k, "non-finite Hessenberg solve")
        res = hnext * abs(y[-1])
        history.append(res)
        if keep_iterates:
            iterates.append(np.column_stack(basis.vectors) @ y)
        lucky = hnext <= 1e-13 * wnorm
        if res <= tol * beta or lucky:
            converged = True
            break
        basis.vectors.append(w / hnext)
    k = len(history)
    p = iterates[-1] if keep_iterates else np.column_stack(basis.vectors[:k]) @ y
    return FomResult(p, np.asarray(history), k, converged, iterates if keep_iterates else None)


@dataclass(frozen=True, eq=False)
class BlockPreconditionedSystem:
    """``[[M, A], [A^T, 0]] diag(M^{-1}, I)`` with right-hand side ``[0; b]``."""

    M: SparseMatrixCSR
    A: SparseMatrixCSR
    fact: SparseFactorization
    b: np.ndarray

    @property
    def m(self) -> int:
        return self.A.nrows

    @property
    def n(self) -> int:
        return self.A.ncols

    def apply(self, x: np.ndarray) -> np.ndarray:
        # [M M^{-1} ut + A pt; A^T M^{-1} ut] with a single inverse application
        m = self.m
        ut, pt = x[:m], x[m:]
        return np.concatenate([ut + spmv(self.A, pt), spmv_t(self.A, apply_inverse(self.fact, ut))])


class GmresTermination(str, enum.Enum):
    CONVERGED = "converged"
    MAXIT_REACHED = "maxit_reached"
    STAGNATION = "stagnation"


@dataclass
class GmresResult:
    u: np.ndarray
    p: np.ndarray
    history: np.ndarray  # absolute residual norms, one per iteration
    iterations: int
    termination: GmresTermination
    restart: int | None
    cycles: int
    max_basis_scalars: int  # peak number of stored basis entries, (m+n) per vector

    @property
    def converged(self) -> bool:
        return self.termination is GmresTermination.CONVERGED


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = math.hypot(a, b)
    return a / r, b / r


def gmres_solve(sys: BlockPreconditionedSystem, tol: float, maxit: int,
                restart: int | None = None) -> GmresResult:
    """Right-preconditioned GMRES(restart) on the saddle-point system.

    MGS Arnoldi with Givens rotations. On restart the basis is dropped and
    rebuilt from the current residual, which is carried through the Arnoldi
    relation so every iteration costs exactly one ``M^{-1}`` application.
    The solution is mapped back once at the end: ``u = M^{-1} u~``, ``p = p~``.
    """
    if restart is not None and restart < 1:
        raise ValueError(f"restart must be >= 1, got {restart}")
    if tol <= 0 or maxit < 1:
        raise ValueError("tol must be positive and maxit >= 1")
    m, n = sys.m, sys.n
    N = m + n
    rhs = np.concatenate([np.zeros(m), np.asarray(sys.b, dtype=np.float64)])
    bnorm = float(np.linalg.norm(rhs))
    cycle_len = maxit if restart is None else restart

    x = np.zeros(N)
    r = rhs.copy()
    rnorm = bnorm
    history: list[float] = []
    max_vectors = 0
    cycles = 0
    termination = GmresTermination.MAXIT_REACHED
    if bnorm == 0.0:
        termination = GmresTermination.CONVERGED

    while termination is not GmresTermination.CONVERGED and len(history) < maxit:
        cycles += 1
        cycle_start = rnorm
        basis = ArnoldiBasis([r / rnorm])
        max_vectors = max(max_vectors, 1)
        R = []  # rotated Hessenberg columns
        cs: list[tuple[float, float]] = []
        g = [rnorm]
        j = 0
        stop = False
        while j < cycle_len and len(history) < maxit:
            w = sys.apply(basis.vectors[-1])
            wnorm = float(np.linalg.norm(w))
            h, hnext, w = basis.expand(w)
            col = h.copy()
            for i, (c, s) in enumerate(cs):
                col[i], col[i + 1] = c * col[i] + s * col[i + 1], -s * col[i] + c * col[i + 1]
            c, s = _givens(col[j], col[j + 1])
            col[j] = c * col[j] + s * col[j + 1]
            col[j + 1] = 0.0
            cs.append((c, s))
            R.append(col[: j + 1])
            g.append(-s * g[j])
            g[j] = c * g[j]
            j += 1
            history.append(abs(g[j]))
            lucky = hnext <= 1e-13 * wnorm
            if abs(g[j]) <= tol * bnorm or lucky:
                stop = True
                break
            # the basis for the next step is only needed if another step follows
            if j < cycle_len and len(history) < maxit:
                basis.vectors.append(w / hnext)
                max_vectors = max(max_vectors, len(basis.vectors))
        # least squares update y = R^{-1} g[:j]
        Rm = np.zeros((j, j))
        for col_idx, colv in enumerate(R):
            Rm[: col_idx + 1, col_idx] = colv
        y = np.linalg.solve(np.triu(Rm), np.asarray(g[:j]))
        Vj = np.column_stack(basis.vectors[:j])
        x = x + Vj @ y
        # r_new = r - V_{j+1} Hbar y, without another operator application
        Hbar = basis.hessenberg(j, square=False)
        if len(basis.vectors) < j + 1:
            basis.vectors.append(w / hnext if hnext > 0 else np.zeros(N))
            max_vectors = max(max_vectors, len(basis.vectors))
        r = r - np.column_stack(basis.vectors[: j + 1]) @ (Hbar @ y)
        rnorm = float(np.linalg.norm(r))
        if stop:
            termination = GmresTermination.CONVERGED
            break
        if rnorm >= cycle_start * (1.0 - 1e-14):
            termination = GmresTermination.STAGNATION
            log.warning("GMRES stagnated over restart cycle %d", cycles)
            break

    ut, pt = x[:m], x[m:]
    u = apply_inverse(sys.fact, ut)
    return GmresResult(u, pt.copy(), np.asarray(history), len(history), termination,
                       restart, cycles, max_vectors * N)


def compute_restart_kmax(iterations: int, m: int, n: int) -> int:
    """Restart length giving GMRES the same storage as nsCRAIG after ``iterations`` steps."""
    if m < 1 or n < 1 or iterations < 1:
        raise ValueError("m, n and iterations must all be >= 1")
    kmax = (iterations * n) // (m + n)
    if kmax == 0:
        raise MemoryBudgetError("memory budget admits no GMRES iterations")
    return kmax


def memory_estimate(kind: str, count: int, m: int, n: int) -> int:
    """Stored scalars: ``gkb`` after ``count`` steps, ``gmres`` with ``count`` = k_max."""
    if kind in ("gkb", "nscraig", "fom"):
        return m + n * (count + 1)
    if kind == "gmres":
        return (m + n) * (count + 1)
    raise ValueError(f"unknown memory model {kind!r}")
