"""Sparse and small structured kernels.

CSR storage and products for the saddle-point blocks, a reusable sparse LU
for applying ``M^{-1}``, the ``M``-weighted inner product, and the packed
triangular solves used by the Golub-Kahan solver.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg.lapack as lapack
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SparseMatrixCSR",
    "SparseFactorization",
    "BidiagonalUpper",
    "HessenbergColumns",
    "UnitLowerTriangular",
    "DimensionError",
    "FactorizationError",
    "MNormDomainError",
    "spmv",
    "spmv_t",
    "factorize",
    "apply_inverse",
    "m_inner",
    "m_norm",
    "solve_bidiag",
    "solve_bidiag_transpose",
    "solve_unit_lower_transpose",
]

# Dense pivot diagnosis after a failed sparse LU is skipped above this size.
_DENSE_DIAGNOSIS_LIMIT = 4000


class DimensionError(ValueError):
    pass


class FactorizationError(RuntimeError):
    """Raised when the LU factorization hits a zero pivot."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class MNormDomainError(ValueError):
    """``x^T M x`` came out negative, so no ``M``-norm exists."""

    def __init__(self, value: float):
        super().__init__(f"x^T M x = {value:.6e} < 0; M is not positive definite along x")
        self.value = value


def _check_len(x: np.ndarray, n: int, what: str) -> None:
    if x.ndim != 1 or x.shape[0] != n:
        raise DimensionError(f"{what}: expected vector of length {n}, got shape {x.shape}")


@dataclass(frozen=True, eq=False)
class SparseMatrixCSR:
    """Compressed sparse row matrix with sorted, duplicate-free rows."""

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        if self.nrows < 0 or self.ncols < 0:
            raise ValueError("negative dimension")
        if ro.shape != (self.nrows + 1,):
            raise ValueError("row_offsets must have length nrows + 1")
        if ro[0] != 0 or ro[-1] != va.shape[0] or ci.shape != va.shape:
            raise ValueError("row_offsets inconsistent with stored values")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.ncols:
                raise ValueError("column index out of range")
            # within a row indices must strictly increase; a drop is only allowed at row starts
            steps = np.diff(ci)
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[ro[1:-1][ro[1:-1] < ci.size]] = True
            if np.any((steps <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within each row")

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrixCSR":
        csr = sp.csr_matrix(mat, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrixCSR":
        return cls.from_scipy(sp.csr_matrix(np.atleast_2d(np.asarray(arr, dtype=np.float64))))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrixCSR":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @classmethod
    def zeros(cls, nrows: int, ncols: int) -> "SparseMatrixCSR":
        return cls(nrows, ncols, np.zeros(nrows + 1, dtype=np.int64), [], [])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape
        )

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr.copy()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "SparseMatrixCSR":
        return SparseMatrixCSR.from_scipy(self._csr.T)

    @property
    def T(self) -> "SparseMatrixCSR":
        return self.transpose()

    def __matmul__(self, x):
        return spmv(self, np.asarray(x, dtype=np.float64))


def spmv(Amat: SparseMatrixCSR, x) -> np.ndarray:
    """Return ``Amat @ x``."""
    x = np.asarray(x, dtype=np.float64)
    _check_len(x, Amat.ncols, "spmv")
    return Amat._csr @ x


def spmv_t(Amat: SparseMatrixCSR, x) -> np.ndarray:
    """Return ``Amat.T @ x`` without forming the transpose."""
    x = np.asarray(x, dtype=np.float64)
    _check_len(x, Amat.nrows, "spmv_t")
    return Amat._csr.T @ x


@dataclass(eq=False)
class SparseFactorization:
    """LU factors of a square sparse matrix, computed once and reused.

    ``applications`` counts calls to :func:`apply_inverse`, which lets the
    benchmarks check per-iteration cost parity between solvers.
    """

    m: int
    _lu: spla.SuperLU = field(repr=False)
    matrix: SparseMatrixCSR | None = field(default=None, repr=False)
    applications: int = 0

    def solve(self, x: np.ndarray) -> np.ndarray:
        return apply_inverse(self, x)


def _locate_zero_pivot(M: SparseMatrixCSR) -> int | None:
    if M.nrows > _DENSE_DIAGNOSIS_LIMIT:
        return None
    _, _, info = lapack.dgetrf(M.toarray())
    return int(info) - 1 if info > 0 else None


def factorize(M: SparseMatrixCSR) -> SparseFactorization:
    """Sparse LU with partial pivoting (SuperLU, ``diag_pivot_thresh=1``)."""
    if M.nrows != M.ncols:
        raise DimensionError(f"factorize: matrix must be square, got {M.shape}")
    if M.nrows == 0:
        raise DimensionError("factorize: empty matrix")
    csc = M._csr.tocsc()
    try:
        lu = spla.splu(csc, diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        row = _locate_zero_pivot(M)
        where = f"at pivot row {row}" if row is not None else "(pivot row not located)"
        raise FactorizationError(f"singular matrix: zero pivot {where}: {exc}", row) from exc
    diag_u = lu.U.diagonal()
    if not np.all(np.isfinite(diag_u) & (diag_u != 0.0)):
        row = _locate_zero_pivot(M)
        raise FactorizationError(f"singular matrix: zero pivot at pivot row {row}", row)
    return SparseFactorization(M.nrows, lu, M)


def apply_inverse(fact: SparseFactorization, x) -> np.ndarray:
    """Return ``y`` with ``M y = x``."""
    x = np.asarray(x, dtype=np.float64)
    _check_len(x, fact.m, "apply_inverse")
    fact.applications += 1
    return fact._lu.solve(x)


def m_inner(M: SparseMatrixCSR, x, y) -> float:
    """``x^T M y``. Not symmetric in its arguments when ``M`` is not."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if M.nrows != M.ncols:
        raise DimensionError("m_inner: M must be square")
    _check_len(x, M.nrows, "m_inner")
    _check_len(y, M.ncols, "m_inner")
    return float(x @ spmv(M, y))


def m_norm(M: SparseMatrixCSR, x) -> float:
    q = m_inner(M, x, x)
    if q < 0.0:
        raise MNormDomainError(q)
    return float(np.sqrt(q))


@dataclass
class BidiagonalUpper:
    """Upper bidiagonal ``B_k``: diagonal ``alphas``, superdiagonal ``betas``.

    ``betas[i]`` sits at position ``(i, i+1)``; there is one fewer beta than
    alpha. The matrix grows by :meth:`append`.
    """

    alphas: list[float] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.alphas = [float(a) for a in self.alphas]
        self.betas = [float(b) for b in self.betas]
        if self.alphas and len(self.betas) != len(self.alphas) - 1:
            raise ValueError("need exactly len(alphas) - 1 betas")

    @property
    def dim(self) -> int:
        return len(self.alphas)

    def append(self, alpha: float, beta: float | None = None) -> None:
        if self.alphas:
            if beta is None:
                raise ValueError("a superdiagonal entry is required after the first column")
            self.betas.append(float(beta))
        self.alphas.append(float(alpha))

    def truncated(self, k: int) -> "BidiagonalUpper":
        return BidiagonalUpper(self.alphas[:k], self.betas[: max(k - 1, 0)])

    def to_dense(self) -> np.ndarray:
        k = self.dim
        out = np.diag(np.asarray(self.alphas, dtype=np.float64))
        if k > 1:
            out[np.arange(k - 1), np.arange(1, k)] = self.betas
        return out


def _check_bidiag(B: BidiagonalUpper, rhs: np.ndarray) -> None:
    _check_len(rhs, B.dim, "bidiagonal solve")
    if any(a == 0.0 for a in B.alphas):
        raise ZeroDivisionError("bidiagonal matrix has a zero diagonal entry")


def solve_bidiag_transpose(B: BidiagonalUpper, rhs) -> np.ndarray:
    """Forward substitution with the lower bidiagonal ``B^T``."""
    rhs = np.asarray(rhs, dtype=np.float64)
    _check_bidiag(B, rhs)
    x = np.empty_like(rhs)
    a, b = B.alphas, B.betas
    x[0] = rhs[0] / a[0]
    for i in range(1, B.dim):
        x[i] = (rhs[i] - b[i - 1] * x[i - 1]) / a[i]
    return x


def solve_bidiag(B: BidiagonalUpper, rhs) -> np.ndarray:
    """Back substitution with ``B``."""
    rhs = np.asarray(rhs, dtype=np.float64)
    _check_bidiag(B, rhs)
    k = B.dim
    x = np.empty_like(rhs)
    a, b = B.alphas, B.betas
    x[k - 1] = rhs[k - 1] / a[k - 1]
    for i in range(k - 2, -1, -1):
        x[i] = (rhs[i] - b[i] * x[i + 1]) / a[i]
    return x


@dataclass
class HessenbergColumns:
    """Upper Hessenberg ``H_k`` kept column by column.

    ``columns[j]`` holds the ``j + 1`` entries on and above the diagonal of
    column ``j``; ``betas[j]`` is the subdiagonal entry below it.
    """

    columns: list[np.ndarray] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.columns)

    def append(self, column, subdiag: float) -> None:
        column = np.asarray(column, dtype=np.float64)
        if column.shape != (self.dim + 1,):
            raise ValueError(f"column {self.dim} must have {self.dim + 1} entries")
        self.columns.append(column)
        self.betas.append(float(subdiag))

    def to_dense(self, k: int | None = None) -> np.ndarray:
        """Square ``k x k`` leading block (default: all columns)."""
        k = self.dim if k is None else k
        out = np.zeros((k, k))
        for j in range(k):
            out[: j + 1, j] = self.columns[j]
            if j + 1 < k:
                out[j + 1, j] = self.betas[j]
        return out


@dataclass
class UnitLowerTriangular:
    """Unit lower triangular matrix stored as packed strictly-lower rows.

    ``rows[i]`` holds ``L[i, :i]``; the diagonal is implicitly one.
    """

    rows: list[np.ndarray] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.rows)

    @property
    def strict_lower(self) -> np.ndarray:
        if not self.rows:
            return np.empty(0)
        return np.concatenate(self.rows)

    def append_row(self, row) -> None:
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.dim,):
            raise ValueError(f"row {self.dim} must have {self.dim} strictly-lower entries")
        self.rows.append(row)

    @classmethod
    def from_dense(cls, L) -> "UnitLowerTriangular":
        L = np.asarray(L, dtype=np.float64)
        return cls([L[i, :i].copy() for i in range(L.shape[0])])

    def trailing(self, start: int) -> "UnitLowerTriangular":
        """Trailing principal block ``L[start:, start:]``."""
        return UnitLowerTriangular([r[start:].copy() for r in self.rows[start:]])

    def to_dense(self) -> np.ndarray:
        k = self.dim
        out = np.eye(k)
        for i, r in enumerate(self.rows):
            out[i, :i] = r
        return out


def solve_unit_lower_transpose(L: UnitLowerTriangular, rhs, steps: int | None = None) -> np.ndarray:
    """Last ``steps`` entries of ``x`` solving ``L^T x = rhs``.

    Back substitution runs from the last row, so the trailing entries only
    involve the trailing block of ``L`` and cost ``O(steps^2)``.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    k = L.dim
    _check_len(rhs, k, "solve_unit_lower_transpose")
    steps = k if steps is None else int(steps)
    if steps > k or steps < 0:
        raise ValueError(f"steps={steps} outside [0, {k}]")
    lo = k - steps
    work = rhs[lo:].copy()
    # column-oriented: row j of L is column j of L^T
    for j in range(k - 1, lo - 1, -1):
        xj = work[j - lo]
        if j > lo:
            work[: j - lo] -= xj * L.rows[j][lo:j]
    return work
