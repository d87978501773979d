"""Saddle-point test systems.

Two generators stand in for the Navier-Stokes/Picard systems: a seeded
synthetic one and a finite-difference Oseen-like one. Both give a
nonsymmetric positive definite leading block and a full column rank coupling
block.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linalg import SparseMatrixCSR, apply_inverse, factorize, spmv, spmv_t

__all__ = [
    "ProblemSpec",
    "SaddleSystem",
    "ValidationReport",
    "gen_synthetic",
    "gen_oseen_fd",
    "make_system",
    "reduce_general_form",
    "validate_system",
]


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "synthetic"  # synthetic | oseen_fd | file
    m: int = 60
    n: int = 20
    grid: int = 12
    seed: int = 0
    nu: float = 0.01
    wind: tuple[float, float] = (1.0, 0.5)
    skew_scale: float = 1.0
    path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "wind", tuple(float(w) for w in self.wind))
        if self.kind not in ("synthetic", "oseen_fd", "file"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "oseen_fd":
            if not self.nu > 0:
                raise ValueError(f"nu must be positive, got {self.nu}")
            if self.grid < 3:
                raise ValueError(f"grid must be >= 3, got {self.grid}")
        if self.kind == "synthetic" and not (self.m > self.n >= 1):
            raise ValueError(f"synthetic systems need m > n >= 1, got m={self.m}, n={self.n}")
        if self.kind == "file" and not self.path:
            raise ValueError("file problems need a path")

    def to_json(self) -> dict:
        d = asdict(self)
        d["wind"] = list(self.wind)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(eq=False)
class SaddleSystem:
    M: SparseMatrixCSR
    A: SparseMatrixCSR
    b: np.ndarray
    b1: np.ndarray | None = None
    spec: ProblemSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        m, n = self.A.shape
        if self.M.shape != (m, m):
            raise ValueError(f"M is {self.M.shape}, expected ({m}, {m})")
        if not m >= n >= 1:
            raise ValueError(f"need m >= n >= 1, got m={m}, n={n}")
        if self.b.shape != (n,):
            raise ValueError(f"b has shape {self.b.shape}, expected ({n},)")
        if self.b1 is not None:
            self.b1 = np.asarray(self.b1, dtype=np.float64)
            if self.b1.shape != (m,):
                raise ValueError(f"b1 has shape {self.b1.shape}, expected ({m},)")

    @property
    def m(self) -> int:
        return self.A.nrows

    @property
    def n(self) -> int:
        return self.A.ncols

    def residuals(self, u, p) -> tuple[float, float]:
        """``(||M u + A p||, ||A^T u - b||)`` for the homogeneous first block."""
        r1 = spmv(self.M, u) + spmv(self.A, p)
        r2 = spmv_t(self.A, u) - self.b
        return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))


def gen_synthetic(spec: ProblemSpec) -> SaddleSystem:
    """Random sparse system: ``M = D + s (K - K^T)/2`` with ``D`` symmetric
    strictly diagonally dominant, and ``A`` holding a column-dominant ``n x n``
    block on distinct rows, so it has full column rank.
    """
    m, n = spec.m, spec.n
    if n >= m:
        raise ValueError(f"synthetic systems need n < m, got m={m}, n={n}")
    rng = np.random.default_rng(spec.seed)
    density = min(1.0, 4.0 / m)

    R = sp.random(m, m, density=density, random_state=rng, data_rvs=lambda k: rng.uniform(-1, 1, k))
    Rs = ((R + R.T) * 0.5).tocsr()
    Rs = (Rs - sp.diags(Rs.diagonal())).tocsr()
    Rs.eliminate_zeros()
    rowsum = np.asarray(abs(Rs).sum(axis=1)).ravel()
    D = Rs + sp.diags(rowsum + rng.uniform(0.5, 1.5, m))
    K = sp.random(m, m, density=density, random_state=rng, data_rvs=lambda k: rng.uniform(-1, 1, k))
    M = (D + spec.skew_scale * 0.5 * (K - K.T)).tocsr()

    off = sp.random(m, n, density=min(1.0, 3.0 / m), random_state=rng,
                    data_rvs=lambda k: rng.uniform(-1, 1, k)).tocsc()
    pivots = rng.permutation(m)[:n]
    off = off.tolil()
    for j, r in enumerate(pivots):
        off[r, j] = 0.0
    off = off.tocsc()
    # column dominance on the pivot rows: |A[p_j, j]| > sum_i |A[p_i, j]|, i != j
    sub = abs(off[pivots, :]).sum(axis=0).A1
    dom = (1.0 + sub) * rng.choice([-1.0, 1.0], n) * rng.uniform(1.0, 2.0, n)
    A = (off + sp.csc_matrix((dom, (pivots, np.arange(n))), shape=(m, n))).tocsr()

    b = rng.standard_normal(n)
    b /= np.linalg.norm(b)
    return SaddleSystem(SparseMatrixCSR.from_scipy(M), SparseMatrixCSR.from_scipy(A), b, spec=spec)


def _laplacian_1d(k: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(k - 1), 2 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1]) / h**2


def _central_1d(k: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(k - 1), np.ones(k - 1)], [-1, 1]) / (2 * h)


def oseen_sizes(grid: int) -> tuple[int, int]:
    return 2 * (2 * grid - 1) ** 2, grid * grid - 1


def gen_oseen_fd(spec: ProblemSpec) -> SaddleSystem:
    """Finite-difference Oseen-like system on the unit square.

    Pressure is piecewise constant on a ``grid x grid`` cell mesh; both
    velocity components live on the interior nodes of the twice-finer mesh
    (spacing ``h = 1/(2 grid)``), zero on the boundary. The velocity block
    per component is ``nu * L + N`` with the 5-point Laplacian ``L`` and
    central convection ``N`` by the constant wind; ``N`` is skew-symmetric,
    so ``x^T M x = nu x^T L x > 0``.

    The pressure gradient lives on coarse cell faces: a fine node at the
    middle of an interior face sees the jump across it, a node at an interior
    coarse vertex sees the mean of its two neighbouring jumps. Every interior
    face owns a midpoint node, so only constants lie in the kernel; the last
    pressure unknown is dropped to remove them.
    """
    g = spec.grid
    if g < 3:
        raise ValueError(f"degenerate grid {g}")
    if not spec.nu > 0:
        raise ValueError(f"nu must be positive, got {spec.nu}")
    H = 1.0 / g
    h = H / 2
    k = 2 * g - 1  # fine interior nodes per direction
    I = sp.identity(k, format="csr")
    L1, D1 = _laplacian_1d(k, h), _central_1d(k, h)
    # node index = iy * k + ix
    lap = sp.kron(I, L1) + sp.kron(L1, I)
    wx, wy = spec.wind
    conv = wx * sp.kron(I, D1) + wy * sp.kron(D1, I)
    block = (spec.nu * lap + conv).tocsr()
    M = sp.block_diag([block, block], format="csr")

    def cell(cx: int, cy: int) -> int:
        return cy * g + cx

    rows, cols, vals = [], [], []

    def face_x(node_row: int, ci: int, cy: int, weight: float) -> None:
        # jump across the vertical face between cells (ci-1, cy) and (ci, cy)
        rows.extend([node_row, node_row])
        cols.extend([cell(ci, cy), cell(ci - 1, cy)])
        vals.extend([weight / H, -weight / H])

    for iy in range(k):
        for ix in range(k):
            node = iy * k + ix
            fx, fy = ix + 1, iy + 1  # fine coordinates including the boundary
            if fx % 2 == 0:  # on an interior vertical coarse line
                ci = fx // 2
                if fy % 2 == 1:
                    face_x(node, ci, fy // 2, 1.0)
                else:
                    face_x(node, ci, fy // 2 - 1, 0.5)
                    face_x(node, ci, fy // 2, 0.5)
            if fy % 2 == 0:  # on an interior horizontal coarse line
                cj = fy // 2
                yrow = k * k + node
                pairs = [(fx // 2, 1.0)] if fx % 2 == 1 else [(fx // 2 - 1, 0.5), (fx // 2, 0.5)]
                for cx, wgt in pairs:
                    rows.extend([yrow, yrow])
                    cols.extend([cell(cx, cj), cell(cx, cj - 1)])
                    vals.extend([wgt / H, -wgt / H])

    m = 2 * k * k
    G = sp.csr_matrix((vals, (rows, cols)), shape=(m, g * g))
    A = G[:, : g * g - 1].tocsr()

    rng = np.random.default_rng(spec.seed)
    b = rng.standard_normal(g * g - 1)
    b /= np.linalg.norm(b)
    return SaddleSystem(SparseMatrixCSR.from_scipy(M), SparseMatrixCSR.from_scipy(A), b, spec=spec)


def make_system(spec: ProblemSpec) -> SaddleSystem:
    if spec.kind == "synthetic":
        return gen_synthetic(spec)
    if spec.kind == "oseen_fd":
        return gen_oseen_fd(spec)
    from .mmio import load_system

    return load_system(spec.path)


def reduce_general_form(M: SparseMatrixCSR, A: SparseMatrixCSR, b1, b2, *,
                        fact=None) -> tuple[np.ndarray, np.ndarray]:
    """Map ``[[M, A], [A^T, 0]] [w; p] = [b1; b2]`` to a zero first block.

    Returns ``(b, w0)`` with ``w0 = M^{-1} b1`` and ``b = b2 - A^T w0``; the
    general solution is ``w = u + w0`` where ``(u, p)`` solves the reduced
    system.
    """
    b1 = np.asarray(b1, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    if b1.shape != (M.nrows,) or b2.shape != (A.ncols,) or A.nrows != M.nrows:
        raise ValueError("inconsistent dimensions in general-form system")
    if not np.any(b1):
        return b2.copy(), np.zeros_like(b1)
    fact = fact or factorize(M)
    w0 = apply_inverse(fact, b1)
    return b2 - spmv_t(A, w0), w0


@dataclass
class ValidationReport:
    min_quadratic_form: float
    positive_definite: bool
    sigma_min: float
    sigma_max: float
    rank_tol: float
    full_column_rank: bool
    samples: int
    method: str

    @property
    def ok(self) -> bool:
        return self.positive_definite and self.full_column_rank


def _sigma_extremes_iterative(A: sp.csr_matrix, rng, iters: int = 200) -> tuple[float, float]:
    AtA = (A.T @ A).tocsc()
    x = rng.standard_normal(A.shape[1])
    for _ in range(iters):
        x = AtA @ x
        x /= np.linalg.norm(x)
    smax = math.sqrt(float(x @ (AtA @ x)))
    try:
        lu = spla.splu(AtA)
    except RuntimeError:
        return 0.0, smax
    x = rng.standard_normal(A.shape[1])
    for _ in range(iters):
        x = lu.solve(x)
        nrm = np.linalg.norm(x)
        if not np.isfinite(nrm) or nrm == 0:
            return 0.0, smax
        x /= nrm
    lam = float(x @ (AtA @ x))
    return math.sqrt(max(lam, 0.0)), smax


def validate_system(sys_: SaddleSystem, samples: int = 100, seed: int = 12345) -> ValidationReport:
    """Sampled positive-definiteness of ``M`` and numerical column rank of ``A``.

    Verdicts only, never raises. The rank threshold is
    ``max(m, n) * eps * sigma_max``.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((sys_.m, samples))
    X /= np.linalg.norm(X, axis=0)
    quad = np.einsum("ij,ij->j", X, sys_.M._csr @ X)
    qmin = float(quad.min()) if samples else math.inf
    Acsr = sys_.A._csr
    if sys_.n <= 200:
        s = np.linalg.svd(Acsr.toarray(), compute_uv=False)
        smin, smax, method = float(s[-1]), float(s[0]), "dense_svd"
    else:
        smin, smax = _sigma_extremes_iterative(Acsr, rng)
        method = "inverse_power"
    rank_tol = max(sys_.m, sys_.n) * np.finfo(float).eps * smax
    return ValidationReport(qmin, qmin > 0.0, smin, smax, rank_tol, smin > rank_tol,
                            samples, method)
