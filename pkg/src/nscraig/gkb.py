"""Nonsymmetric generalized Golub-Kahan bidiagonalization and the nsCRAIG solver.

The decomposition builds an orthonormal right basis ``Q_k`` (length ``n``) and
left vectors ``v_k`` (length ``m``, unit ``M``-norm) such that

    A Q_k   = M V_k B_k,              V_k^T M V_k = L_k  (unit lower triangular)
    A^T V_k = Q_k H_k + beta_{k+1} q_{k+1} e_k^T

with ``B_k`` upper bidiagonal and ``H_k`` upper Hessenberg, ``H_k = B_k^T L_k^T``.
Only the latest left vector is kept unless ``keep_basis`` is requested.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .linalg import (
    BidiagonalUpper,
    HessenbergColumns,
    MNormDomainError,
    SparseFactorization,
    SparseMatrixCSR,
    UnitLowerTriangular,
    apply_inverse,
    factorize,
    m_inner,
    solve_bidiag,
    solve_bidiag_transpose,
    solve_unit_lower_transpose,
    spmv,
    spmv_t,
)

log = logging.getLogger(__name__)

__all__ = [
    "Criterion",
    "Orthogonalization",
    "Termination",
    "SolverConfig",
    "NsGkbState",
    "SolveReport",
    "ErrorEstimate",
    "BreakdownError",
    "ZeroRightHandSideError",
    "gkb_init",
    "gkb_orthogonalize",
    "gkb_extend",
    "gkb_step",
    "residual_norm",
    "error_estimate",
    "exact_error_energy_norm",
    "recover_solution",
    "recover_p_hessenberg",
    "nscraig_solve",
    "BREAKDOWN_TOL",
]

# beta_{k+1} below this fraction of ||A^T v_k|| counts as lucky breakdown
BREAKDOWN_TOL = 1e-13
# above this magnitude chi is only meaningful through its log/sign pair
CHI_OVERFLOW = 1e280


class Criterion(str, enum.Enum):
    RESIDUAL = "residual"
    ERROR_ESTIMATE = "error_estimate"


class Orthogonalization(str, enum.Enum):
    MGS = "mgs"
    MGS_TWICE = "mgs_twice"


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAXIT_REACHED = "maxit_reached"
    BREAKDOWN = "breakdown"


class BreakdownError(ArithmeticError):
    """The left vector lost its positive ``M``-norm (``M`` not positive definite)."""


class ZeroRightHandSideError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-3
    maxit: int = 1000
    criterion: Criterion = Criterion.RESIDUAL
    delay_d: int = 5
    orthogonalization: Orthogonalization = Orthogonalization.MGS
    # retain V, record every iterate and the explicit residual (costs one extra M^{-1} per step)
    validate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        object.__setattr__(self, "orthogonalization", Orthogonalization(self.orthogonalization))
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ValueError(f"tol must be positive and finite, got {self.tol}")
        if self.maxit < 1:
            raise ValueError(f"maxit must be >= 1, got {self.maxit}")
        if self.delay_d < 1:
            raise ValueError(f"delay_d must be >= 1, got {self.delay_d}")


@dataclass(eq=False)
class NsGkbState:
    """Decomposition after ``k`` left vectors.

    When ``beta_next`` is set, the right-basis half of step ``k`` has run:
    column ``k`` of ``H``, row ``k`` of ``L`` and ``beta_{k+1}`` are known and
    ``g_next`` holds the unnormalized ``q_{k+1}``.
    """

    n: int
    m: int
    beta1: float
    Q: np.ndarray  # n x capacity, first k columns valid
    v_latest: np.ndarray
    B: BidiagonalUpper
    H: HessenbergColumns
    L: UnitLowerTriangular
    chi_sign: list[float]
    chi_log: list[float]
    orthogonalization: Orthogonalization = Orthogonalization.MGS
    V: list[np.ndarray] | None = None
    beta_next: float | None = None
    g_next: np.ndarray | None = field(default=None, repr=False)
    lucky_breakdown: bool = False
    negative_estimate: bool = False
    # largest |computed diag(L) - 1| seen while deriving L from B^T L^T = H
    l_diag_defect: float = 0.0

    @property
    def k(self) -> int:
        return self.B.dim

    @property
    def Qk(self) -> np.ndarray:
        return self.Q[:, : self.k]

    @property
    def chi(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.asarray(self.chi_sign) * np.exp(np.asarray(self.chi_log))

    @property
    def chi_overflow(self) -> bool:
        return bool(self.chi_log) and max(self.chi_log) > math.log(CHI_OVERFLOW)

    def _push_chi(self, sign: float, logabs: float) -> None:
        self.chi_sign.append(sign)
        self.chi_log.append(logabs)


def _left_normalize(M: SparseMatrixCSR, w: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    q = m_inner(M, w, w)
    if not q > 0.0 or not math.isfinite(q):
        raise BreakdownError(
            f"step {k}: w^T M w = {q:.3e} is not positive; M is not positive definite"
        ) from (MNormDomainError(q) if q < 0 else None)
    alpha = math.sqrt(q)
    return alpha, w / alpha


def gkb_init(
    fact: SparseFactorization,
    A: SparseMatrixCSR,
    b,
    *,
    orthogonalization: Orthogonalization | str = Orthogonalization.MGS,
    keep_basis: bool = False,
    capacity: int | None = None,
) -> NsGkbState:
    """First step: ``q_1 = b/||b||``, ``v_1 = M^{-1} A q_1`` normalized in the ``M``-norm."""
    b = np.asarray(b, dtype=np.float64)
    M = fact.matrix
    m, n = A.shape
    if b.shape != (n,):
        raise ValueError(f"b must have length {n}, got shape {b.shape}")
    beta1 = float(np.linalg.norm(b))
    if beta1 == 0.0:
        raise ZeroRightHandSideError("zero right-hand side: the solution is u = 0, p = 0")
    cap = n if capacity is None else max(1, min(capacity, n))
    Q = np.empty((n, cap))
    Q[:, 0] = b / beta1
    w = apply_inverse(fact, spmv(A, Q[:, 0]))
    alpha1, v = _left_normalize(M, w, 1)
    state = NsGkbState(
        n=n,
        m=m,
        beta1=beta1,
        Q=Q,
        v_latest=v,
        B=BidiagonalUpper([alpha1]),
        H=HessenbergColumns(),
        L=UnitLowerTriangular(),
        chi_sign=[],
        chi_log=[],
        orthogonalization=Orthogonalization(orthogonalization),
        V=[v] if keep_basis else None,
    )
    state._push_chi(1.0, math.log(beta1) - math.log(alpha1))
    return state


def _mgs(Q: np.ndarray, g: np.ndarray, passes: int) -> tuple[np.ndarray, np.ndarray]:
    h = np.zeros(Q.shape[1])
    for _ in range(passes):
        for i in range(Q.shape[1]):
            c = Q[:, i] @ g
            g = g - c * Q[:, i]
            h[i] += c
    return h, g


def gkb_orthogonalize(state: NsGkbState, A: SparseMatrixCSR) -> NsGkbState:
    """Right half of a step: ``g = A^T v_k`` orthogonalized against all of ``Q_k``.

    Fills column ``k`` of ``H``, ``beta_{k+1}``, and row ``k`` of ``L`` (from
    ``B_k^T L_k^T = H_k``). Flags lucky breakdown when ``g`` vanishes or the
    right basis is already complete.
    """
    if state.beta_next is not None:
        return state
    k = state.k
    ghat = spmv_t(A, state.v_latest)
    passes = 2 if state.orthogonalization is Orthogonalization.MGS_TWICE else 1
    h, g = _mgs(state.Qk, ghat, passes)
    beta = float(np.linalg.norm(g))

    # row k of L solves B_k^T l = h; its last entry must come out as one
    lrow = solve_bidiag_transpose(state.B, h)
    state.l_diag_defect = max(state.l_diag_defect, abs(lrow[-1] - 1.0))
    state.L.append_row(lrow[:-1])
    state.H.append(h, beta)
    state.beta_next = beta
    state.g_next = g
    if k >= state.n or beta <= BREAKDOWN_TOL * float(np.linalg.norm(ghat)) or beta == 0.0:
        state.lucky_breakdown = True
    return state


def gkb_extend(state: NsGkbState, fact: SparseFactorization, A: SparseMatrixCSR) -> NsGkbState:
    """Left half of a step: ``q_{k+1}``, ``alpha_{k+1}``, ``v_{k+1}`` and ``chi_{k+1}``.

    The state is left untouched if :class:`BreakdownError` is raised.
    """
    if state.beta_next is None:
        raise RuntimeError("gkb_extend needs gkb_orthogonalize first")
    if state.lucky_breakdown:
        raise RuntimeError("decomposition already terminated (lucky breakdown)")
    k = state.k
    beta = state.beta_next
    q = state.g_next / beta
    # M^{-1}(A q - beta M v) = M^{-1} A q - beta v: one inverse application, no M product
    w = apply_inverse(fact, spmv(A, q)) - beta * state.v_latest
    alpha, v = _left_normalize(fact.matrix, w, k + 1)

    if k >= state.Q.shape[1]:
        grow = min(state.n, 2 * state.Q.shape[1])
        Qn = np.empty((state.n, grow))
        Qn[:, :k] = state.Q[:, :k]
        state.Q = Qn
    state.Q[:, k] = q
    state.B.append(alpha, beta)
    state.v_latest = v
    if state.V is not None:
        state.V.append(v)
    sign = -state.chi_sign[-1]
    state._push_chi(sign, state.chi_log[-1] + math.log(beta) - math.log(alpha))
    state.beta_next = None
    state.g_next = None
    return state


def gkb_step(state: NsGkbState, fact: SparseFactorization, A: SparseMatrixCSR) -> NsGkbState:
    """Advance from ``k`` to ``k+1`` (no-op past a lucky breakdown)."""
    gkb_orthogonalize(state, A)
    if state.lucky_breakdown:
        return state
    return gkb_extend(state, fact, A)


def residual_norm(state: NsGkbState) -> float:
    """``||b - A^T u_k||_2 = beta_{k+1} |chi_k|`` from the scalar recursion."""
    if state.beta_next is None:
        raise RuntimeError("beta_{k+1} not computed yet; call gkb_orthogonalize")
    if state.beta_next == 0.0:
        return 0.0
    return math.exp(math.log(state.beta_next) + state.chi_log[-1])


class ErrorEstimate(NamedTuple):
    absolute: float  # xi^2_{k-d}, squared M-norm error estimate of u_{k-d}
    relative: float  # xi^2_{k-d} / ||u_k||_M^2
    negative: bool


def error_estimate(state: NsGkbState, d: int) -> ErrorEstimate | None:
    """Delayed energy-norm error estimate for the iterate ``d`` steps back.

    ``z_k = L_k^{-T} chi`` and the estimate is ``sum_{i>k-d} chi_i z_i``; the
    trailing ``d`` entries of ``z_k`` only need ``d`` back-substitution steps.
    Returns None while ``k < d``.
    """
    k = state.L.dim
    if k < d:
        return None
    logs = np.asarray(state.chi_log[:k])
    shift = float(logs.max())
    chi = np.asarray(state.chi_sign[:k]) * np.exp(logs - shift)  # scaled by exp(-shift)
    tail_z = solve_unit_lower_transpose(state.L, chi, steps=d)
    num = float(chi[k - d:] @ tail_z)
    full_z = solve_unit_lower_transpose(state.L, chi, steps=k)
    den = float(chi @ full_z)
    negative = num < 0.0 or den < 0.0
    if negative:
        state.negative_estimate = True
        log.warning("negative energy-norm estimate at k=%d (num=%.3e, den=%.3e)", k, num, den)
    num, den = abs(num), abs(den)
    with np.errstate(over="ignore"):
        absolute = float(num * np.exp(2.0 * shift))
    rel = num / den if den > 0 else math.inf
    return ErrorEstimate(absolute, rel, negative)


def _z_full(state: NsGkbState, k: int) -> np.ndarray:
    B = state.B.truncated(k)
    e1 = np.zeros(k)
    e1[0] = state.beta1
    x = solve_bidiag_transpose(B, e1)
    L = UnitLowerTriangular(state.L.rows[:k])
    return solve_unit_lower_transpose(L, x, steps=k)


def recover_solution(state: NsGkbState, fact: SparseFactorization, A: SparseMatrixCSR,
                     k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(u_k, p_k)`` from the structured factors.

    ``z = beta_1 L^{-T} B^{-T} e_1``, ``y = -B^{-1} z``, ``p = Q y``,
    ``u = -M^{-1} A p``. Needs row ``k`` of ``L``, so step ``k`` must have been
    orthogonalized.
    """
    k = state.L.dim if k is None else k
    if k < 1 or k > state.L.dim:
        raise ValueError(f"iterate {k} not available (L has {state.L.dim} rows)")
    z = _z_full(state, k)
    y = -solve_bidiag(state.B.truncated(k), z)
    p = state.Q[:, :k] @ y
    u = -apply_inverse(fact, spmv(A, p))
    return u, p


def recover_p_hessenberg(state: NsGkbState, k: int | None = None) -> np.ndarray:
    """Cross-check route ``p = -Q (H B)^{-1} beta_1 e_1`` through a dense solve."""
    k = state.L.dim if k is None else k
    HS = state.H.to_dense(k) @ state.B.truncated(k).to_dense()
    e1 = np.zeros(k)
    e1[0] = state.beta1
    return -state.Q[:, :k] @ np.linalg.solve(HS, e1)


def exact_error_energy_norm(state: NsGkbState, k: int, M: SparseMatrixCSR,
                            V: list[np.ndarray] | np.ndarray | None = None) -> float:
    """``||u - u_k||_M`` from a complete decomposition.

    Uses the unknown tail ``chi_{k+1..n}`` and trailing block of
    ``L_n = V^T M V``: the squared error is ``x^T L_tail^{-T} x``. ``V``
    defaults to the retained basis of the state.
    """
    V = state.V if V is None else V
    if V is None:
        raise ValueError("exact error needs the retained left basis V")
    if not state.lucky_breakdown:
        raise ValueError("exact error needs a decomposition run to termination")
    Vm = np.column_stack(list(V)) if isinstance(V, list) else np.asarray(V)
    ntot = state.L.dim
    if not 0 <= k <= ntot:
        raise ValueError(f"k={k} outside [0, {ntot}]")
    if k == ntot:
        return 0.0
    Ldense = Vm[:, :ntot].T @ spmv_matrix(M, Vm[:, :ntot])
    Ltail = UnitLowerTriangular.from_dense(Ldense[k:, k:])
    x = state.chi[k:ntot]
    val = float(x @ solve_unit_lower_transpose(Ltail, x))
    if val < 0.0:
        raise MNormDomainError(val)
    return math.sqrt(val)


def spmv_matrix(M: SparseMatrixCSR, X: np.ndarray) -> np.ndarray:
    return M._csr @ X


@dataclass
class SolveReport:
    u: np.ndarray
    p: np.ndarray
    iterations: int
    residual_history: np.ndarray
    error_estimate_history: np.ndarray
    termination: Termination
    memory_estimate: int
    rhs_norm: float
    lucky_breakdown: bool = False
    negative_estimate: bool = False
    message: str = ""
    # validate mode only
    explicit_residual_history: np.ndarray | None = None
    p_iterates: list[np.ndarray] | None = None
    u_iterates: list[np.ndarray] | None = None
    state: NsGkbState | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED

    @property
    def relative_residual_history(self) -> np.ndarray:
        return self.residual_history / self.rhs_norm


def gkb_memory(m: int, n: int, iterations: int) -> int:
    return m + n * (iterations + 1)


def nscraig_solve(M: SparseMatrixCSR, A: SparseMatrixCSR, b, cfg: SolverConfig | None = None,
                  *, fact: SparseFactorization | None = None) -> SolveReport:
    """Solve ``[[M, A], [A^T, 0]] [u; p] = [0; b]`` with nsCRAIG.

    The approximate solution is formed once, after the stopping test fires.
    Stopping: relative residual ``beta_{k+1}|chi_k| / ||b|| <= tol``, or the
    relative delayed error estimate ``<= tol**2``.
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if M.shape != (m, m):
        raise ValueError(f"M must be {m}x{m}, got {M.shape}")
    fact = fact or factorize(M)
    state = gkb_init(fact, A, b, orthogonalization=cfg.orthogonalization,
                     keep_basis=cfg.validate, capacity=min(n, cfg.maxit + 1))
    beta1 = state.beta1

    res_hist: list[float] = []
    err_hist: list[float] = []
    expl_hist: list[float] = []
    p_its: list[np.ndarray] = []
    u_its: list[np.ndarray] = []
    termination = Termination.MAXIT_REACHED
    message = ""

    while True:
        k = state.k
        gkb_orthogonalize(state, A)
        res = residual_norm(state)
        res_hist.append(res)
        est = None
        if cfg.criterion is Criterion.ERROR_ESTIMATE or cfg.validate:
            est = error_estimate(state, cfg.delay_d)
        if est is not None:
            err_hist.append(est.relative)
        if cfg.validate:
            uk, pk = recover_solution(state, fact, A, k)
            p_its.append(pk)
            u_its.append(uk)
            expl_hist.append(float(np.linalg.norm(b - spmv_t(A, uk))))

        if cfg.criterion is Criterion.RESIDUAL:
            stop = res <= cfg.tol * beta1
        else:
            stop = est is not None and est.relative <= cfg.tol ** 2
        if stop or state.lucky_breakdown:
            # lucky breakdown: the Krylov space is invariant and u_k is exact
            termination = Termination.CONVERGED
            break
        if k >= cfg.maxit:
            termination = Termination.MAXIT_REACHED
            break
        try:
            gkb_extend(state, fact, A)
        except BreakdownError as exc:
            termination = Termination.BREAKDOWN
            message = str(exc)
            log.warning("nsCRAIG breakdown: %s", exc)
            break

    iters = state.L.dim
    u, p = (u_its[-1], p_its[-1]) if cfg.validate else recover_solution(state, fact, A, iters)
    return SolveReport(
        u=u,
        p=p,
        iterations=iters,
        residual_history=np.asarray(res_hist),
        error_estimate_history=np.asarray(err_hist),
        termination=termination,
        memory_estimate=gkb_memory(m, n, iters),
        rhs_norm=beta1,
        lucky_breakdown=state.lucky_breakdown,
        negative_estimate=state.negative_estimate,
        message=message,
        explicit_residual_history=np.asarray(expl_hist) if cfg.validate else None,
        p_iterates=p_its if cfg.validate else None,
        u_iterates=u_its if cfg.validate else None,
        state=state if cfg.validate else None,
    )
