import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_system, direct_solve
from nscraig.baselines import (
    ArnoldiBasis,
    BlockPreconditionedSystem,
    FomBreakdownError,
    GmresTermination,
    MemoryBudgetError,
    SchurOperator,
    compute_restart_kmax,
    fom_solve,
    gmres_solve,
    memory_estimate,
    schur_apply,
)
from nscraig.gkb import SolverConfig, nscraig_solve
from nscraig.linalg import DimensionError, SparseMatrixCSR, factorize
from nscraig.problems import ProblemSpec, make_system


def schur_op(system):
    return SchurOperator(system.A, factorize(system.M))


def test_schur_identity():
    I3 = SparseMatrixCSR.identity(3)
    x = np.array([1.0, -2.0, 4.0])
    np.testing.assert_array_equal(schur_apply(SchurOperator(I3, factorize(I3)), x), x)


def test_schur_identity_m_is_gram():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((12, 5))
    op = SchurOperator(SparseMatrixCSR.from_dense(A), factorize(SparseMatrixCSR.identity(12)))
    x = rng.standard_normal(5)
    np.testing.assert_allclose(op.apply(x), A.T @ (A @ x), rtol=1e-13)


def test_schur_dense_oracle():
    sys_ = dense_system(30, 10, seed=2)
    Md, Ad = sys_.M.toarray(), sys_.A.toarray()
    S = Ad.T @ np.linalg.solve(Md, Ad)
    x = np.random.default_rng(3).standard_normal(10)
    y = schur_apply(schur_op(sys_), x)
    assert np.linalg.norm(y - S @ x) <= 1e-12 * np.linalg.norm(S @ x)


def test_schur_dimension_mismatch():
    sys_ = dense_system(8, 3, seed=0)
    with pytest.raises(DimensionError):
        schur_apply(schur_op(sys_), np.ones(4))


def test_fom_identity_one_step():
    I3 = SparseMatrixCSR.identity(3)
    b = np.array([2.0, 0.0, -1.0])
    res = fom_solve(SchurOperator(I3, factorize(I3)), -b, 1e-10, 10)
    assert res.iterations == 1 and res.converged
    np.testing.assert_allclose(res.p, -b, rtol=1e-15)


def test_fom_matches_nscraig_60x20():
    system = make_system(ProblemSpec(m=60, n=20, seed=5))
    tol = 1e-6
    rep = nscraig_solve(system.M, system.A, system.b, SolverConfig(tol=tol, validate=True))
    fom = fom_solve(schur_op(system), -system.b, tol, system.n, keep_iterates=True)
    assert fom.iterations == rep.iterations
    for pc, pf in zip(rep.p_iterates, fom.iterates):
        assert np.linalg.norm(pc - pf) <= 1e-8 * np.linalg.norm(pf)


def test_fom_stopping_contract():
    system = make_system(ProblemSpec(m=200, n=20, seed=1))
    rhs = -system.b
    res = fom_solve(schur_op(system), rhs, 1e-5, 100)
    assert res.converged
    assert res.history[-1] <= 1e-5 * np.linalg.norm(rhs)
    assert len(res.history) == res.iterations


def test_fom_breakdown_singular_hessenberg():
    # S = M^{-1} is a plane rotation, so e_1^T S e_1 = 0 exactly
    M = SparseMatrixCSR.from_dense([[0.0, 1.0], [-1.0, 0.0]])
    op = SchurOperator(SparseMatrixCSR.identity(2), factorize(M))
    with pytest.raises(FomBreakdownError) as info:
        fom_solve(op, np.array([1.0, 0.0]), 1e-10, 5)
    assert info.value.step == 1


def test_arnoldi_basis_orthonormal():
    rng = np.random.default_rng(4)
    S = rng.standard_normal((15, 15))
    v = rng.standard_normal(15)
    basis = ArnoldiBasis([v / np.linalg.norm(v)])
    for _ in range(10):
        _, h, w = basis.expand(S @ basis.vectors[-1])
        basis.vectors.append(w / h)
    V = np.column_stack(basis.vectors)
    assert np.abs(V.T @ V - np.eye(V.shape[1])).max() <= 1e-12
    Hbar = basis.hessenberg(10, square=False)
    np.testing.assert_allclose(S @ V[:, :10], V @ Hbar, atol=1e-12)


def test_gmres_identity():
    I3 = SparseMatrixCSR.identity(3)
    b = np.array([1.0, 2.0, -3.0])
    res = gmres_solve(BlockPreconditionedSystem(I3, I3, factorize(I3), b), 1e-12, 50)
    assert res.converged
    np.testing.assert_allclose(res.u, b, atol=1e-12)
    np.testing.assert_allclose(res.p, -b, atol=1e-12)


def test_gmres_oseen_residual():
    system = make_system(ProblemSpec(kind="oseen_fd", grid=8))
    fact = factorize(system.M)
    res = gmres_solve(BlockPreconditionedSystem(system.M, system.A, fact, system.b), 1e-3, 5000)
    assert res.converged
    r1, r2 = system.residuals(res.u, res.p)
    assert np.hypot(r1, r2) <= 1e-2 * np.linalg.norm(system.b)


def test_gmres_one_inverse_per_iteration():
    system = make_system(ProblemSpec(m=60, n=20, seed=2))
    fact = factorize(system.M)
    res = gmres_solve(BlockPreconditionedSystem(system.M, system.A, fact, system.b), 1e-6, 500, restart=4)
    # plus the final mapping u = M^{-1} u~
    assert fact.applications == res.iterations + 1


def test_gmres_history_monotone():
    system = make_system(ProblemSpec(m=200, n=60, seed=3))
    fact = factorize(system.M)
    for restart in (None, 5):
        res = gmres_solve(BlockPreconditionedSystem(system.M, system.A, fact, system.b), 1e-8, 3000, restart)
        h = res.history
        assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_gmres_restart_storage_bound():
    system = make_system(ProblemSpec(kind="oseen_fd", grid=8))
    fact = factorize(system.M)
    iters = nscraig_solve(system.M, system.A, system.b, SolverConfig(tol=1e-3), fact=fact).iterations
    kmax = compute_restart_kmax(iters, system.m, system.n)
    res = gmres_solve(BlockPreconditionedSystem(system.M, system.A, fact, system.b), 1e-3, 20000, kmax)
    assert res.max_basis_scalars <= (system.m + system.n) * (kmax + 1)
    assert res.cycles > 1


def test_gmres_rejects_bad_restart():
    I2 = SparseMatrixCSR.identity(2)
    with pytest.raises(ValueError):
        gmres_solve(BlockPreconditionedSystem(I2, I2, factorize(I2), np.ones(2)), 1e-6, 10, restart=0)


def test_gmres_stagnation_reported():
    # restart 1 on a system with a purely imaginary spectrum makes no progress
    M = SparseMatrixCSR.identity(2)
    A = SparseMatrixCSR.from_dense([[1.0], [0.0]])
    sys_ = BlockPreconditionedSystem(M, A, factorize(M), np.array([1.0]))
    res = gmres_solve(sys_, 1e-10, 100, restart=1)
    assert res.termination is GmresTermination.STAGNATION


def test_restart_kmax_examples():
    assert compute_restart_kmax(10, 400, 100) == 2
    assert compute_restart_kmax(50, 30, 30) == 25
    with pytest.raises(MemoryBudgetError, match="no GMRES iterations"):
        compute_restart_kmax(1, 1000, 1)


def test_memory_estimate_examples():
    assert memory_estimate("gkb", 0, 5, 3) == 8
    assert memory_estimate("gmres", 2, 400, 100) == 1500
    with pytest.raises(ValueError):
        memory_estimate("lsqr", 1, 1, 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10_000), st.integers(1, 5_000), st.integers(1, 5_000))
def test_restart_budget_property(iters, m, n):
    try:
        kmax = compute_restart_kmax(iters, m, n)
    except MemoryBudgetError:
        assert iters * n < m + n
        return
    assert kmax * (m + n) <= m + n * (iters + 1)
    assert memory_estimate("gmres", kmax, m, n) <= memory_estimate("gkb", iters, m, n) + (m + n)
    assert (kmax + 1) * (m + n) > iters * n


def test_block_system_operator_matches_dense():
    sys_ = dense_system(12, 4, seed=7)
    fact = factorize(sys_.M)
    bs = BlockPreconditionedSystem(sys_.M, sys_.A, fact, sys_.b)
    Md, Ad = sys_.M.toarray(), sys_.A.toarray()
    K = np.block([[Md, Ad], [Ad.T, np.zeros((4, 4))]])
    P = np.block([[np.linalg.inv(Md), np.zeros((12, 4))], [np.zeros((4, 12)), np.eye(4)]])
    x = np.random.default_rng(8).standard_normal(16)
    np.testing.assert_allclose(bs.apply(x), K @ P @ x, rtol=1e-10, atol=1e-12)


def test_gmres_unrestarted_matches_direct():
    sys_ = dense_system(20, 6, seed=9)
    fact = factorize(sys_.M)
    res = gmres_solve(BlockPreconditionedSystem(sys_.M, sys_.A, fact, sys_.b), 1e-12, 100)
    u, p = direct_solve(sys_)
    np.testing.assert_allclose(res.u, u, atol=1e-9)
    np.testing.assert_allclose(res.p, p, atol=1e-9)
