import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_system, direct_solve
from nscraig.linalg import SparseMatrixCSR
from nscraig.problems import (
    ProblemSpec,
    SaddleSystem,
    gen_oseen_fd,
    gen_synthetic,
    make_system,
    oseen_sizes,
    reduce_general_form,
    validate_system,
)


def same_matrix(X: SparseMatrixCSR, Y: SparseMatrixCSR) -> bool:
    return (X.shape == Y.shape and np.array_equal(X.row_offsets, Y.row_offsets)
            and np.array_equal(X.col_indices, Y.col_indices) and np.array_equal(X.values, Y.values))


@pytest.mark.parametrize("spec", [ProblemSpec(m=80, n=25, seed=9), ProblemSpec(kind="oseen_fd", grid=5, seed=2)])
def test_generators_deterministic(spec):
    s1, s2 = make_system(spec), make_system(spec)
    assert same_matrix(s1.M, s2.M) and same_matrix(s1.A, s2.A)
    np.testing.assert_array_equal(s1.b, s2.b)


def test_different_seeds_differ():
    s1 = make_system(ProblemSpec(m=60, n=20, seed=0))
    s2 = make_system(ProblemSpec(m=60, n=20, seed=1))
    assert not np.array_equal(s1.b, s2.b)


def test_synthetic_skew_zero_symmetric():
    M = gen_synthetic(ProblemSpec(m=70, n=10, seed=3, skew_scale=0.0)).M.toarray()
    np.testing.assert_array_equal(M, M.T)


def test_synthetic_nonsymmetric_by_default():
    M = gen_synthetic(ProblemSpec(m=70, n=10, seed=3)).M.toarray()
    assert np.abs(M - M.T).max() > 0.1


def test_synthetic_quadratic_form_positive():
    system = gen_synthetic(ProblemSpec(m=100, n=30, seed=4))
    rng = np.random.default_rng(5)
    Md = system.M.toarray()
    X = rng.standard_normal((100, 100))
    X /= np.linalg.norm(X, axis=0)
    assert np.einsum("ij,ij->j", X, Md @ X).min() > 0


def test_synthetic_rejects_n_ge_m():
    with pytest.raises(ValueError):
        ProblemSpec(m=20, n=20)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 120), st.integers(1, 40), st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_synthetic_structure_property(m, n, seed, skew):
    n = min(n, m - 1)
    system = gen_synthetic(ProblemSpec(m=m, n=n, seed=seed, skew_scale=skew))
    Md = system.M.toarray()
    # symmetric part is strictly diagonally dominant with a positive diagonal
    Sym = (Md + Md.T) / 2
    off = np.abs(Sym).sum(axis=1) - np.abs(np.diag(Sym))
    assert np.all(np.diag(Sym) > off)
    assert np.linalg.matrix_rank(system.A.toarray()) == n
    assert np.linalg.norm(system.b) == pytest.approx(1.0, rel=1e-14)


def test_oseen_sizes():
    assert oseen_sizes(12) == (1058, 143)
    system = gen_oseen_fd(ProblemSpec(kind="oseen_fd", grid=4))
    assert (system.m, system.n) == oseen_sizes(4)


def test_oseen_no_wind_exactly_symmetric():
    M = gen_oseen_fd(ProblemSpec(kind="oseen_fd", grid=6, wind=(0.0, 0.0))).M.toarray()
    np.testing.assert_array_equal(M, M.T)


def test_oseen_skew_part_annihilated():
    nu = 0.05
    windy = gen_oseen_fd(ProblemSpec(kind="oseen_fd", grid=6, nu=nu, wind=(1.0, -2.0))).M.toarray()
    still = gen_oseen_fd(ProblemSpec(kind="oseen_fd", grid=6, nu=nu, wind=(0.0, 0.0))).M.toarray()
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.standard_normal(windy.shape[0])
        assert x @ windy @ x == pytest.approx(x @ still @ x, rel=1e-12)
    N = windy - still
    np.testing.assert_allclose(N, -N.T, atol=1e-12 * np.abs(N).max())


def test_oseen_gradient_full_rank_grid8():
    A = gen_oseen_fd(ProblemSpec(kind="oseen_fd", grid=8)).A.toarray()
    assert A.shape[1] == 63
    assert np.linalg.matrix_rank(A) == 63


def test_oseen_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ProblemSpec(kind="oseen_fd", grid=2)
    with pytest.raises(ValueError):
        ProblemSpec(kind="oseen_fd", nu=0.0)


@pytest.mark.parametrize("spec", [ProblemSpec(kind="oseen_fd", grid=12), ProblemSpec(m=200, n=60, seed=2),
                                  ProblemSpec(kind="oseen_fd", grid=15)])
def test_generated_systems_validate(spec):
    rep = validate_system(make_system(spec))
    assert rep.ok, rep
    assert rep.method == ("inverse_power" if make_system(spec).n > 200 else "dense_svd")


def test_validate_identity_m():
    sys_ = SaddleSystem(SparseMatrixCSR.identity(5), SparseMatrixCSR.from_dense(np.eye(5)[:, :2]), np.ones(2))
    rep = validate_system(sys_)
    assert rep.min_quadratic_form == pytest.approx(1.0, rel=1e-14)
    assert rep.ok


def test_validate_duplicated_column():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((10, 3))
    A[:, 2] = A[:, 0]
    sys_ = SaddleSystem(SparseMatrixCSR.identity(10), SparseMatrixCSR.from_dense(A), np.ones(3))
    rep = validate_system(sys_)
    assert rep.positive_definite
    assert not rep.full_column_rank


def test_validate_indefinite_m():
    Md = np.diag([1.0, -1.0, 1.0])
    sys_ = SaddleSystem(SparseMatrixCSR.from_dense(Md), SparseMatrixCSR.from_dense(np.eye(3)[:, :1]), np.ones(1))
    rep = validate_system(sys_, samples=200)
    assert not rep.positive_definite


def test_reduce_zero_b1():
    sys_ = dense_system(10, 4, seed=1)
    b, w0 = reduce_general_form(sys_.M, sys_.A, np.zeros(10), sys_.b)
    np.testing.assert_array_equal(b, sys_.b)
    np.testing.assert_array_equal(w0, np.zeros(10))


def test_reduce_consistent_gives_zero():
    sys_ = dense_system(10, 4, seed=2)
    b1 = np.random.default_rng(3).standard_normal(10)
    b2 = sys_.A.toarray().T @ np.linalg.solve(sys_.M.toarray(), b1)
    b, _ = reduce_general_form(sys_.M, sys_.A, b1, b2)
    assert np.linalg.norm(b) <= 1e-12 * np.linalg.norm(b2)


def test_reduce_round_trip_30x10():
    sys_ = dense_system(30, 10, seed=4)
    rng = np.random.default_rng(5)
    b1, b2 = rng.standard_normal(30), rng.standard_normal(10)
    b, w0 = reduce_general_form(sys_.M, sys_.A, b1, b2)
    reduced = SaddleSystem(sys_.M, sys_.A, b)
    u, p = direct_solve(reduced)
    w = u + w0
    Md, Ad = sys_.M.toarray(), sys_.A.toarray()
    assert np.linalg.norm(Md @ w + Ad @ p - b1) <= 1e-9 * np.linalg.norm(b1)
    assert np.linalg.norm(Ad.T @ w - b2) <= 1e-9 * np.linalg.norm(b2)


def test_saddle_system_dimension_checks():
    I3 = SparseMatrixCSR.identity(3)
    with pytest.raises(ValueError):
        SaddleSystem(I3, SparseMatrixCSR.identity(2), np.ones(2))
    with pytest.raises(ValueError):
        SaddleSystem(I3, SparseMatrixCSR.from_dense(np.ones((3, 2))), np.ones(3))


def test_spec_digest_stable():
    a = ProblemSpec(kind="oseen_fd", grid=7, wind=[1, 0.5])
    b = ProblemSpec(kind="oseen_fd", grid=7, wind=(1.0, 0.5))
    assert a.digest() == b.digest()
    assert a.digest() != ProblemSpec(kind="oseen_fd", grid=8).digest()
