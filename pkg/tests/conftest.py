"""Shared fixtures and independent oracles for the test suite."""
from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from nscraig.linalg import SparseMatrixCSR
from nscraig.problems import ProblemSpec, SaddleSystem, make_system

SUITE_SHAPES = [(60, 20), (200, 20), (200, 60)]

_ACCEPTANCE_LINES: list[str] = []


def suite_specs() -> list[ProblemSpec]:
    """20 seeded synthetic systems cycling over the suite shapes, plus one Oseen system."""
    specs = [ProblemSpec(kind="synthetic", m=SUITE_SHAPES[s % 3][0], n=SUITE_SHAPES[s % 3][1], seed=s)
             for s in range(20)]
    specs.append(ProblemSpec(kind="oseen_fd", grid=12, nu=0.01))
    return specs


def direct_solve(system: SaddleSystem) -> tuple[np.ndarray, np.ndarray]:
    """Sparse LU of the assembled KKT matrix; independent of every solver under test."""
    M = system.M.to_scipy()
    A = system.A.to_scipy()
    K = sp.bmat([[M, A], [A.T, None]], format="csc")
    rhs = np.concatenate([np.zeros(system.m), system.b])
    x = spla.spsolve(K, rhs)
    return x[: system.m], x[system.m:]


def dense_nonsym_pd(m: int, rng: np.random.Generator, skew: float = 1.0) -> np.ndarray:
    """Dense matrix whose symmetric part is SPD with smallest eigenvalue >= 1."""
    G = rng.standard_normal((m, m))
    K = rng.standard_normal((m, m))
    return G @ G.T / m + np.eye(m) + skew * (K - K.T) / 2


def dense_system(m: int, n: int, seed: int, skew: float = 1.0) -> SaddleSystem:
    rng = np.random.default_rng(seed)
    M = dense_nonsym_pd(m, rng, skew)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(n)
    return SaddleSystem(SparseMatrixCSR.from_dense(M), SparseMatrixCSR.from_dense(A), b)


def energy_norm(M: SparseMatrixCSR, x: np.ndarray) -> float:
    return float(np.sqrt(x @ (M.toarray() @ x)))


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="session")
def suite():
    return [(spec, make_system(spec)) for spec in suite_specs()]


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
