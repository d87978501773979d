"""Matrix Market reading/writing and the on-disk system layout.

A system directory holds ``M.mtx``, ``A.mtx``, ``b.mtx`` and optionally
``b1.mtx`` and ``meta.json`` (the generating problem spec).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linalg import SparseMatrixCSR
from .problems import ProblemSpec, SaddleSystem

__all__ = [
    "MatrixMarketError",
    "read_matrix_market",
    "read_vector",
    "write_matrix_market",
    "write_vector",
    "load_matrix_market",
    "load_system",
    "save_system",
]


class MatrixMarketError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class HeaderError(MatrixMarketError):
    pass


class IndexRangeError(MatrixMarketError):
    pass


class DimensionMismatchError(MatrixMarketError):
    pass


def _data_lines(lines: list[str], start: int):
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        s = raw.strip()
        if s and not s.startswith("%"):
            yield lineno, s


def _parse_header(path, lines: list[str]) -> tuple[str, str, str]:
    if not lines:
        raise HeaderError(path, 1, "empty file")
    parts = lines[0].split()
    if len(parts) != 5 or parts[0].lower() != "%%matrixmarket" or parts[1].lower() != "matrix":
        raise HeaderError(path, 1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'")
    fmt, fld, sym = (p.lower() for p in parts[2:])
    if fmt not in ("coordinate", "array"):
        raise HeaderError(path, 1, f"unsupported format {fmt!r}")
    if fld not in ("real", "integer", "double"):
        raise HeaderError(path, 1, f"unsupported field {fld!r} (real only)")
    if sym not in ("general", "symmetric"):
        raise HeaderError(path, 1, f"unsupported symmetry {sym!r}")
    return fmt, fld, sym


def _ints(path, lineno: int, tokens: list[str], count: int) -> list[int]:
    if len(tokens) != count:
        raise HeaderError(path, lineno, f"expected {count} integers, got {len(tokens)} fields")
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise HeaderError(path, lineno, f"non-integer size line {' '.join(tokens)!r}") from None


def read_matrix_market(path) -> sp.csr_matrix:
    """Parse a real coordinate or array file; symmetric files are expanded."""
    path = Path(path)
    lines = path.read_text().splitlines()
    fmt, _, sym = _parse_header(path, lines)
    body = _data_lines(lines, 1)
    try:
        size_line, size = next(body)
    except StopIteration:
        raise HeaderError(path, len(lines), "missing size line") from None

    if fmt == "coordinate":
        nrows, ncols, nnz = _ints(path, size_line, size.split(), 3)
        r = np.empty(nnz, dtype=np.int64)
        c = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz)
        count = 0
        for lineno, s in body:
            if count == nnz:
                raise DimensionMismatchError(path, lineno, f"more than the declared {nnz} entries")
            tok = s.split()
            if len(tok) != 3:
                raise MatrixMarketError(path, lineno, "expected 'row col value'")
            try:
                i, j, x = int(tok[0]), int(tok[1]), float(tok[2])
            except ValueError:
                raise MatrixMarketError(path, lineno, f"unparsable entry {s!r}") from None
            if not (1 <= i <= nrows and 1 <= j <= ncols):
                raise IndexRangeError(path, lineno, f"index ({i}, {j}) outside {nrows}x{ncols}")
            r[count], c[count], v[count] = i - 1, j - 1, x
            count += 1
        if count != nnz:
            raise DimensionMismatchError(path, len(lines), f"declared {nnz} entries, found {count}")
        if sym == "symmetric":
            off = r != c
            r, c, v = np.concatenate([r, c[off]]), np.concatenate([c, r[off]]), np.concatenate([v, v[off]])
        return sp.csr_matrix((v, (r, c)), shape=(nrows, ncols))

    nrows, ncols = _ints(path, size_line, size.split(), 2)
    vals = []
    for lineno, s in body:
        try:
            vals.append(float(s))
        except ValueError:
            raise MatrixMarketError(path, lineno, f"unparsable value {s!r}") from None
    if sym == "symmetric":
        need = nrows * (nrows + 1) // 2
        if nrows != ncols or len(vals) != need:
            raise DimensionMismatchError(path, len(lines), f"expected {need} packed symmetric values")
        dense = np.zeros((nrows, ncols))
        dense[np.triu_indices(nrows)[::-1]] = vals  # column-major lower triangle
        dense = dense + np.tril(dense, -1).T
    else:
        if len(vals) != nrows * ncols:
            raise DimensionMismatchError(path, len(lines), f"expected {nrows * ncols} values, found {len(vals)}")
        dense = np.asarray(vals).reshape((ncols, nrows)).T
    return sp.csr_matrix(dense)


def load_matrix_market(path) -> SparseMatrixCSR:
    return SparseMatrixCSR.from_scipy(read_matrix_market(path))


def read_vector(path) -> np.ndarray:
    mat = read_matrix_market(path)
    if mat.shape[1] != 1:
        raise DimensionMismatchError(path, 2, f"vector file must have one column, got {mat.shape}")
    return mat.toarray().ravel()


def write_matrix_market(path, mat, comment: str | None = None) -> None:
    """Coordinate/real/general, values in shortest round-trip form."""
    csr = mat._csr if isinstance(mat, SparseMatrixCSR) else sp.csr_matrix(mat)
    coo = csr.tocoo()
    order = np.lexsort((coo.col, coo.row))
    out = ["%%MatrixMarket matrix coordinate real general"]
    if comment:
        out.append(f"% {comment}")
    out.append(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}")
    out.extend(f"{i + 1} {j + 1} {float(x)!r}" for i, j, x in
               zip(coo.row[order], coo.col[order], coo.data[order]))
    Path(path).write_text("\n".join(out) + "\n")


def write_vector(path, vec) -> None:
    vec = np.asarray(vec, dtype=np.float64).ravel()
    out = ["%%MatrixMarket matrix array real general", f"{vec.size} 1"]
    out.extend(repr(float(x)) for x in vec)
    Path(path).write_text("\n".join(out) + "\n")


def save_system(directory, system: SaddleSystem) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_market(d / "M.mtx", system.M)
    write_matrix_market(d / "A.mtx", system.A)
    write_vector(d / "b.mtx", system.b)
    if system.b1 is not None:
        write_vector(d / "b1.mtx", system.b1)
    if system.spec is not None:
        (d / "meta.json").write_text(json.dumps(system.spec.to_json(), indent=2, sort_keys=True))
    return d


def load_system(directory) -> SaddleSystem:
    d = Path(directory)
    M = load_matrix_market(d / "M.mtx")
    A = load_matrix_market(d / "A.mtx")
    b = read_vector(d / "b.mtx")
    if M.nrows != M.ncols:
        raise DimensionMismatchError(d / "M.mtx", 2, f"M must be square, got {M.shape}")
    if A.nrows != M.nrows:
        raise DimensionMismatchError(d / "A.mtx", 2, f"A has {A.nrows} rows, M has {M.nrows}")
    if b.shape[0] != A.ncols:
        raise DimensionMismatchError(d / "b.mtx", 2, f"b has length {b.shape[0]}, A has {A.ncols} columns")
    b1 = read_vector(d / "b1.mtx") if (d / "b1.mtx").exists() else None
    if b1 is not None and b1.shape[0] != M.nrows:
        raise DimensionMismatchError(d / "b1.mtx", 2, f"b1 has length {b1.shape[0]}, M has {M.nrows} rows")
    spec = None
    if (d / "meta.json").exists():
        meta = json.loads((d / "meta.json").read_text())
        spec = ProblemSpec(**{**meta, "wind": tuple(meta.get("wind", (1.0, 0.5)))})
    return SaddleSystem(M, A, b, b1=b1, spec=spec)
