"""Sparse and dense linear algebra helpers.

Wraps a handful of SciPy routines behind the interfaces the solvers
need: deterministic COO->CSR finalization with a reusable sparsity
pattern, an LU factorization that reports structural singularity
instead of silently returning garbage, Gram-orthonormalization, and a
generalized smallest-singular-value solve.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .util import SingularSystemError

# Backward-stable LU produces small residuals even on numerically
# singular systems, so singularity is detected from the pivot spread.
PIVOT_RATIO_TOL = 1e-13


def finalize_csr(rows, cols, data, shape) -> scipy.sparse.csr_matrix:
    """Sum duplicate COO entries into canonical CSR form."""
    m = scipy.sparse.coo_matrix((data, (rows, cols)), shape=shape).tocsr()
    m.sum_duplicates()
    return m


class CsrPattern:
    """Reusable CSR skeleton for repeated assembly on a fixed structure.

    The (rows, cols) structure of an FE matrix depends only on the mesh,
    so the sort/merge is done once; subsequent assemblies with fresh
    entry values reduce into the cached pattern deterministically
    (ordered segment sums, no atomics).
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        self.shape = tuple(shape)
        self.order = np.lexsort((cols, rows))
        r = rows[self.order]
        c = cols[self.order]
        first = np.ones(r.size, dtype=bool)
        first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        self.starts = np.flatnonzero(first)
        self.indices = c[self.starts].astype(np.int32)
        counts = np.bincount(r[self.starts], minlength=self.shape[0])
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def assemble(self, data: np.ndarray) -> scipy.sparse.csr_matrix:
        merged = np.add.reduceat(np.asarray(data, dtype=float).ravel()[self.order],
                                 self.starts)
        return scipy.sparse.csr_matrix((merged, self.indices, self.indptr),
                                       shape=self.shape)


class SparseLU:
    """LU factorization of a sparse square matrix with a pivot check.

    Raises SingularSystemError when the factorization fails outright or
    when the pivot ratio min|U_ii|/max|U_ii| falls below PIVOT_RATIO_TOL,
    naming the smallest pivot's row.
    """

    def __init__(self, matrix: scipy.sparse.spmatrix, context: str = ""):
        try:
            self._lu = scipy.sparse.linalg.splu(matrix.tocsc())
        except RuntimeError as exc:  # "Factor is exactly singular"
            raise SingularSystemError(str(exc), context) from exc
        diag = np.abs(self._lu.U.diagonal())
        largest = diag.max()
        smallest = diag.min()
        if largest == 0.0 or smallest / largest <= PIVOT_RATIO_TOL:
            row = int(np.argmin(diag))
            raise SingularSystemError(
                f"system is numerically singular: pivot ratio "
                f"{smallest / largest if largest else 0.0:.3e} at row {row}",
                context)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(rhs)


def sparse_lu_solve(matrix, rhs, context: str = "") -> np.ndarray:
    return SparseLU(matrix, context).solve(rhs)


def gram_inner(gram, x: np.ndarray, y: np.ndarray) -> float:
    return float(x @ (gram @ y))


def gram_norm(gram, x: np.ndarray) -> float:
    return float(np.sqrt(max(gram_inner(gram, x, x), 0.0)))


def modified_gram_schmidt(vectors, gram, drop_tol: float = 1e-10,
                          against: np.ndarray | None = None):
    """Gram-orthonormalize a sequence of vectors.

    Modified Gram-Schmidt with one classical re-orthogonalization pass.
    A vector whose orthogonal remainder shrinks below ``drop_tol`` times
    the first input vector's norm is dropped as linearly dependent;
    drops are reported through the returned index list, never raised.
    ``against`` supplies already-G-orthonormal columns projected out
    first (and kept out of the returned basis).

    Returns (basis, kept) where basis is (n, k) with G-orthonormal
    columns and kept lists the indices of the surviving inputs.
    """
    fixed = [] if against is None else [against[:, j]
                                        for j in range(against.shape[1])]
    basis: list[np.ndarray] = []
    kept: list[int] = []
    ref = 0.0
    for idx, v in enumerate(vectors):
        v = np.asarray(v, dtype=float).copy()
        if idx == 0:
            ref = gram_norm(gram, v)
        if gram_norm(gram, v) == 0.0:
            continue
        for _ in range(2):
            for u in fixed:
                v -= gram_inner(gram, u, v) * u
            for u in basis:
                v -= gram_inner(gram, u, v) * u
        nrm = gram_norm(gram, v)
        if nrm <= drop_tol * ref:
            continue
        basis.append(v / nrm)
        kept.append(idx)
    n = len(vectors[0]) if len(vectors) else 0
    out = np.column_stack(basis) if basis else np.zeros((n, 0))
    return out, kept


def smallest_gsv(b: np.ndarray, gram_u: np.ndarray, gram_p: np.ndarray) -> float:
    """Smallest generalized singular value of a dense divergence block.

    Computes sqrt(lambda_min) of  (B Xu^{-1} B^T) q = lambda Xp q,
    i.e. the inf-sup constant of B measured in the Xu / Xp inner
    products.
    """
    b = np.asarray(b, dtype=float)
    cho = scipy.linalg.cho_factor(np.asarray(gram_u, dtype=float))
    m = b @ scipy.linalg.cho_solve(cho, b.T)
    m = 0.5 * (m + m.T)
    w = scipy.linalg.eigh(m, np.asarray(gram_p, dtype=float), eigvals_only=True)
    return float(np.sqrt(max(w[0], 0.0)))


def eigh_smallest(m: np.ndarray, gram: np.ndarray):
    """All eigenpairs of the symmetric pencil (m, gram), ascending."""
    m = 0.5 * (np.asarray(m, dtype=float) + np.asarray(m, dtype=float).T)
    w, v = scipy.linalg.eigh(m, np.asarray(gram, dtype=float))
    return w, v
