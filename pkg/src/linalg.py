"""
EdgeTracer Sparse Linear Algebra

Sparse matrix assembly plus the two solvers used by the denoiser (SPD, conjugate
gradient) and the curve step (general, sparse LU).
"""

import logging
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from errors import ContractViolation, ParameterError, SolverError

logger = logging.getLogger(__name__)


class SparseAssembler:
    """Collects (row, col, value) triplets; duplicates are summed on finalize."""

    def __init__(self, n_rows: int, n_cols: Optional[int] = None):
        self.n_rows = n_rows
        self.n_cols = n_rows if n_cols is None else n_cols
        self._rows: List[np.ndarray] = []
        self._cols: List[np.ndarray] = []
        self._values: List[np.ndarray] = []

    def add(self, row: int, col: int, value: float) -> None:
        self.add_block(np.array([row]), np.array([col]), np.array([value], dtype=float))

    def add_block(self, rows, cols, values) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(values, dtype=float), rows.shape).ravel()
        if rows.shape != cols.shape:
            raise ContractViolation("Row and column index arrays differ in length")
        self._rows.append(rows)
        self._cols.append(cols)
        self._values.append(values)

    def finalize(self) -> sp.csr_matrix:
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            values = np.concatenate(self._values)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            values = np.zeros(0)
        if rows.size and (
            rows.min() < 0
            or cols.min() < 0
            or rows.max() >= self.n_rows
            or cols.max() >= self.n_cols
        ):
            raise ContractViolation(
                f"Triplet index out of range for a {self.n_rows}x{self.n_cols} matrix"
            )
        matrix = sp.coo_matrix((values, (rows, cols)), shape=(self.n_rows, self.n_cols)).tocsr()
        matrix.sum_duplicates()
        return matrix


class LinearSolver:
    """Solvers for the two system patterns of the scheme."""

    @staticmethod
    def residual_norm(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(A @ x - b))

    @staticmethod
    def solve_spd(
        A: sp.spmatrix,
        b: np.ndarray,
        tol: float = 1e-10,
        x0: Optional[np.ndarray] = None,
        max_iter: Optional[int] = None,
    ) -> np.ndarray:
        """
        Jacobi-preconditioned conjugate gradient (scipy `cg`).

        Accepts the result when the true residual ||Ax - b|| <= tol * ||b||
        (absolute tol when b = 0).

        Raises:
            SolverError: iteration cap (10 * n by default) reached first
        """
        A = sp.csr_matrix(A)
        b = np.asarray(b, dtype=float).ravel()
        n = b.size
        if A.shape != (n, n):
            raise ContractViolation(f"Matrix shape {A.shape} does not match vector length {n}")
        if not tol > 0:
            raise ParameterError(f"Solver tolerance must be positive, got {tol}")

        diagonal = A.diagonal()
        if np.any(diagonal <= 0):
            raise SolverError("Matrix is not positive definite (non-positive diagonal)")
        preconditioner = sp.diags(1.0 / diagonal)
        b_norm = float(np.linalg.norm(b))
        target = tol * b_norm if b_norm > 0 else tol
        cap = 10 * n if max_iter is None else max_iter

        iterations = 0

        def count(_):
            nonlocal iterations
            iterations += 1

        x = x0
        for _ in range(2):
            # cg stops on its recursive residual; restart once if the true one misses
            x, info = spla.cg(
                A, b, x0=x, rtol=tol, atol=0.0 if b_norm > 0 else tol,
                maxiter=cap, M=preconditioner, callback=count,
            )
            residual = LinearSolver.residual_norm(A, x, b)
            if info != 0 or residual <= target:
                break
        if info < 0 or not residual <= target:
            raise SolverError("Conjugate gradient did not converge", residual, iterations)
        logger.debug(f"CG converged: n={n}, iterations={iterations}, residual={residual:.3e}")
        return x

    @staticmethod
    def solve_general(A: sp.spmatrix, b: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """
        Sparse LU solve with one step of iterative refinement when needed.

        Raises:
            SolverError: singular factorization or relative residual above tol
        """
        A = sp.csc_matrix(A)
        b = np.asarray(b, dtype=float).ravel()
        n = b.size
        if A.shape != (n, n):
            raise ContractViolation(f"Matrix shape {A.shape} does not match vector length {n}")
        try:
            lu = spla.splu(A)
        except RuntimeError as e:
            raise SolverError(f"Sparse LU factorization failed: {e}") from e

        x = lu.solve(b)
        b_norm = float(np.linalg.norm(b))
        scale = b_norm if b_norm > 0 else 1.0
        residual = LinearSolver.residual_norm(A, x, b)
        if not residual <= tol * scale:
            x = x + lu.solve(b - A @ x)
            residual = LinearSolver.residual_norm(A, x, b)
        if not np.all(np.isfinite(x)) or not residual <= tol * scale:
            raise SolverError("Sparse LU solution misses the residual bound", residual, 1)
        return x
