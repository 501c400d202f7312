"""Sparse linear algebra used by every primal and dual step.

Matrices are stored as :class:`scipy.sparse.csr_matrix`; the solver is a
diagonally preconditioned conjugate-gradient iteration written here so that
its convergence contract (relative residual, iteration cap, NaN detection) is
explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

SparseMatrix = sp.csr_matrix


class SolverError(RuntimeError):
    """Raised when the iterative solver fails to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-12
    max_iterations: Optional[int] = None  # None means 10 * n
    preconditioner: str = "diagonal"

    def __post_init__(self):
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


DEFAULT_SOLVER = SolverConfig()


def _check_dims(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"dimension mismatch: {np.shape(a)} vs {np.shape(b)}")


def to_sparse(a) -> SparseMatrix:
    """Compress a dense array or any scipy sparse matrix to CSR with sorted indices."""
    m = sp.csr_matrix(a)
    m.sum_duplicates()
    m.sort_indices()
    return m


def spmv(a: SparseMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: matrix has {a.shape[1]} columns, vector {x.shape}")
    return a @ x


def dot(x, y) -> float:
    _check_dims(x, y)
    return float(np.dot(x, y))


def axpy(alpha, x, y) -> np.ndarray:
    """Return ``alpha * x + y``."""
    _check_dims(x, y)
    return alpha * np.asarray(x, dtype=float) + np.asarray(y, dtype=float)


def norm2(x) -> float:
    return float(np.linalg.norm(x))


def is_symmetric(a: SparseMatrix, rtol=1e-12) -> bool:
    scale = abs(a).max() if a.nnz else 0.0
    if scale == 0.0:
        return True
    diff = a - a.T
    return (abs(diff).max() if diff.nnz else 0.0) <= rtol * scale


def cg_solve(a: SparseMatrix, b, cfg: SolverConfig = DEFAULT_SOLVER, x0=None) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive-definite ``a``.

    Returns ``x`` with ``||b - a x|| <= cfg.rel_tolerance * ||b||``. The
    stopping test is re-checked on the true residual before returning, so
    recursive-residual drift cannot produce a false convergence report.
    ``cfg=None`` selects the defaults.
    """
    cfg = DEFAULT_SOLVER if cfg is None else cfg
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape[0] != a.shape[1] or b.shape != (n,):
        raise ValueError(f"dimension mismatch: matrix {a.shape}, rhs {b.shape}")
    if not np.all(np.isfinite(b)):
        raise SolverError("NaN or inf in right-hand side")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    target = cfg.rel_tolerance * bnorm
    max_it = cfg.max_iterations if cfg.max_iterations is not None else 10 * n
    if cfg.preconditioner == "diagonal":
        d = a.diagonal()
        if np.any(d <= 0):
            raise SolverError("non-positive diagonal; matrix is not SPD")
        inv_d = 1.0 / d
    else:
        inv_d = None

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - a @ x
    it = 0
    restarts = 0
    while True:
        z = r * inv_d if inv_d is not None else r.copy()
        p = z.copy()
        rz = r @ z
        rnorm = np.linalg.norm(r)
        while rnorm > target and it < max_it:
            ap = a @ p
            pap = p @ ap
            if not np.isfinite(pap):
                raise SolverError("NaN detected in CG iteration", rnorm / bnorm, it)
            if pap <= 0:
                raise SolverError("matrix is not positive definite", rnorm / bnorm, it)
            alpha = rz / pap
            x += alpha * p
            r -= alpha * ap
            z = r * inv_d if inv_d is not None else r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            rnorm = np.linalg.norm(r)
            it += 1
        r = b - a @ x
        true_norm = np.linalg.norm(r)
        if not np.isfinite(true_norm):
            raise SolverError("NaN detected in CG solution", true_norm, it)
        if true_norm <= target:
            return x
        # recursive residual converged but the true one did not: restart a few times
        if it >= max_it or restarts >= 5:
            raise SolverError(
                f"CG did not converge: relative residual {true_norm / bnorm:.3e} "
                f"after {it} iterations (target {cfg.rel_tolerance:.1e})",
                true_norm / bnorm,
                it,
            )
        restarts += 1
