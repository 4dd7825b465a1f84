"""Dense linear-algebra helpers shared by the estimators and diagnostics.

Everything here operates on small (desk-scale) matrices, so exact
factorizations are cheap and preferred over iterative methods, with one
exception: the spectral-radius estimate uses a fixed, documented power
iteration so that divergence rejections are reproducible.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import SingularCovariance

# Condition estimates above this reject an unregularized solve.
CONDITION_LIMIT = 1e12

# Eigenvalues of a nominally-PSD matrix below -NEGATIVE_EIGENVALUE_TOL are an error;
# anything in (-tol, 0) is clamped to zero.
NEGATIVE_EIGENVALUE_TOL = 1e-12


class SpdSolver:
    """Reusable solver for a symmetric positive (semi)definite system.

    A Cholesky factorization is used when the matrix carries a ridge term
    (guaranteed positive definite); otherwise a column-pivoted QR with a
    condition guard, so a singular unregularized Gram matrix fails loudly
    instead of producing garbage.
    """

    def __init__(self, matrix: np.ndarray, regularized: bool):
        matrix = np.asarray(matrix, dtype=float)
        self.shape = matrix.shape
        self._regularized = regularized
        if regularized:
            try:
                self._cho = scipy.linalg.cho_factor(matrix, lower=True)
            except np.linalg.LinAlgError as exc:
                raise SingularCovariance(np.inf) from exc
        else:
            q, r, perm = scipy.linalg.qr(matrix, pivoting=True)
            diag = np.abs(np.diag(r))
            if diag.size == 0 or diag[-1] == 0.0:
                raise SingularCovariance(np.inf)
            cond = float(diag[0] / diag[-1])
            if cond > CONDITION_LIMIT:
                raise SingularCovariance(cond)
            self._qr = (q, r, perm)
            self.condition_estimate = cond

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``matrix @ x = rhs`` for a vector or a stack of columns."""
        rhs = np.asarray(rhs, dtype=float)
        if self._regularized:
            return scipy.linalg.cho_solve(self._cho, rhs)
        q, r, perm = self._qr
        z = scipy.linalg.solve_triangular(r, q.T @ rhs, lower=False)
        out = np.empty_like(z)
        out[perm] = z
        return out

    def quad_form(self, v: np.ndarray) -> float:
        """Return ``v^T matrix^{-1} v`` (clamped at zero against round-off)."""
        return float(max(np.dot(v, self.solve(v)), 0.0))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def psd_sqrt_pair(matrix: np.ndarray, rel_tol: float = 1e-12):
    """Symmetric square root and (pseudo-)inverse square root of a PSD matrix.

    Returns ``(sqrt, inv_sqrt, singular)`` where ``singular`` reports whether
    any eigenvalue was treated as zero (making ``inv_sqrt`` a pseudo-inverse).
    Eigenvalues below ``-NEGATIVE_EIGENVALUE_TOL`` are rejected as evidence the
    input was not PSD.
    """
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    eigvals, eigvecs = np.linalg.eigh(matrix)
    if eigvals.size and eigvals[0] < -NEGATIVE_EIGENVALUE_TOL:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {eigvals[0]:.3e})")
    eigvals = np.clip(eigvals, 0.0, None)
    floor = rel_tol * max(float(eigvals[-1]) if eigvals.size else 0.0, 1.0)
    positive = eigvals > floor
    singular = bool(np.any(~positive))
    root = np.sqrt(eigvals)
    inv_root = np.where(positive, 1.0 / np.where(positive, root, 1.0), 0.0)
    sqrt = (eigvecs * root) @ eigvecs.T
    inv_sqrt = (eigvecs * inv_root) @ eigvecs.T
    return sqrt, inv_sqrt, singular


def spd_inverse_apply(matrix: np.ndarray, rhs: np.ndarray, allow_pseudo: bool = False):
    """Solve a symmetric PSD system, optionally falling back to a pseudo-inverse.

    Returns ``(solution, singular)``.  With ``allow_pseudo=False`` a singular
    matrix raises :class:`SingularCovariance`.
    """
    matrix = np.asarray(matrix, dtype=float)
    eigvals = np.linalg.eigvalsh(symmetrize(matrix))
    scale = float(eigvals[-1]) if eigvals.size else 0.0
    smallest = float(eigvals[0]) if eigvals.size else 0.0
    singular = smallest <= max(scale, 1.0) / CONDITION_LIMIT
    if singular:
        if not allow_pseudo:
            cond = np.inf if smallest <= 0 else scale / smallest
            raise SingularCovariance(cond)
        return np.linalg.pinv(symmetrize(matrix), hermitian=True) @ rhs, True
    return scipy.linalg.solve(matrix, rhs, assume_a="pos"), False


def spectral_radius(matrix: np.ndarray, iterations: int = 500, tol: float = 1e-10) -> float:
    """Power-iteration estimate of the spectral radius.

    Deterministic all-ones start vector, at most ``iterations`` steps,
    convergence declared when successive step norms agree within ``tol``.
    If the step-norm sequence keeps oscillating (complex dominant pair), the
    geometric mean of the trailing norms is returned.
    """
    matrix = np.asarray(matrix, dtype=float)
    d = matrix.shape[0]
    if d == 0:
        return 0.0
    v = np.ones(d) / np.sqrt(d)
    prev = np.inf
    log_norms: list[float] = []
    for _ in range(iterations):
        w = matrix @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        if abs(norm - prev) <= tol * max(1.0, norm):
            return norm
        log_norms.append(np.log(norm))
        v = w / norm
        prev = norm
    tail = log_norms[-100:]
    return float(np.exp(np.mean(tail)))
