"""Covariance estimation and symmetric-matrix inverse square roots.

These feed the sample-level shared-space mapping. Statistics are constants
with respect to training gradients, so everything here is plain numpy.
The eigensolver is a cyclic Jacobi sweep: exact on symmetric input, fully
deterministic, and more than fast enough for the matrix sizes involved
(a few hundred square at most).
"""

from __future__ import annotations

import numpy as np

from .errors import InsufficientSamplesError, NumericalError, SymmetryError


def covariance(rows: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance of an (n, d) matrix; symmetric PSD output."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected an (n, d) matrix, got shape {rows.shape}")
    n = rows.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"covariance needs at least 2 rows, got {n}")
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    # (c + c.T)/2 is bitwise symmetric; dgemm output may be off in the last ulp
    return (cov + cov.T) / 2.0


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, column eigenvectors). Convergence is to
    machine precision relative to the input's Frobenius norm.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    frob = np.sqrt(np.sum(a * a))
    stop = 1e-15 * max(frob, 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.tril(a, -1) ** 2))
        if off <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                t = sgn / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericalError(f"jacobi eigendecomposition did not converge in {max_sweeps} sweeps")
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def inverse_sqrt_psd(matrix: np.ndarray, eps: float) -> np.ndarray:
    """(S + eps*I)^(-1/2) via eigendecomposition; symmetric output.

    ``eps`` acts as a ridge so rank-deficient covariance matrices stay
    invertible. Raises SymmetryError if the input is asymmetric beyond 1e-8
    and NumericalError if any shifted eigenvalue is non-positive.
    """
    s = np.asarray(matrix, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    if eps <= 0.0:
        raise ValueError(f"ridge eps must be positive, got {eps}")
    drift = float(np.max(np.abs(s - s.T))) if s.size else 0.0
    if drift > 1e-8:
        raise SymmetryError(f"matrix is asymmetric by {drift:.3e} (tolerance 1e-8)")
    sym = (s + s.T) / 2.0
    w, q = jacobi_eigh(sym)
    shifted = w + eps
    if np.any(shifted <= 0.0):
        raise NumericalError(
            f"shifted spectrum is not positive: min eigenvalue {w.min():.3e} + eps {eps:.3e}"
        )
    m = (q * shifted**-0.5) @ q.T
    return (m + m.T) / 2.0
