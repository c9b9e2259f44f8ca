"""Dense real linear algebra primitives used by every other module.

Matrices are plain 2-D float64 numpy arrays (row-major). ``as_matrix``
is the validating constructor; operations check shapes and raise
:class:`ShapeError` / :class:`SingularMatrixError` rather than letting
numpy produce something silently wrong. Everything here is pure and
safe to share across threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ShapeError, SingularMatrixError

Matrix = np.ndarray


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Validate and return a 2-D float64 matrix.

    Rejects non-2-D input, NaN/Inf entries, and (when given) mismatched
    rows/cols. Returns a C-contiguous float64 array.
    """
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"matrix dimensions must be positive, got {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {a.shape[1]}")
    if not np.isfinite(a).all():
        raise ShapeError("matrix entries must be finite (no NaN/Inf)")
    return a


@dataclass(frozen=True)
class SymSpectrum:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are sorted ascending; the columns of ``eigenvectors``
    are the matching unit-norm eigenvectors, orthonormal to 1e-10.
    """

    eigenvalues: np.ndarray
    eigenvectors: Matrix

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def v_min(self) -> np.ndarray:
        return self.eigenvectors[:, 0].copy()

    def v_max(self) -> np.ndarray:
        return self.eigenvectors[:, -1].copy()


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product a @ b with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def kron(a: Matrix, b: Matrix) -> Matrix:
    """Kronecker product: block (i, j) of the result equals a[i, j] * b."""
    return np.kron(a, b)


def sym_eig(a: Matrix, rel_asym_tol: float = 1e-10) -> SymSpectrum:
    """Eigendecomposition of a (nearly) symmetric matrix.

    The input is symmetrized as (a + a.T)/2 before decomposition, so
    finite-difference Hessians that are symmetric only to roundoff are
    accepted. Asymmetry beyond ``rel_asym_tol`` (relative to the largest
    entry) raises ShapeError.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sym_eig expects a square matrix, got {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if scale > 0 and asym > rel_asym_tol * max(scale, 1.0) * 10:
        # allow modest slack: FD Hessians are symmetric to ~sqrt(eps)*scale
        if asym > 1e-6 * max(scale, 1.0):
            raise ShapeError(
                f"matrix is not symmetric: max|a - a.T| = {asym:.3e} "
                f"(scale {scale:.3e})"
            )
    sym = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(sym)
    return SymSpectrum(eigenvalues=w, eigenvectors=v)


def solve(a: Matrix, b: np.ndarray, pivot_rtol: float = 1e-12) -> np.ndarray:
    """Solve a @ x = b by LU with partial pivoting.

    Raises SingularMatrixError when any pivot falls below
    ``pivot_rtol * max|a|``, which covers exactly singular and
    numerically singular systems alike.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve expects a square matrix, got {a.shape}")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"rhs length {b.shape[0]} != matrix order {a.shape[0]}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    scale = float(np.max(np.abs(a)))
    pivots = np.abs(np.diag(lu))
    if scale == 0.0 or np.any(pivots < pivot_rtol * scale):
        raise SingularMatrixError(
            f"singular system: smallest pivot {pivots.min() if scale else 0.0:.3e} "
            f"below {pivot_rtol:.1e} * scale {scale:.3e}"
        )
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def solve_spd(a: Matrix, b: np.ndarray) -> np.ndarray:
    """Solve a symmetric positive-definite system via Cholesky."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_spd expects a square matrix, got {a.shape}")
    c, low = scipy.linalg.cho_factor(a, check_finite=False)
    return scipy.linalg.cho_solve((c, low), b, check_finite=False)


def singular_values(a: Matrix) -> np.ndarray:
    """Singular values in descending order."""
    if a.ndim != 2:
        raise ShapeError("singular_values expects a 2-D matrix")
    return np.linalg.svd(a, compute_uv=False)


def numerical_rank(a: Matrix, rel_tol: float = 1e-3) -> int:
    """Count singular values above ``rel_tol * sigma_max``; 0 for the zero matrix."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    s = singular_values(a)
    smax = float(s[0]) if s.size else 0.0
    if smax == 0.0:
        return 0
    return int(np.sum(s > rel_tol * smax))


def commutation_matrix(rows: int, cols: int) -> Matrix:
    """Permutation K with vec_r(V.T) = K @ vec_r(V) for V of shape (rows, cols).

    Used to assemble analytic Hessian blocks whose natural derivation is
    with respect to a transposed weight matrix, in the package-wide
    row-vectorized parameter layout.
    """
    k = np.zeros((rows * cols, rows * cols))
    for i in range(rows):
        for j in range(cols):
            k[j * rows + i, i * cols + j] = 1.0
    return k
