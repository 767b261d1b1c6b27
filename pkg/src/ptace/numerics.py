"""Dense complex linear-algebra kernels.

Matrices are plain ``numpy`` arrays of dtype ``complex128``; the helpers here
only add the validation and truncation rules the rest of the engine relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.linalg.lapack

from .errors import DegenerateCompressionError, DimensionError, ValidationError

__all__ = [
    "TruncatedSVD",
    "as_operator",
    "matrix_exp",
    "projected_svd",
    "truncated_svd",
]


def as_operator(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-d complex array, raising on bad input."""
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return arr


@dataclass(frozen=True)
class TruncatedSVD:
    """Rank-``rank`` factorization ``u @ diag(sigma) @ v_dag``."""

    u: np.ndarray
    sigma: np.ndarray
    v_dag: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.sigma.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v_dag


# QR preconditioning pays off once one side is this many times longer
QR_ASPECT = 3


def _svd_square(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge on badly scaled input
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd", check_finite=False)


def _svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, n = a.shape
    if n >= QR_ASPECT * m:
        q, r = scipy.linalg.qr(a.conj().T, mode="economic", check_finite=False)
        w, s, vh = _svd_square(r.conj().T)
        return w, s, (q @ vh.conj().T).conj().T
    if m >= QR_ASPECT * n:
        q, r = scipy.linalg.qr(a, mode="economic", check_finite=False)
        w, s, vh = _svd_square(r)
        return q @ w, s, vh
    return _svd_square(a)


# LAPACK block size for geqrf; the f2py default workspace forces the unblocked path
QR_BLOCK = 64


def _r_factor(a: np.ndarray) -> np.ndarray:
    """Upper-triangular ``R`` (``k x n``) of an economic QR of ``a``."""
    m, n = a.shape
    k = min(m, n)
    geqrf = scipy.linalg.lapack.zgeqrf if np.iscomplexobj(a) else scipy.linalg.lapack.dgeqrf
    # a Fortran-ordered input (e.g. the transpose of a C array) is copied once by f2py
    qr, _, _, info = geqrf(a, lwork=max(1, n * QR_BLOCK), overwrite_a=0)
    if info != 0:
        raise np.linalg.LinAlgError(f"geqrf failed with info={info}")
    return np.triu(qr[:k])


def _keep(s: np.ndarray, eps_rel: float) -> int:
    if s[0] == 0.0:
        raise DegenerateCompressionError("cannot compress an all-zero matrix")
    return max(1, int(np.count_nonzero(s >= eps_rel * s[0])))


def _check_eps(eps_rel: float) -> None:
    if not 0.0 <= eps_rel < 1.0:
        raise ValidationError(f"eps_rel must lie in [0, 1), got {eps_rel}")


def truncated_svd(a, eps_rel: float) -> TruncatedSVD:
    """Truncated singular value decomposition.

    Keeps every singular value ``s_j >= eps_rel * s_0`` where ``s_0`` is the
    largest one, and never less than one value.

    Args:
        a: Matrix to factorize.
        eps_rel: Relative threshold in ``[0, 1)``.

    Returns:
        The truncated factors; ``sigma`` is sorted in descending order.

    Raises:
        DegenerateCompressionError: If ``a`` is identically zero.
    """
    _check_eps(eps_rel)
    a = as_operator(a)
    u, s, vh = _svd(a)
    keep = _keep(s, eps_rel)
    return TruncatedSVD(u=u[:, :keep], sigma=s[:keep].copy(), v_dag=vh[:keep, :])


def projected_svd(a, eps_rel: float, *, check: bool = True) -> TruncatedSVD:
    """Truncated SVD whose long-side factor is obtained by projection.

    The singular values and the short-side factor come from an SVD of the
    triangular QR factor. The long-side factor is then ``U^+ a / sigma`` (or
    ``a V / sigma``), which avoids forming the orthogonal QR factor. The
    product ``u diag(sigma) v_dag`` is the exact orthogonal projection of
    ``a`` onto the kept subspace. Orthonormality of the long-side factor,
    however, degrades like ``1e-16 * s_0 / s_j`` for tiny kept values, so use
    :func:`truncated_svd` when both factors must be orthonormal.

    Args:
        a: Matrix to factorize.
        eps_rel: Relative threshold in ``[0, 1)``.
        check: Validate ``a`` and ``eps_rel``. Hot loops that build ``a``
            themselves pass ``False``.
    """
    if check:
        _check_eps(eps_rel)
        a = as_operator(a)
    m, n = a.shape
    if n >= QR_ASPECT * m:
        # a^T = Q R, so a = R^T Q^T shares its left singular vectors with R^T
        u, s, _ = _svd_square(_r_factor(a.T).T)
        keep = _keep(s, eps_rel)
        u, s = u[:, :keep], s[:keep].copy()
        return TruncatedSVD(u=u, sigma=s, v_dag=(u / s[None, :]).conj().T @ a)
    if m >= QR_ASPECT * n:
        _, s, vh = _svd_square(_r_factor(np.asfortranarray(a)))
        keep = _keep(s, eps_rel)
        vh, s = vh[:keep], s[:keep].copy()
        return TruncatedSVD(u=a @ (vh.conj().T / s[None, :]), sigma=s, v_dag=vh)
    return truncated_svd(a, eps_rel)


def matrix_exp(m) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade approximant."""
    m = as_operator(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"matrix_exp needs a square matrix, got shape {m.shape}")
    return scipy.linalg.expm(m)
