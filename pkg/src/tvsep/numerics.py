"""Complex-matrix helpers shared by the inference code.

Every function accepts arrays with arbitrary leading batch dimensions; the
last two axes are the matrix axes.
"""

import warnings

import numpy as np

DEFAULT_JITTER = 1e-7
PSD_TOL = 1e-9


class ConditioningError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be inverted even after regularization."""


class ConditioningWarning(RuntimeWarning):
    pass


def _check_square(M):
    M = np.asarray(M)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {M.shape}")
    return M


def hermitianize(M):
    """Return ``(M + M^H) / 2``."""
    M = _check_square(M)
    return 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))


def is_hermitian_psd(M, tol=PSD_TOL):
    """Check the Hermitian-PSD invariant on every matrix of a batch.

    The smallest eigenvalue may dip to ``-tol * trace`` to absorb round-off.
    """
    M = _check_square(M)
    if not np.array_equal(M, np.conj(np.swapaxes(M, -1, -2))):
        return False
    eig = np.linalg.eigvalsh(M)
    scale = np.maximum(np.abs(np.trace(M, axis1=-2, axis2=-1).real), 1e-300)
    return bool(np.all(eig[..., 0] >= -tol * scale))


def eye_like(M):
    n = M.shape[-1]
    return np.broadcast_to(np.eye(n, dtype=M.dtype), M.shape)


def regularized_inverse(M, jitter=DEFAULT_JITTER):
    """Invert ``M + jitter * I`` and hermitianize the result.

    ``jitter=0`` gives the plain inverse, which the oracle tests use to
    compare recursions without a regularization bias.
    """
    M = _check_square(M)
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    n = M.shape[-1]
    # matrices that are already non-finite come back as NaN so the caller
    # can report where they occurred
    bad = ~np.all(np.isfinite(M), axis=(-2, -1))
    if np.any(bad):
        M = np.where(bad[..., None, None], np.eye(n), M)
    A = M + jitter * np.eye(n, dtype=np.result_type(M, np.complex128))
    try:
        inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        cond = np.max(np.linalg.cond(A))
        raise ConditioningError(
            f"matrix singular after jitter {jitter:g} (condition estimate {cond:.3g})"
        ) from exc
    if not np.all(np.isfinite(inv)):
        cond = np.max(np.linalg.cond(A))
        raise ConditioningError(
            f"non-finite inverse after jitter {jitter:g} (condition estimate {cond:.3g})"
        )
    inv = hermitianize(inv)
    if np.any(bad):
        inv = np.where(bad[..., None, None], np.nan, inv)
    return inv


def complex_gaussian_logpdf(x, mean, cov):
    """Log-density of a proper complex Gaussian.

    Evaluates ``-log|pi cov| - (x - mean)^H cov^{-1} (x - mean)`` through a
    Cholesky factorization. Batched over leading dimensions.
    """
    x = np.asarray(x, dtype=complex)
    mean = np.asarray(mean, dtype=complex)
    cov = _check_square(np.asarray(cov, dtype=complex))
    if x.shape[-1] != cov.shape[-1] or mean.shape[-1] != cov.shape[-1]:
        raise ValueError("dimension mismatch between x, mean and cov")
    try:
        chol = np.linalg.cholesky(hermitianize(cov))
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("covariance is not positive definite") from exc
    n = cov.shape[-1]
    diff = (x - mean)[..., None]
    z = np.linalg.solve(chol, diff)[..., 0]
    quad = np.sum(np.abs(z) ** 2, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=-2, axis2=-1))), axis=-1)
    return -n * np.log(np.pi) - logdet - quad


def logdet_hpd(M):
    """Log-determinant of Hermitian positive-definite matrices."""
    sign, logdet = np.linalg.slogdet(M)
    if np.any(sign.real <= 0):
        raise ConditioningError("matrix is not positive definite")
    return logdet


def kron_identity(Q, n):
    """``kron(Q, I_n)`` for a batch of square matrices ``Q``."""
    Q = np.asarray(Q)
    m = Q.shape[-1]
    out = Q[..., :, None, :, None] * np.eye(n)[:, None, :]
    return out.reshape(Q.shape[:-2] + (m * n, m * n))


def unvec(a, rows):
    """Column-wise un-vectorization: ``(..., rows*cols) -> (..., rows, cols)``."""
    a = np.asarray(a)
    cols = a.shape[-1] // rows
    return np.swapaxes(a.reshape(a.shape[:-1] + (cols, rows)), -1, -2)


def vec(A):
    """Column-wise vectorization: ``(..., rows, cols) -> (..., rows*cols)``."""
    A = np.asarray(A)
    return np.swapaxes(A, -1, -2).reshape(A.shape[:-2] + (-1,))


def warn_conditioning(message):
    warnings.warn(message, ConditioningWarning, stacklevel=3)
