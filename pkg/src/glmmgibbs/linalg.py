"""Dense linear-algebra kernels.

Every rank decision in the package goes through :func:`default_tol`, so the
cut-off between "zero" and "nonzero" singular values is decided in one place.
Matrices are plain 2-D ``numpy`` arrays.
"""

import numpy as np


class LinalgError(ValueError):
    pass


class InvalidMatrix(LinalgError):
    pass


class NotPsd(LinalgError):
    pass


class NotPd(LinalgError):
    pass


class DimError(LinalgError):
    pass


def _as_matrix(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidMatrix(f"expected a 2-D array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix has non-finite entries")
    return a


def _as_symmetric(a):
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimError(f"expected a square matrix, got {a.shape}")
    # stored once, mirrored on read
    return np.triu(a) + np.triu(a, 1).T


def default_tol(shape, d_max):
    """Rank tolerance ``max(rows, cols) * eps * d_max``."""
    return max(shape) * np.finfo(float).eps * d_max


def svd(a, full_matrices=True):
    """Singular value decomposition ``a = u @ diag(s) @ vt``.

    With ``full_matrices=True`` (the default) ``u`` and ``vt`` are square.
    Singular values come back sorted descending.
    """
    a = _as_matrix(a)
    if a.size == 0:
        m, n = a.shape
        return np.eye(m), np.zeros(0), np.eye(n)
    return np.linalg.svd(a, full_matrices=full_matrices)


def numeric_rank(a, tol=None):
    a = _as_matrix(a)
    if a.size == 0:
        return 0
    s = svd(a, full_matrices=False)[1]
    if tol is None:
        tol = default_tol(a.shape, s[0] if s.size else 0.0)
    return int(np.sum(s > tol))


def pseudo_inverse(a, tol=None):
    """Moore-Penrose inverse through the SVD, zeroing singular values <= tol."""
    a = _as_matrix(a)
    m, n = a.shape
    if a.size == 0:
        return np.zeros((n, m))
    u, s, vt = svd(a, full_matrices=False)
    if tol is None:
        tol = default_tol(a.shape, s[0])
    keep = s > tol
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def _sym_eig(a, tol):
    """Eigen-decomposition of a symmetric PSD matrix, with the PSD check."""
    w, v = np.linalg.eigh(a)
    scale = max(abs(w[0]), abs(w[-1])) if w.size else 0.0
    if tol is None:
        tol = default_tol(a.shape, scale)
    if w.size and w[0] < -max(tol, 1e-12 * scale):
        raise NotPsd(f"smallest eigenvalue {w[0]:.3e} is negative")
    return w, v, tol


def projection_onto_colspace(a, tol=None):
    """Orthogonal projection onto the column space of a symmetric PSD matrix."""
    a = _as_symmetric(a)
    w, v, tol = _sym_eig(a, tol)
    basis = v[:, w > tol]
    return basis @ basis.T


def pinv_and_projection(a, tol=None):
    """``(a⁺, P_a)`` for a symmetric PSD matrix from one eigen-decomposition."""
    a = _as_symmetric(a)
    w, v, tol = _sym_eig(a, tol)
    keep = w > tol
    basis = v[:, keep]
    return (basis / w[keep]) @ basis.T, basis @ basis.T


def min_eig(a):
    a = _as_symmetric(a)
    return float(np.linalg.eigvalsh(a)[0])


def loewner_leq(a, b, slack=0.0):
    """True iff ``b - a`` has no eigenvalue below ``-slack``."""
    a = _as_matrix(a)
    b = _as_matrix(b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise DimError(f"shape mismatch {a.shape} vs {b.shape}")
    return min_eig(b - a) >= -slack


def sym_sqrt(a):
    """Symmetric PSD square root."""
    a = _as_symmetric(a)
    w, v, _ = _sym_eig(a, None)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def sym_inv_sqrt(a):
    a = _as_symmetric(a)
    w, v = np.linalg.eigh(a)
    if w[0] <= 0:
        raise NotPd("matrix is not positive definite")
    return (v / np.sqrt(w)) @ v.T


def chol_lower(a):
    a = _as_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPd(str(exc)) from None
