"""Small dense complex linear-algebra kernel.

All functions accept stacked inputs (leading batch axes) where that is
meaningful, so the Monte-Carlo engine can push whole blocks of trials
through the same code path used for single instances.
"""

import numpy as np

from .errors import NotPositiveDefinite, RankDeficient

_COND_LIMIT = 1e12


def herm(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def _eigh_pd(a):
    a = np.asarray(a, dtype=complex)
    a = 0.5 * (a + herm(a))
    w, v = np.linalg.eigh(a)
    n = a.shape[-1]
    tol = n * np.finfo(float).eps * np.abs(w[..., -1:])
    if np.any(w <= tol):
        raise NotPositiveDefinite("matrix is not positive definite")
    return w, v


def hermitian_inv_sqrt(a):
    """Unique Hermitian positive definite inverse square root of ``a``.

    Raises :class:`NotPositiveDefinite` when the smallest eigenvalue is not
    safely above zero.
    """
    w, v = _eigh_pd(a)
    return (v * (1.0 / np.sqrt(w))[..., None, :]) @ herm(v)


def gram_inv_sqrt(a):
    """Hermitian ``(A A^H)^-1/2`` computed from the SVD of ``a`` itself.

    Avoids forming ``A A^H``, so the accuracy follows the condition number
    of ``a`` rather than its square.  ``a`` has shape ``(..., N, K)`` with
    ``K >= N``.
    """
    a = np.asarray(a, dtype=complex)
    if a.shape[-1] < a.shape[-2]:
        raise NotPositiveDefinite(f"{a.shape[-1]} columns cannot span dimension {a.shape[-2]}")
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    tol = max(a.shape[-2:]) * np.finfo(float).eps * s[..., :1]
    if np.any(s <= tol):
        raise NotPositiveDefinite("rows of the data matrix are linearly dependent")
    return (u * (1.0 / s)[..., None, :]) @ herm(u)


def hermitian_sqrt(a):
    """Hermitian positive definite square root of ``a``."""
    w, v = _eigh_pd(a)
    return (v * np.sqrt(w)[..., None, :]) @ herm(v)


def least_squares_projection(h, r):
    """Least-squares fit of ``r`` on the columns of ``h``.

    Returns ``(coeffs, projection_energy)`` where ``coeffs`` minimizes
    ``||r - h @ coeffs||`` and ``projection_energy = r^H P_h r``.  Solved
    through a reduced QR factorization; rank-deficient ``h`` (condition
    number above 1e12) raises :class:`RankDeficient`.
    """
    h = np.asarray(h, dtype=complex)
    r = np.asarray(r, dtype=complex)
    if h.ndim == 1:
        h = h[:, None]
    s = np.linalg.svd(h, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > _COND_LIMIT:
        raise RankDeficient(f"condition number of {h.shape} matrix exceeds 1e12")
    q, rr = np.linalg.qr(h)
    z = herm(q) @ r
    coeffs = np.linalg.solve(rr, z)
    energy = float(np.real(np.vdot(z, z)))
    return coeffs, energy


def full_column_rank(h):
    """True iff the numerical rank of ``h`` equals its column count."""
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    s = np.linalg.svd(h, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return False
    tol = max(h.shape) * s[0] * 1e-12
    return int(np.sum(s > tol)) == h.shape[1]
