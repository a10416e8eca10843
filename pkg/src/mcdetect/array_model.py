"""Uniform linear array manifold with banded symmetric Toeplitz coupling.

The echo from direction cosine ``u0`` seen through coupling matrix ``C`` is
``a * C @ p(u0)``.  Linearizing ``p`` around the look direction ``u_bar``
and expanding ``C = I + sum_m c_m D_m`` gives the bilinear form::

    a * C @ (p + du * p_dot) = (D_tilde + du * D_dot) @ b

with ``D_tilde[:, m] = D_m @ p``, ``D_dot[:, m] = D_m @ p_dot`` and
``b = a * [1, c_1, ..., c_{P-1}]``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateVector,
    EmptyGrid,
    IdentifiabilityViolation,
    OrderExceedsAperture,
    OutOfVisibleRegion,
)
from .numkernel import full_column_rank

#: 3 dB single-side beamwidth of a broadside half-wavelength ULA times N.
U3DB_TIMES_N = 0.891


@dataclass(frozen=True)
class ArrayGeometry:
    n_elements: int
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if int(self.n_elements) < 2:
            raise ValueError("a ULA needs at least two elements")
        if not self.spacing_over_wavelength > 0:
            raise ValueError("element spacing must be positive")

    @property
    def u3db(self):
        """Default displacement bound ``0.891 / N``."""
        return U3DB_TIMES_N / self.n_elements


@dataclass(frozen=True)
class PointingState:
    u_bar: float
    alpha: float

    def __post_init__(self):
        if abs(self.u_bar) > 1:
            raise OutOfVisibleRegion(f"look direction {self.u_bar} outside [-1, 1]")
        if not self.alpha > 0:
            raise ValueError("displacement bound alpha must be positive")


@dataclass(frozen=True)
class CouplingProfile:
    """Model order ``P`` and coefficients ``c_1 .. c_{P-1}``."""

    coeffs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(complex(c) for c in self.coeffs))

    @property
    def order(self):
        return len(self.coeffs) + 1

    @property
    def b_direction(self):
        """``[1, c_1, ..., c_{P-1}]``, i.e. ``b`` for unit amplitude."""
        return np.array((1.0,) + self.coeffs, dtype=complex)


@dataclass(frozen=True)
class ManifoldBasis:
    d_tilde: np.ndarray = field(repr=False)
    d_dot: np.ndarray = field(repr=False)
    pointing: PointingState
    geometry: ArrayGeometry

    @property
    def order(self):
        return self.d_tilde.shape[1]

    def truncated(self, order):
        """Basis of a lower model order (the first ``order`` columns)."""
        if not 1 <= order <= self.order:
            raise ValueError(f"order {order} not in 1..{self.order}")
        return ManifoldBasis(self.d_tilde[:, :order], self.d_dot[:, :order],
                             self.pointing, self.geometry)

    @property
    def h1(self):
        """The 2P-column matrix ``[D_tilde, D_dot]``."""
        return np.hstack([self.d_tilde, self.d_dot])


def _check_visible(u):
    if np.any(np.abs(u) > 1):
        raise OutOfVisibleRegion(f"direction cosine outside [-1, 1]: {u}")


def _phase_slope(geometry):
    return 2j * np.pi * geometry.spacing_over_wavelength * np.arange(geometry.n_elements)


def steering(geometry, u):
    """Ideal steering vector ``p(u)``; stacked along leading axes for array ``u``."""
    u = np.asarray(u, dtype=float)
    _check_visible(u)
    return np.exp(u[..., None] * _phase_slope(geometry))


def steering_derivative(geometry, u):
    """Derivative of :func:`steering` with respect to ``u``."""
    return _phase_slope(geometry) * steering(geometry, u)


def selection_matrix(m, n):
    """Ones on the ``m``-th upper and lower diagonals (identity for m = 0)."""
    if not 0 <= m:
        raise ValueError("diagonal index must be nonnegative")
    if m >= n:
        raise OrderExceedsAperture(f"diagonal {m} does not exist in a {n}x{n} matrix")
    if m == 0:
        return np.eye(n)
    return np.eye(n, k=m) + np.eye(n, k=-m)


def selection_stack(order, n):
    """``(order, n, n)`` stack of selection matrices ``D_0 .. D_{order-1}``."""
    return np.stack([selection_matrix(m, n) for m in range(order)])


def coupling_matrix(profile, n):
    """Banded symmetric (not Hermitian) Toeplitz coupling matrix."""
    if profile.order > n:
        raise OrderExceedsAperture(f"coupling order {profile.order} exceeds {n} elements")
    c = np.eye(n, dtype=complex)
    for m, cm in enumerate(profile.coeffs, start=1):
        c += cm * selection_matrix(m, n)
    return c


def coupled_steering(geometry, profile, u):
    """Actual steering vector ``C @ p(u)``."""
    return steering(geometry, u) @ coupling_matrix(profile, geometry.n_elements).T


def _columns(vectors, order, n):
    # vectors: (..., n) -> (..., n, order) with column m equal to D_m @ v
    return np.einsum("mij,...j->...im", selection_stack(order, n), vectors)


def manifold_basis(geometry, pointing, order):
    """Linearized-manifold basis ``(D_tilde, D_dot)`` at ``pointing.u_bar``."""
    if order < 1:
        raise ValueError("model order must be at least 1")
    if order > geometry.n_elements / 2:
        raise IdentifiabilityViolation(
            f"order {order} exceeds N/2 = {geometry.n_elements / 2}")
    n = geometry.n_elements
    dt = _columns(steering(geometry, pointing.u_bar), order, n)
    dd = _columns(steering_derivative(geometry, pointing.u_bar), order, n)
    return ManifoldBasis(dt, dd, pointing, geometry)


def exact_basis(geometry, u, order):
    """Columns ``D_m @ p(u)`` and ``D_m @ p_dot(u)`` of the unlinearized model.

    Accepts stacked ``u``; returns arrays of shape ``(..., N, order)``.
    """
    n = geometry.n_elements
    if order > n:
        raise OrderExceedsAperture(f"order {order} exceeds {n} elements")
    return (_columns(steering(geometry, u), order, n),
            _columns(steering_derivative(geometry, u), order, n))


def h_of_delta(basis, delta_u):
    return basis.d_tilde + delta_u * basis.d_dot


def cosine_similarity(v1, v2):
    v1 = np.asarray(v1, dtype=complex)
    v2 = np.asarray(v2, dtype=complex)
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 == 0 or n2 == 0:
        raise DegenerateVector("cosine similarity of a zero vector")
    return float(min(abs(np.vdot(v1, v2)) / (n1 * n2), 1.0))


def mismatch_curve(geometry, profile, u):
    """Similarity between ideal and coupled steering at the same ``u`` (array)."""
    p = steering(geometry, u)
    pm = coupled_steering(geometry, profile, u)
    num = np.abs(np.sum(np.conj(pm) * p, axis=-1))
    return num / (np.linalg.norm(pm, axis=-1) * np.linalg.norm(p, axis=-1))


def neighborhood_grid(geometry, u0, step_deg=0.01, half_width=None):
    """Angle grid (degrees) anchored at ``asin(u0)`` spanning ``u0 +/- half_width``.

    ``half_width`` defaults to the 3 dB single-side beamwidth ``0.891 / N``.
    """
    if half_width is None:
        half_width = geometry.u3db
    theta0 = np.degrees(np.arcsin(u0))
    lo = np.degrees(np.arcsin(max(u0 - half_width, -1.0)))
    hi = np.degrees(np.arcsin(min(u0 + half_width, 1.0)))
    k_lo = int(np.ceil((lo - theta0) / step_deg))
    k_hi = int(np.floor((hi - theta0) / step_deg))
    return theta0 + step_deg * np.arange(k_lo, k_hi + 1)


def beam_similarity(geometry, profile, u0, theta_grid):
    """Normalized ``|p_m(u0)^H p(u)|`` for every angle of ``theta_grid`` (degrees)."""
    theta_grid = np.asarray(theta_grid, dtype=float)
    if theta_grid.size == 0:
        raise EmptyGrid("scan grid is empty")
    pm = coupled_steering(geometry, profile, u0)
    p = steering(geometry, np.sin(np.radians(theta_grid)))
    return np.abs(p @ np.conj(pm)) / (np.linalg.norm(pm) * np.sqrt(geometry.n_elements))


def peak_mismatch_scan(geometry, profile, u0, theta_grid):
    """Peak of ``|p_m(u0)^H p(u)|`` over ``theta_grid`` (degrees).

    Returns ``(peak_theta, displacement)`` with the displacement measured
    from ``asin(u0)`` in degrees.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    sim = beam_similarity(geometry, profile, u0, theta_grid)
    peak = float(theta_grid[int(np.argmax(sim))])
    return peak, peak - float(np.degrees(np.arcsin(u0)))


def check_identifiability(basis):
    """Sufficient condition: ``P <= N/2`` and ``[D_tilde, D_dot]`` full column rank."""
    if basis.order > basis.geometry.n_elements / 2:
        return False
    return full_column_rank(basis.h1)
