"""Bearing-displacement estimation by minorization-maximization.

The concentrated objective is ``f(du) = y^H A^-1 y`` with
``y = H_w(du)^H r_w`` and ``A = H_w(du)^H H_w(du)``.  Because
``H_w(du) = D_tilde_w + du * D_dot_w`` is affine in ``du``, everything the
iteration needs lives in a handful of P x P Gram blocks (:class:`Gram`),
computed once per data set.  The tangent-plane minorant of the jointly
convex map ``(y, A) -> y^H A^-1 y`` is a concave quadratic
``rho * du^2 + zeta * du + const`` whose box-constrained maximizer is a
clamped vertex.

The kernels accept arbitrary leading batch axes; the Monte-Carlo engine
feeds thousands of trials through the same code as single-instance calls.
"""

from dataclasses import dataclass, field

import numpy as np

from .array_model import PointingState, manifold_basis
from .errors import (
    DegenerateAmplitude,
    NotPositiveDefinite,
    RankDeficient,
    SingularSampleCovariance,
)
from .numkernel import gram_inv_sqrt, herm, least_squares_projection

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class MMConfig:
    alpha: float
    epsilon: float = 1e-8
    max_iters: int = 200
    relative_exit: bool = True
    stage2_alpha: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def second_alpha(self):
        return self.alpha if self.stage2_alpha is None else self.stage2_alpha


@dataclass(frozen=True)
class Gram:
    """Gram blocks of the whitened basis and its correlations with ``r_w``.

    ``g00 = Dt^H Dt``, ``g01 = Dt^H Dd``, ``g11 = Dd^H Dd``,
    ``y0 = Dt^H r``, ``y1 = Dd^H r`` (all whitened).
    """

    g00: np.ndarray
    g01: np.ndarray
    g11: np.ndarray
    y0: np.ndarray
    y1: np.ndarray

    @classmethod
    def build(cls, r_w, dt_w, dd_w):
        dth = herm(dt_w)
        ddh = herm(dd_w)
        return cls(dth @ dt_w, dth @ dd_w, ddh @ dd_w,
                   (dth @ r_w[..., None])[..., 0], (ddh @ r_w[..., None])[..., 0])

    @property
    def order(self):
        return self.y0.shape[-1]

    def truncated(self, order):
        s = slice(0, order)
        return Gram(self.g00[..., s, s], self.g01[..., s, s], self.g11[..., s, s],
                    self.y0[..., s], self.y1[..., s])

    def take(self, idx):
        return Gram(self.g00[idx], self.g01[idx], self.g11[idx], self.y0[idx], self.y1[idx])

    def reshaped(self, batch_shape):
        p = self.order
        return Gram(self.g00.reshape(batch_shape + (p, p)),
                    self.g01.reshape(batch_shape + (p, p)),
                    self.g11.reshape(batch_shape + (p, p)),
                    self.y0.reshape(batch_shape + (p,)),
                    self.y1.reshape(batch_shape + (p,)))

    def a_of(self, du):
        d = np.asarray(du)[..., None, None]
        return self.g00 + d * (self.g01 + herm(self.g01)) + d * d * self.g11

    def y_of(self, du):
        return self.y0 + np.asarray(du)[..., None] * self.y1

    def unconstrained_energy(self):
        """``r_w^H P r_w`` for the projector onto ``[D_tilde_w, D_dot_w]``."""
        g = np.concatenate([np.concatenate([self.g00, self.g01], -1),
                            np.concatenate([herm(self.g01), self.g11], -1)], -2)
        z = np.concatenate([self.y0, self.y1], -1)
        x = np.linalg.solve(g, z[..., None])[..., 0]
        return np.real(np.sum(np.conj(z) * x, -1))


@dataclass(frozen=True)
class WhitenedData:
    r_w: np.ndarray = field(repr=False)
    d_tilde_w: np.ndarray = field(repr=False)
    d_dot_w: np.ndarray = field(repr=False)
    s_inv_sqrt: np.ndarray = field(repr=False)
    r_norm_sq: float

    def gram(self):
        return Gram.build(self.r_w, self.d_tilde_w, self.d_dot_w)

    def h_w(self, delta_u):
        return self.d_tilde_w + delta_u * self.d_dot_w


@dataclass(frozen=True)
class DisplacementEstimate:
    delta_u_hat: float
    b_hat: np.ndarray = field(repr=False)
    objective_trace: tuple = field(repr=False)
    iterations: int
    converged: bool

    @property
    def objective(self):
        return self.objective_trace[-1]


def sample_scatter(secondary):
    """``S = sum_k r_k r_k^H`` for ``secondary`` of shape ``(..., K, N)``."""
    return np.swapaxes(secondary, -1, -2) @ np.conj(secondary)


def whitening_matrix(secondary):
    """Hermitian ``S^-1/2`` of the secondary scatter matrix."""
    try:
        return gram_inv_sqrt(np.swapaxes(secondary, -1, -2))
    except NotPositiveDefinite as exc:
        raise SingularSampleCovariance("secondary scatter matrix is singular") from exc


def whiten_with(s_inv_sqrt, primary, basis):
    r_w = s_inv_sqrt @ primary
    return WhitenedData(r_w, s_inv_sqrt @ basis.d_tilde, s_inv_sqrt @ basis.d_dot,
                        s_inv_sqrt, float(np.real(np.vdot(r_w, r_w))))


def whiten(snapshots, basis):
    """Quasi-whiten primary data and basis with the Hermitian ``S^-1/2``."""
    return whiten_with(whitening_matrix(snapshots.secondary), snapshots.primary, basis)


# -- batched kernels --------------------------------------------------------

def _solve(a, y):
    return np.linalg.solve(a, y[..., None])[..., 0]


def _quad(x, m, z=None):
    z = x if z is None else z
    return np.real(np.einsum("...i,...ij,...j->...", np.conj(x), m, z))


def objective_values(gram, du):
    """``f(du)`` and ``x = A^-1 y`` for stacked Gram blocks."""
    y = gram.y_of(du)
    x = _solve(gram.a_of(du), y)
    return np.real(np.sum(np.conj(y) * x, -1)), x


def surrogate_coefficients(gram, x):
    """Quadratic and linear coefficients of the minorant built at ``x = A0^-1 y0``."""
    rho = -_quad(x, gram.g11)
    zeta = (2 * np.real(np.sum(np.conj(x) * gram.y1, -1))
            - _quad(x, gram.g01 + herm(gram.g01)))
    return rho, zeta


def maximize_surrogate(rho, zeta, alpha):
    """Box-constrained maximizer of ``rho du^2 + zeta du`` on ``[-alpha, alpha]``.

    Degenerate ``rho == 0`` falls back to the better endpoint, ``-alpha`` on ties.
    """
    rho = np.asarray(rho, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    concave = rho < 0
    vertex = np.divide(-zeta, 2 * rho, out=np.zeros_like(zeta), where=concave)
    edge = np.where(zeta > 0, alpha, -alpha)
    return np.where(concave, np.clip(vertex, -alpha, alpha), edge)


def mm_solve(gram, alpha, epsilon=1e-8, max_iters=200, relative_exit=True, record=False):
    """Run the MM ascent from ``du = 0`` on every instance of a stacked ``gram``.

    Returns ``(du, f, iterations, converged, trace)``; ``trace`` is a list of
    objective arrays (one per iteration) when ``record`` is set, else None.
    An iterate that would lower the objective (possible only through
    roundoff) is rejected and ends that instance's run.
    """
    batch_shape = gram.y0.shape[:-1]
    b = int(np.prod(batch_shape, dtype=int))
    g = gram.reshaped((b,))
    du = np.zeros(b)
    f, x = objective_values(g, du)
    iters = np.zeros(b, dtype=int)
    conv = np.zeros(b, dtype=bool)
    trace = [f.copy()] if record else None

    idx = np.arange(b)
    g00, g11, y0, y1 = g.g00, g.g11, g.y0, g.y1
    sym = g.g01 + herm(g.g01)
    d_a, f_a, x_a = du.copy(), f.copy(), x
    for h in range(1, max_iters + 1):
        if idx.size == 0:
            break
        rho = -_quad(x_a, g11)
        zeta = 2 * np.real(np.sum(np.conj(x_a) * y1, -1)) - _quad(x_a, sym)
        d_new = maximize_surrogate(rho, zeta, alpha)
        dd = d_new[:, None, None]
        y = y0 + d_new[:, None] * y1
        x_new = _solve(g00 + dd * sym + dd * dd * g11, y)
        f_new = np.real(np.sum(np.conj(y) * x_new, -1))
        up = f_new >= f_a
        tol = epsilon * np.maximum(np.abs(f_new), _TINY) if relative_exit else epsilon
        done = ~up | (np.abs(f_new - f_a) < tol)
        d_a = np.where(up, d_new, d_a)
        f_a = np.where(up, f_new, f_a)
        x_a = np.where(up[:, None], x_new, x_a)
        iters[idx] = h
        if record:
            f[idx] = f_a
            trace.append(f.copy())
        if done.any():
            fin = idx[done]
            du[fin], f[fin], conv[fin] = d_a[done], f_a[done], True
            keep = ~done
            idx = idx[keep]
            g00, g11, y0, y1, sym = g00[keep], g11[keep], y0[keep], y1[keep], sym[keep]
            d_a, f_a, x_a = d_a[keep], f_a[keep], x_a[keep]
    du[idx], f[idx] = d_a, f_a
    if record:
        trace = [t.reshape(batch_shape) for t in trace]
    return (du.reshape(batch_shape), f.reshape(batch_shape), iters.reshape(batch_shape),
            conv.reshape(batch_shape), trace)


def ls_coefficients(gram, du):
    """Least-squares ``b_hat = A^-1 y`` at ``du`` (stacked)."""
    return _solve(gram.a_of(du), gram.y_of(du))


# -- single-instance API ----------------------------------------------------

def _check_rank(a):
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > 1e12:
        raise RankDeficient("H_w(du) is numerically rank deficient")


def objective(w, delta_u):
    """``r_w^H P_H(du) r_w``."""
    f, _ = objective_values(w.gram(), np.asarray(float(delta_u)))
    return float(f)


def objective_derivative(w, delta_u):
    """Analytic ``df/d(du)``."""
    g = w.gram()
    du = float(delta_u)
    y = g.y_of(du)
    x = _solve(g.a_of(du), y)
    da = g.g01 + herm(g.g01) + 2 * du * g.g11
    return float(2 * np.real(np.vdot(x, g.y1)) - _quad(x, da))


def surrogate_value(w, delta_u_prev, delta_u):
    """Tangent-plane minorant of ``f`` built at ``delta_u_prev``, evaluated at ``delta_u``."""
    g = w.gram()
    a0 = g.a_of(delta_u_prev)
    y0 = g.y_of(delta_u_prev)
    x = _solve(a0, y0)
    f0 = np.real(np.vdot(y0, x))
    dy = g.y_of(delta_u) - y0
    da = g.a_of(delta_u) - a0
    return float(f0 + 2 * np.real(np.vdot(x, dy)) - _quad(x, da))


def mm_step(w, delta_u_prev, alpha):
    """One MM update; returns ``(delta_u_next, rho, zeta)``."""
    g = w.gram()
    a0 = g.a_of(delta_u_prev)
    _check_rank(a0)
    x = _solve(a0, g.y_of(delta_u_prev))
    rho, zeta = surrogate_coefficients(g, x)
    return float(maximize_surrogate(rho, zeta, alpha)), float(rho), float(zeta)


def estimate_b(w, delta_u):
    """Least-squares coupling-amplitude vector ``b_hat`` at ``delta_u``."""
    coeffs, _ = least_squares_projection(w.h_w(delta_u), w.r_w)
    return coeffs


def estimate_displacement(w, config):
    g = w.gram()
    _check_rank(g.g00)
    du, _, iters, conv, trace = mm_solve(
        g, config.alpha, config.epsilon, config.max_iters, config.relative_exit, record=True)
    du = float(du)
    return DisplacementEstimate(
        delta_u_hat=du,
        b_hat=estimate_b(w, du),
        objective_trace=tuple(float(t) for t in trace),
        iterations=int(iters),
        converged=bool(conv),
    )


def coupling_from_b(b_hat):
    """Split ``b_hat`` into amplitude ``b_hat[0]`` and coefficients ``b_hat[1:] / b_hat[0]``."""
    b_hat = np.asarray(b_hat, dtype=complex)
    if abs(b_hat[0]) < 1e-10 * np.linalg.norm(b_hat):
        raise DegenerateAmplitude("leading entry of b_hat is numerically zero")
    return complex(b_hat[0]), b_hat[1:] / b_hat[0]


def relinearized_basis(basis, delta_u, order=None):
    """Basis re-expanded around ``u_bar + delta_u`` with the same bound."""
    pointing = PointingState(basis.pointing.u_bar + delta_u, basis.pointing.alpha)
    return manifold_basis(basis.geometry, pointing, order or basis.order)


def two_stage_refine(snapshots, geometry, pointing, order, config):
    """Estimate at ``u_bar``, re-linearize at ``u_bar + du_1``, estimate again.

    Returns ``(first, second, total_delta_u)``; the total is clamped to
    ``[-2 alpha, 2 alpha]``.
    """
    s_inv_sqrt = whitening_matrix(snapshots.secondary)
    basis = manifold_basis(geometry, pointing, order)
    first = estimate_displacement(whiten_with(s_inv_sqrt, snapshots.primary, basis), config)
    basis2 = relinearized_basis(basis, first.delta_u_hat)
    cfg2 = MMConfig(config.second_alpha, config.epsilon, config.max_iters, config.relative_exit)
    second = estimate_displacement(whiten_with(s_inv_sqrt, snapshots.primary, basis2), cfg2)
    total = first.delta_u_hat + second.delta_u_hat
    total = float(np.clip(total, -2 * config.alpha, 2 * config.alpha))
    return first, second, total
