"""Cramer-Rao bounds on the target bearing with unknown coupling amplitudes.

Real parameter vector ``[u, Re b, Im b]``; the mean of the primary snapshot
is ``D(u) b`` and the interference covariance ``M`` is treated as known.
The Fisher matrix is ``F = 2 Re{J^H M^-1 J}`` with Jacobian
``J = [dD/du b, D, jD]`` and the bound on ``u`` is the inverse Schur
complement of the ``b`` block.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .array_model import exact_basis
from .errors import SingularFisherBlock


class CrbModel(str, enum.Enum):
    ACTUAL = "actual"
    LINEARIZED = "linearized"


@dataclass(frozen=True)
class FimPartition:
    f_uu: float
    f_ub: np.ndarray
    f_bb: np.ndarray

    @property
    def full(self):
        top = np.concatenate([[self.f_uu], self.f_ub])
        bottom = np.column_stack([self.f_ub, self.f_bb])
        return np.vstack([top, bottom])

    def schur_bound(self):
        try:
            x = np.linalg.solve(self.f_bb, self.f_ub)
        except np.linalg.LinAlgError as exc:
            raise SingularFisherBlock("amplitude block of the FIM is singular") from exc
        if np.linalg.cond(self.f_bb) > 1e14:
            raise SingularFisherBlock("amplitude block of the FIM is singular")
        schur = self.f_uu - self.f_ub @ x
        if not schur > 0:
            raise SingularFisherBlock("Schur complement is not positive")
        return 1.0 / schur


@dataclass(frozen=True)
class CrbResult:
    crb_value: float
    model: CrbModel

    @property
    def db(self):
        return 10 * np.log10(self.crb_value)


def fisher_partition(m, d, d_dot, b):
    """FIM blocks for mean ``d @ b`` whose ``u``-derivative is ``d_dot @ b``."""
    b = np.asarray(b, dtype=complex)
    jac = np.column_stack([d_dot @ b, d, 1j * d])
    f = 2 * np.real(jac.conj().T @ np.linalg.solve(m, jac))
    f = 0.5 * (f + f.T)
    return FimPartition(float(f[0, 0]), f[0, 1:], f[1:, 1:])


def crb_actual(m, u0, b, geometry, order=None):
    b = np.asarray(b, dtype=complex)
    d, d_dot = exact_basis(geometry, u0, order or b.size)
    return CrbResult(fisher_partition(m, d, d_dot, b).schur_bound(), CrbModel.ACTUAL)


def crb_linearized(m, delta_u, b, basis):
    h = basis.d_tilde + delta_u * basis.d_dot
    fim = fisher_partition(m, h, basis.d_dot, b)
    return CrbResult(fim.schur_bound(), CrbModel.LINEARIZED)
