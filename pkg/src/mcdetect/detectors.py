"""Decision statistics.

Single-instance functions (:func:`glrt_lam`, :func:`mflrt`,
:func:`benchmark_statistic`, ...) follow the closed forms directly, using
the sample scatter matrix ``S = sum_k r_k r_k^H``.  :class:`BatchEvaluator`
computes the same statistics for stacks of trials from Gram blocks and is
what the Monte-Carlo engine uses; the two routes are cross-checked in the
test suite.
"""

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .array_model import (
    PointingState,
    coupled_steering,
    exact_basis,
    manifold_basis,
    steering,
)
from .errors import IncompleteSpecification
from .estimator import (
    Gram,
    MMConfig,
    estimate_displacement,
    ls_coefficients,
    mm_solve,
    objective,
    whiten_with,
    whitening_matrix,
)
from .numkernel import least_squares_projection


class Variant(str, enum.Enum):
    GLRT_LAM = "GLRT_LAM"
    GLRT_LAM_2S = "GLRT_LAM_2S"
    MFLRT = "MFLRT"
    MFLRT_2S = "MFLRT_2S"
    BEN_GLRT = "BEN_GLRT"
    BEN_GLRT_NC = "BEN_GLRT_NC"
    BEN_GLRT_DOA = "BEN_GLRT_DOA"
    CLASSIC_GLRT = "CLASSIC_GLRT"
    SUBSPACE_SD = "SUBSPACE_SD"


_ORDERED = {Variant.GLRT_LAM, Variant.GLRT_LAM_2S, Variant.BEN_GLRT_DOA}
_MULTIFAMILY = {Variant.MFLRT, Variant.MFLRT_2S}
_NEEDS_U0 = {Variant.BEN_GLRT, Variant.BEN_GLRT_NC, Variant.BEN_GLRT_DOA}
ESTIMATING = {Variant.GLRT_LAM, Variant.GLRT_LAM_2S, Variant.MFLRT, Variant.MFLRT_2S}


@dataclass(frozen=True)
class DetectorKind:
    """Detector variant plus its parameters.

    ``order`` is the model order P (GLRT-LAM variants, ben-GLRT-DOA);
    ``n_bar`` the maximum order of the MFLRT variants.  ``log_form`` switches
    the MFLRT input to ``2(K+1) ln(ratio)``; ``verbatim`` makes ben-GLRT-DOA
    normalize by the unwhitened ``1 + ||r||^2``.
    """

    variant: Variant
    order: int | None = None
    n_bar: int | None = None
    log_form: bool = False
    verbatim: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant in _ORDERED and not self.order:
            raise IncompleteSpecification(f"{self.variant.value} needs a model order")
        if self.variant in _MULTIFAMILY and not self.n_bar:
            raise IncompleteSpecification(f"{self.variant.value} needs n_bar")

    @property
    def label(self):
        v = self.variant.value
        if self.variant in _MULTIFAMILY:
            v = f"{v}_{self.n_bar}"
        if self.log_form:
            v += "_LOG"
        if self.verbatim:
            v += "_VERBATIM"
        return v

    @property
    def estimates_bearing(self):
        return self.variant in ESTIMATING

    @property
    def two_stage(self):
        return self.variant in (Variant.GLRT_LAM_2S, Variant.MFLRT_2S)


@dataclass(frozen=True)
class DetectionReport:
    statistic: float
    delta_u_hat: float | None = None
    b_hat: np.ndarray | None = field(default=None, repr=False)
    selected_order: int | None = None
    decided_h1: bool | None = None
    per_order_lg: tuple | None = None
    stage1: "DetectionReport | None" = field(default=None, repr=False)

    def decide(self, threshold):
        return replace(self, decided_h1=bool(self.statistic > threshold))


def glrt_ratio(r_norm_sq, energy):
    return (1.0 + r_norm_sq) / (1.0 + r_norm_sq - energy)


def g_transform(i, x):
    """Multifamily penalty ``[x - k (ln(x/k) + 1)] * step(x/k - 1)`` with ``k = 2i + 1``."""
    k = 2 * i + 1
    x = np.asarray(x, dtype=float)
    ratio = np.maximum(x / k, np.finfo(float).tiny)
    val = np.where(ratio >= 1, x - k * (np.log(ratio) + 1), 0.0)
    val = np.maximum(val, 0.0)
    return float(val) if val.ndim == 0 else val


def lg_value(ratio, k_secondary, log_form=False):
    """GLRT statistic on the multifamily input scale."""
    ratio = np.asarray(ratio, dtype=float)
    out = 2 * (k_secondary + 1) * (np.log(ratio) if log_form else ratio)
    return float(out) if out.ndim == 0 else out


def glrt_lam(snapshots, basis, config):
    w = whiten_with(whitening_matrix(snapshots.secondary), snapshots.primary, basis)
    return _glrt_from_whitened(w, config)


def _glrt_from_whitened(w, config):
    est = estimate_displacement(w, config)
    _, energy = least_squares_projection(w.h_w(est.delta_u_hat), w.r_w)
    return DetectionReport(glrt_ratio(w.r_norm_sq, energy), est.delta_u_hat, est.b_hat)


def tau_p_bound(snapshots, basis):
    """Ratio statistic with the unconstrained 2P-column projector."""
    w = whiten_with(whitening_matrix(snapshots.secondary), snapshots.primary, basis)
    _, energy = least_squares_projection(np.hstack([w.d_tilde_w, w.d_dot_w]), w.r_w)
    return glrt_ratio(w.r_norm_sq, energy)


def mflrt(snapshots, geometry, pointing, n_bar, config, log_form=False):
    s_inv_sqrt = whitening_matrix(snapshots.secondary)
    return _mflrt_with(s_inv_sqrt, snapshots.primary, snapshots.k,
                       manifold_basis(geometry, pointing, n_bar), config, log_form)


def _mflrt_with(s_inv_sqrt, primary, k, basis, config, log_form):
    reports, lgs, scores = [], [], []
    for i in range(1, basis.order + 1):
        rep = _glrt_from_whitened(whiten_with(s_inv_sqrt, primary, basis.truncated(i)), config)
        lg = lg_value(rep.statistic, k, log_form)
        reports.append(rep)
        lgs.append(lg)
        scores.append(g_transform(i, lg))
    best = int(np.argmax(scores))
    sel = reports[best]
    return DetectionReport(float(scores[best]), sel.delta_u_hat, sel.b_hat,
                           selected_order=best + 1, per_order_lg=tuple(lgs))


def mflrt_bound(snapshots, geometry, pointing, n_bar, log_form=False):
    """``g_1(l(tau_P))`` at order ``n_bar``: an upper bound on the MFLRT statistic."""
    tau = tau_p_bound(snapshots, manifold_basis(geometry, pointing, n_bar))
    return g_transform(1, lg_value(tau, snapshots.k, log_form))


def _kelly(r_w, r_norm_sq, v_w):
    return abs(np.vdot(v_w, r_w)) ** 2 / ((1.0 + r_norm_sq) * np.real(np.vdot(v_w, v_w)))


def benchmark_statistic(kind, snapshots, geometry, pointing, u0=None, coupling=None):
    """Comparison detectors with (partially) known target parameters."""
    kind = kind if isinstance(kind, DetectorKind) else DetectorKind(kind)
    v = kind.variant
    if v in _NEEDS_U0 and u0 is None:
        raise IncompleteSpecification(f"{v.value} needs the true direction u0")
    if v is Variant.BEN_GLRT and coupling is None:
        raise IncompleteSpecification("BEN_GLRT needs the true coupling profile")
    s_inv_sqrt = whitening_matrix(snapshots.secondary)
    r_w = s_inv_sqrt @ snapshots.primary
    rn = float(np.real(np.vdot(r_w, r_w)))
    if v is Variant.BEN_GLRT:
        stat = _kelly(r_w, rn, s_inv_sqrt @ coupled_steering(geometry, coupling, u0))
    elif v is Variant.BEN_GLRT_NC:
        stat = _kelly(r_w, rn, s_inv_sqrt @ steering(geometry, u0))
    elif v is Variant.CLASSIC_GLRT:
        stat = _kelly(r_w, rn, s_inv_sqrt @ steering(geometry, pointing.u_bar))
    elif v is Variant.SUBSPACE_SD:
        basis = manifold_basis(geometry, pointing, 1)
        _, energy = least_squares_projection(s_inv_sqrt @ basis.h1, r_w)
        stat = energy / (1.0 + rn)
    elif v is Variant.BEN_GLRT_DOA:
        d_bar, _ = exact_basis(geometry, u0, kind.order)
        _, energy = least_squares_projection(s_inv_sqrt @ d_bar, r_w)
        denom = 1.0 + (np.real(np.vdot(snapshots.primary, snapshots.primary))
                       if kind.verbatim else rn)
        stat = energy / denom
    else:
        raise IncompleteSpecification(f"{v.value} is not a benchmark detector")
    return DetectionReport(float(stat))


def two_stage_detect(kind, snapshots, geometry, pointing, config):
    """Stage 1 at ``u_bar``; stage 2 re-linearized at ``u_bar + du_1``.

    The returned report carries the stage-2 statistic and the total
    displacement ``du_1 + du_2`` (clamped to ``+/- 2 alpha``); ``stage1``
    holds the first-pass report.
    """
    s_inv_sqrt = whitening_matrix(snapshots.secondary)
    r = snapshots.primary
    cfg2 = MMConfig(config.second_alpha, config.epsilon, config.max_iters, config.relative_exit)
    if kind.variant is Variant.GLRT_LAM_2S:
        basis = manifold_basis(geometry, pointing, kind.order)
        first = _glrt_from_whitened(whiten_with(s_inv_sqrt, r, basis), config)
        p2 = PointingState(pointing.u_bar + first.delta_u_hat, pointing.alpha)
        second = _glrt_from_whitened(
            whiten_with(s_inv_sqrt, r, manifold_basis(geometry, p2, kind.order)), cfg2)
    elif kind.variant is Variant.MFLRT_2S:
        basis = manifold_basis(geometry, pointing, kind.n_bar)
        first = _mflrt_with(s_inv_sqrt, r, snapshots.k, basis, config, kind.log_form)
        # re-expansion point uses the du of the order selected in stage 1
        p2 = PointingState(pointing.u_bar + first.delta_u_hat, pointing.alpha)
        second = _mflrt_with(s_inv_sqrt, r, snapshots.k,
                             manifold_basis(geometry, p2, kind.n_bar), cfg2, kind.log_form)
    else:
        raise IncompleteSpecification(f"{kind.variant.value} is not a two-stage detector")
    total = float(np.clip(first.delta_u_hat + second.delta_u_hat,
                          -2 * config.alpha, 2 * config.alpha))
    return replace(second, delta_u_hat=total, stage1=first)


def evaluate(kind, snapshots, geometry, pointing, config, u0=None, coupling=None):
    """Dispatch any detector kind on one snapshot set."""
    v = kind.variant
    if v is Variant.GLRT_LAM:
        return glrt_lam(snapshots, manifold_basis(geometry, pointing, kind.order), config)
    if v is Variant.MFLRT:
        return mflrt(snapshots, geometry, pointing, kind.n_bar, config, kind.log_form)
    if kind.two_stage:
        return two_stage_detect(kind, snapshots, geometry, pointing, config)
    return benchmark_statistic(kind, snapshots, geometry, pointing, u0, coupling)


# -- batched evaluation -------------------------------------------------------

@dataclass
class BatchResult:
    statistic: np.ndarray
    delta_u: np.ndarray | None = None
    b_hat: np.ndarray | None = None  # (B, order); MFLRT padded with zeros
    order: np.ndarray | None = None


class BatchEvaluator:
    """Evaluate several detectors on stacks of trials sharing one geometry.

    Call :meth:`prepare` once per block of secondary data, then
    :meth:`evaluate` for every primary-data variant (e.g. each SINR) of the
    same block.
    """

    def __init__(self, kinds, geometry, pointing, config, k_secondary, u0=None, coupling=None):
        self.kinds = list(kinds)
        self.geometry = geometry
        self.pointing = pointing
        self.config = config
        self.k = k_secondary
        self.u0 = u0
        self.coupling = coupling
        orders = [1]
        u0_orders = [1]
        for kind in self.kinds:
            if kind.variant in _NEEDS_U0 and u0 is None:
                raise IncompleteSpecification(f"{kind.variant.value} needs the true direction u0")
            if kind.variant is Variant.BEN_GLRT and coupling is None:
                raise IncompleteSpecification("BEN_GLRT needs the true coupling profile")
            if kind.variant in (Variant.GLRT_LAM, Variant.GLRT_LAM_2S):
                orders.append(kind.order)
            elif kind.variant in _MULTIFAMILY:
                orders.append(kind.n_bar)
            elif kind.variant is Variant.BEN_GLRT_DOA:
                u0_orders.append(kind.order)
        self.basis = manifold_basis(geometry, pointing, max(orders))
        self.cfg2 = MMConfig(config.second_alpha, config.epsilon, config.max_iters,
                             config.relative_exit)
        if u0 is not None:
            order_u0 = max(u0_orders)
            self.d_bar = exact_basis(geometry, u0, order_u0)[0]
            self.p_u0 = steering(geometry, u0)
            self.pm_u0 = (coupled_steering(geometry, coupling, u0)
                          if coupling is not None else None)

    def prepare(self, s_inv_sqrt):
        prep = {"w": s_inv_sqrt,
                "dt": s_inv_sqrt @ self.basis.d_tilde,
                "dd": s_inv_sqrt @ self.basis.d_dot}
        if self.u0 is not None:
            prep["d_bar"] = s_inv_sqrt @ self.d_bar
            prep["p_u0"] = s_inv_sqrt @ self.p_u0
            if self.pm_u0 is not None:
                prep["pm_u0"] = s_inv_sqrt @ self.pm_u0
        return prep

    def _mm(self, gram, alpha):
        c = self.config
        du, f, _, _, _ = mm_solve(gram, alpha, c.epsilon, c.max_iters, c.relative_exit)
        return du, f

    def _glrt_block(self, gram, rn, alpha):
        du, f = self._mm(gram, alpha)
        return glrt_ratio(rn, f), du, ls_coefficients(gram, du)

    def _mflrt_block(self, gram, rn, n_bar, log_form, alpha, cache=None):
        stats, dus, bs = [], [], []
        for i in range(1, n_bar + 1):
            if cache is not None and i in cache:
                tau, du, b = cache[i]
            else:
                tau, du, b = self._glrt_block(gram.truncated(i), rn, alpha)
                if cache is not None:
                    cache[i] = (tau, du, b)
            stats.append(g_transform(i, lg_value(tau, self.k, log_form)))
            dus.append(du)
            pad = np.zeros(b.shape[:-1] + (n_bar,), dtype=complex)
            pad[..., :i] = b
            bs.append(pad)
        stats = np.stack(stats, -1)
        sel = np.argmax(stats, -1)
        rows = np.arange(stats.shape[0])
        return (stats[rows, sel], np.stack(dus, -1)[rows, sel],
                np.stack(bs, 1)[rows, sel], sel + 1)

    def _second_stage_gram(self, prep, r_w, du1, order):
        u = self.pointing.u_bar + du1
        dt, dd = exact_basis(self.geometry, u, order)
        w = prep["w"]
        return Gram.build(r_w, w @ dt, w @ dd)

    def _clip_total(self, du):
        a = self.config.alpha
        return np.clip(du, -2 * a, 2 * a)

    def evaluate(self, prep, primary):
        """Statistics for stacked ``primary`` (B, N); returns ``{label: BatchResult}``."""
        w = prep["w"]
        r_w = (w @ primary[..., None])[..., 0]
        rn = np.real(np.sum(np.conj(r_w) * r_w, -1))
        gram = Gram.build(r_w, prep["dt"], prep["dd"])
        alpha = self.config.alpha
        cache = {}
        out = {}

        def kelly(v_w):
            num = np.abs(np.sum(np.conj(v_w) * r_w, -1)) ** 2
            return num / ((1 + rn) * np.real(np.sum(np.conj(v_w) * v_w, -1)))

        for kind in self.kinds:
            v = kind.variant
            if v in (Variant.GLRT_LAM, Variant.GLRT_LAM_2S):
                p = kind.order
                if p not in cache:
                    cache[p] = self._glrt_block(gram.truncated(p), rn, alpha)
                tau, du, b = cache[p]
                if v is Variant.GLRT_LAM:
                    out[kind.label] = BatchResult(tau, du, b)
                else:
                    g2 = self._second_stage_gram(prep, r_w, du, p)
                    tau2, du2, b2 = self._glrt_block(g2, rn, self.config.second_alpha)
                    out[kind.label] = BatchResult(tau2, self._clip_total(du + du2), b2)
            elif v in _MULTIFAMILY:
                stat, du, b, sel = self._mflrt_block(gram, rn, kind.n_bar, kind.log_form,
                                                     alpha, cache)
                if v is Variant.MFLRT_2S:
                    g2 = self._second_stage_gram(prep, r_w, du, kind.n_bar)
                    stat, du2, b, sel = self._mflrt_block(g2, rn, kind.n_bar, kind.log_form,
                                                          self.config.second_alpha)
                    du = self._clip_total(du + du2)
                out[kind.label] = BatchResult(stat, du, b, sel)
            elif v is Variant.CLASSIC_GLRT:
                out[kind.label] = BatchResult(kelly(prep["dt"][..., 0]))
            elif v is Variant.SUBSPACE_SD:
                out[kind.label] = BatchResult(gram.truncated(1).unconstrained_energy() / (1 + rn))
            elif v is Variant.BEN_GLRT:
                out[kind.label] = BatchResult(kelly(prep["pm_u0"]))
            elif v is Variant.BEN_GLRT_NC:
                out[kind.label] = BatchResult(kelly(prep["p_u0"]))
            elif v is Variant.BEN_GLRT_DOA:
                d = prep["d_bar"][..., : kind.order]
                g = Gram.build(r_w, d, d)
                energy = np.real(np.sum(np.conj(g.y0) * np.linalg.solve(
                    g.g00, g.y0[..., None])[..., 0], -1))
                if kind.verbatim:
                    denom = 1 + np.real(np.sum(np.conj(primary) * primary, -1))
                else:
                    denom = 1 + rn
                out[kind.label] = BatchResult(energy / denom)
        return out
