"""Quick invariant suite behind the ``selftest`` subcommand.

Each check is small (a handful of seeded draws) and returns
``(name, ok, detail)``; the whole suite runs in a few seconds.
"""

import numpy as np

from .array_model import (
    ArrayGeometry,
    CouplingProfile,
    PointingState,
    coupled_steering,
    coupling_matrix,
    manifold_basis,
    neighborhood_grid,
    peak_mismatch_scan,
    steering,
    steering_derivative,
)
from .crb import crb_actual, crb_linearized
from .detectors import BatchEvaluator, DetectorKind, Variant, evaluate, mflrt, mflrt_bound
from .detectors import glrt_lam, tau_p_bound
from .estimator import MMConfig, mm_solve, objective_values, whiten, whitening_matrix
from .scenario import (
    amplitude_for_sinr,
    build_covariance,
    derive_seed,
    draw_snapshots,
    paper_environment,
)

ALL_KINDS = (
    DetectorKind(Variant.GLRT_LAM, order=3),
    DetectorKind(Variant.GLRT_LAM_2S, order=3),
    DetectorKind(Variant.MFLRT, n_bar=4),
    DetectorKind(Variant.MFLRT_2S, n_bar=4),
    DetectorKind(Variant.BEN_GLRT),
    DetectorKind(Variant.BEN_GLRT_NC),
    DetectorKind(Variant.BEN_GLRT_DOA, order=3),
    DetectorKind(Variant.CLASSIC_GLRT),
    DetectorKind(Variant.SUBSPACE_SD),
)


class _Scene:
    def __init__(self, k=48):
        self.env = paper_environment(k)
        self.g = self.env.geometry
        self.pointing = PointingState(np.sin(np.radians(35.0)), self.g.u3db)
        self.cfg = MMConfig(self.pointing.alpha)
        self.u0 = self.pointing.u_bar + 0.0349
        self.m = build_covariance(self.env)
        self.pm = coupled_steering(self.g, self.env.coupling, self.u0)

    def draw(self, seed, sinr_db=None):
        signal = None
        if sinr_db is not None:
            signal = amplitude_for_sinr(sinr_db, self.m, self.pm) * self.pm
        return draw_snapshots(self.m, signal, self.env.k_secondary, seed)


def check_steering():
    g = ArrayGeometry(16)
    u = np.linspace(-0.9, 0.9, 7)
    p = steering(g, u)
    h = 1e-6
    fd = (steering(g, u + h) - steering(g, u - h)) / (2 * h)
    err = np.max(np.abs(fd - steering_derivative(g, u)))
    norm_err = np.max(np.abs(np.linalg.norm(p, axis=-1) - 4.0))
    return "steering", bool(err < 1e-6 and norm_err < 1e-12), f"fd err {err:.2e}"


def check_coupling():
    c = coupling_matrix(CouplingProfile((0.7, 0.4)), 8)
    toeplitz = all(np.allclose(np.diag(c, k), np.diag(c, k)[0]) for k in range(-7, 8))
    banded = np.all(c[np.abs(np.subtract.outer(range(8), range(8))) > 2] == 0)
    ok = toeplitz and banded and np.allclose(c, c.T)
    return "coupling", bool(ok), "symmetric banded Toeplitz"


def check_whitening(scene):
    snap = scene.draw(derive_seed(7, 0, 0))
    w = whitening_matrix(snap.secondary)
    s = snap.secondary.T @ snap.secondary.conj()
    err = np.max(np.abs(w @ s @ w - np.eye(scene.g.n_elements)))
    return "whitening", bool(err < 1e-10), f"max |W S W - I| {err:.2e}"


def check_mm(scene, n=5):
    worst, mono = 0.0, True
    basis = manifold_basis(scene.g, scene.pointing, 3)
    grid = np.linspace(-scene.pointing.alpha, scene.pointing.alpha, 20001)
    for t in range(n):
        w = whiten(scene.draw(derive_seed(7, 1, t), 20.0), basis)
        gram = w.gram()
        du, f, _, _, trace = mm_solve(gram, scene.pointing.alpha, record=True)
        tr = np.array([float(x) for x in trace])
        mono &= bool(np.all(np.diff(tr) >= -1e-12 * np.abs(tr[1:])))
        fg, _ = objective_values(gram.reshaped((1,)).take(np.zeros(grid.size, dtype=int)), grid)
        worst = max(worst, float((fg.max() - f) / fg.max()))
    return "mm_optimality", bool(mono and worst < 1e-6), f"worst relative gap {worst:.2e}"


def check_bounds(scene, n=50):
    basis = manifold_basis(scene.g, scene.pointing, 3)
    bad = 0
    for t in range(n):
        snap = scene.draw(derive_seed(7, 2, t))
        bad += glrt_lam(snap, basis, scene.cfg).statistic > tau_p_bound(snap, basis) * (1 + 1e-12)
        bad += (mflrt(snap, scene.g, scene.pointing, 4, scene.cfg).statistic
                > mflrt_bound(snap, scene.g, scene.pointing, 4) * (1 + 1e-12) + 1e-12)
    return "bounded_cfar", bad == 0, f"{bad} violations in {2 * n} tests"


def check_scale_invariance(scene, n=3):
    rng = np.random.default_rng(derive_seed(7, 3))
    worst = 0.0
    for t in range(n):
        snap = scene.draw(derive_seed(7, 4, t), 10.0)
        s = complex(*rng.normal(size=2)) * 10 ** rng.uniform(-3, 3)
        for kind in ALL_KINDS:
            a = evaluate(kind, snap, scene.g, scene.pointing, scene.cfg, scene.u0,
                         scene.env.coupling).statistic
            b = evaluate(kind, snap.scaled(s), scene.g, scene.pointing, scene.cfg, scene.u0,
                         scene.env.coupling).statistic
            worst = max(worst, abs(a - b) / max(abs(a), 1e-300))
    return "scale_invariance", bool(worst < 1e-9), f"worst relative change {worst:.2e}"


def check_batch_agreement(scene):
    snap = scene.draw(derive_seed(7, 5, 0), 15.0)
    ev = BatchEvaluator(ALL_KINDS, scene.g, scene.pointing, scene.cfg,
                        scene.env.k_secondary, scene.u0, scene.env.coupling)
    res = ev.evaluate(ev.prepare(whitening_matrix(snap.secondary[None])), snap.primary[None])
    worst = 0.0
    for kind in ALL_KINDS:
        a = evaluate(kind, snap, scene.g, scene.pointing, scene.cfg, scene.u0,
                     scene.env.coupling).statistic
        worst = max(worst, abs(a - res[kind.label].statistic[0]) / max(abs(a), 1e-300))
    return "batch_agreement", bool(worst < 1e-8), f"worst relative difference {worst:.2e}"


def check_crb(scene):
    b = amplitude_for_sinr(20.0, scene.m, scene.pm) * scene.env.coupling.b_direction
    basis = manifold_basis(scene.g, scene.pointing, 3)
    lin = crb_linearized(scene.m, 0.0, b, basis).crb_value
    act = crb_actual(scene.m, scene.pointing.u_bar, b, scene.g, 3).crb_value
    rel = abs(lin - act) / act
    return "crb_coincidence", bool(rel < 1e-10), f"relative difference {rel:.2e}"


def check_fig3():
    g = ArrayGeometry(16)
    u0 = np.sin(np.radians(35.0))
    _, disp = peak_mismatch_scan(g, CouplingProfile((0.7, 0.4)), u0, neighborhood_grid(g, u0))
    return "peak_displacement", bool(abs(disp + 1.38) <= 0.05), f"{disp:.3f} deg"


def run_selftest():
    scene = _Scene()
    checks = [check_steering, check_coupling, check_fig3,
              lambda: check_whitening(scene), lambda: check_mm(scene),
              lambda: check_bounds(scene), lambda: check_scale_invariance(scene),
              lambda: check_batch_agreement(scene), lambda: check_crb(scene)]
    results = []
    for chk in checks:
        try:
            results.append(chk())
        except Exception as exc:  # a crashing check is a failing check
            results.append((getattr(chk, "__name__", "check"), False, repr(exc)))
    return results
