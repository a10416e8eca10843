import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import Scene
from mcdetect.array_model import (
    ArrayGeometry,
    CouplingProfile,
    ManifoldBasis,
    PointingState,
    coupled_steering,
    exact_basis,
    h_of_delta,
    manifold_basis,
)
from mcdetect.detectors import (
    BatchEvaluator,
    DetectorKind,
    Variant,
    benchmark_statistic,
    evaluate,
    g_transform,
    glrt_lam,
    lg_value,
    mflrt,
    mflrt_bound,
    tau_p_bound,
    two_stage_detect,
)
from mcdetect.errors import IncompleteSpecification
from mcdetect.estimator import estimate_displacement, whiten, whitening_matrix
from mcdetect.harness import TrialSetup, simulate_statistics
from mcdetect.numkernel import hermitian_sqrt
from mcdetect.scenario import SnapshotSet, derive_seed

SCENE = Scene()

ALL_KINDS = [
    DetectorKind(Variant.GLRT_LAM, order=3),
    DetectorKind(Variant.GLRT_LAM_2S, order=3),
    DetectorKind(Variant.MFLRT, n_bar=5),
    DetectorKind(Variant.MFLRT, n_bar=5, log_form=True),
    DetectorKind(Variant.MFLRT_2S, n_bar=5),
    DetectorKind(Variant.BEN_GLRT),
    DetectorKind(Variant.BEN_GLRT_NC),
    DetectorKind(Variant.BEN_GLRT_DOA, order=3),
    DetectorKind(Variant.BEN_GLRT_DOA, order=3, verbatim=True),
    DetectorKind(Variant.CLASSIC_GLRT),
    DetectorKind(Variant.SUBSPACE_SD),
]


def run(kind, snap, scene=SCENE):
    return evaluate(kind, snap, scene.geometry, scene.pointing, scene.config, scene.u0,
                    scene.env.coupling)


def test_labels():
    assert DetectorKind("GLRT_LAM", order=3).label == "GLRT_LAM"
    assert DetectorKind("MFLRT", n_bar=8).label == "MFLRT_8"
    assert DetectorKind("MFLRT_2S", n_bar=8, log_form=True).label == "MFLRT_2S_8_LOG"
    assert DetectorKind("BEN_GLRT_DOA", order=3, verbatim=True).label == "BEN_GLRT_DOA_VERBATIM"
    with pytest.raises(IncompleteSpecification):
        DetectorKind("GLRT_LAM")
    with pytest.raises(IncompleteSpecification):
        DetectorKind("MFLRT_2S")
    with pytest.raises(ValueError):
        DetectorKind("NOT_A_DETECTOR")


def test_glrt_zero_primary_is_one():
    snap = SnapshotSet(np.zeros(16, complex), SCENE.draw(1).secondary, 0)
    assert glrt_lam(snap, SCENE.basis, SCENE.config).statistic == pytest.approx(1.0)


def test_tau_p_extremes():
    sec = np.eye(16, dtype=complex)  # S = I so r_w = r
    basis = SCENE.basis
    r_in = basis.h1 @ np.arange(1, 7)
    tau = tau_p_bound(SnapshotSet(r_in, sec, 0), basis)
    assert tau == pytest.approx(1 + np.real(np.vdot(r_in, r_in)), rel=1e-9)
    q, _ = np.linalg.qr(np.hstack([basis.h1, np.eye(16)[:, :1]]))
    assert tau_p_bound(SnapshotSet(q[:, 6], sec, 0), basis) == pytest.approx(1.0, abs=1e-12)


def test_glrt_bounded_by_tau_p():
    strict = 0
    for t in range(300):
        snap = SCENE.draw(derive_seed(6, 0, t))
        g = glrt_lam(snap, SCENE.basis, SCENE.config).statistic
        tau = tau_p_bound(snap, SCENE.basis)
        assert 1.0 <= g <= tau * (1 + 1e-12)
        strict += g < tau * (1 - 1e-9)
    assert strict > 250


def test_strong_target_exceeds_h0_quantile():
    setup = TrialSetup(SCENE.env, SCENE.pointing, SCENE.config, SCENE.u0)
    kind = DetectorKind(Variant.GLRT_LAM, order=3)
    h0 = simulate_statistics([kind], setup, 10000, 61)[kind.label]
    thr = np.quantile(h0, 0.999)
    r = exact_basis(SCENE.geometry, SCENE.u0, 3)[0] @ (SCENE.amplitude(20.0)
                                                      * SCENE.env.coupling.b_direction)
    snap = SnapshotSet(r, SCENE.draw(62).secondary, 0)
    assert glrt_lam(snap, SCENE.basis, SCENE.config).statistic > thr


def test_g_transform_examples():
    for i in (1, 2, 5):
        assert g_transform(i, 2 * i + 1) == 0.0
    assert g_transform(1, 1.0) == 0.0
    assert g_transform(1, 6.0) == pytest.approx(6 - 3 * (np.log(2) + 1))


@settings(max_examples=100, deadline=None)
@given(st.floats(3.0, 100.0, exclude_min=True), st.integers(1, 6))
def test_g_transform_decreases_with_order(x, i):
    assert g_transform(i + 1, x) <= g_transform(i, x)
    assert g_transform(i, x) >= 0
    assert g_transform(i, x) <= g_transform(i, x + 1.0)


def test_lg_value_forms():
    assert lg_value(2.0, 48) == pytest.approx(2 * 49 * 2.0)
    assert lg_value(2.0, 48, log_form=True) == pytest.approx(2 * 49 * np.log(2.0))


def test_mflrt_single_order():
    snap = SCENE.draw(derive_seed(6, 1), 10.0)
    rep = mflrt(snap, SCENE.geometry, SCENE.pointing, 1, SCENE.config)
    assert rep.selected_order == 1
    assert rep.statistic == pytest.approx(g_transform(1, rep.per_order_lg[0]))


@pytest.mark.parametrize("log_form", [False, True])
def test_mflrt_bounded(log_form):
    for t in range(100):
        snap = SCENE.draw(derive_seed(6, 2, t))
        s = mflrt(snap, SCENE.geometry, SCENE.pointing, 8, SCENE.config, log_form).statistic
        bound = mflrt_bound(snap, SCENE.geometry, SCENE.pointing, 8, log_form)
        assert s <= bound * (1 + 1e-12) + 1e-12


def test_mflrt_order_statistic_equals_scaled_glrt():
    snap = SCENE.draw(derive_seed(6, 3), 12.0)
    rep = mflrt(snap, SCENE.geometry, SCENE.pointing, 6, SCENE.config)
    g = glrt_lam(snap, SCENE.basis, SCENE.config).statistic
    assert rep.per_order_lg[2] == pytest.approx(2 * (SCENE.env.k_secondary + 1) * g, rel=1e-12)


def test_mflrt_ties_go_to_smallest_order():
    # below every step, all g_i vanish: argmax must be order 1
    snap = SnapshotSet(np.zeros(16, complex), SCENE.draw(1).secondary, 0)
    rep = mflrt(snap, SCENE.geometry, SCENE.pointing, 4, SCENE.config, log_form=True)
    assert rep.statistic == 0.0 and rep.selected_order == 1


def test_mflrt_selects_true_order_when_model_is_exact():
    scene = Scene(delta_u=0.0)
    votes = [mflrt(scene.draw(derive_seed(4, t), 25.0), scene.geometry, scene.pointing, 8,
                   scene.config, log_form=True).selected_order for t in range(200)]
    assert np.mean(np.array(votes) == 3) > 0.5


@pytest.mark.xfail(strict=True, reason="at du = 0.0349 higher orders absorb the "
                   "linearization error; see decisions ledger")
def test_mflrt_order_census_reference_offset():
    votes = [mflrt(SCENE.draw(derive_seed(4, t), 25.0), SCENE.geometry, SCENE.pointing, 8,
                   SCENE.config).selected_order for t in range(200)]
    assert np.mean(np.array(votes) == 3) > 0.5


def test_benchmark_needs_knowns():
    snap = SCENE.draw(1)
    with pytest.raises(IncompleteSpecification):
        benchmark_statistic(DetectorKind(Variant.BEN_GLRT), snap, SCENE.geometry, SCENE.pointing,
                            SCENE.u0, None)
    with pytest.raises(IncompleteSpecification):
        benchmark_statistic(DetectorKind(Variant.BEN_GLRT_NC), snap, SCENE.geometry,
                            SCENE.pointing)
    with pytest.raises(IncompleteSpecification):
        BatchEvaluator([DetectorKind(Variant.BEN_GLRT_DOA, order=2)], SCENE.geometry,
                       SCENE.pointing, SCENE.config, 48)


def test_ben_glrt_matched_case():
    # S = K I, r = p_m(u0): Kelly ratio equals ||v||^2/K / (1 + ||v||^2/K)
    k = 48
    sec = np.sqrt(k / 3) * np.vstack([np.eye(16)] * 3).astype(complex)
    snap = SnapshotSet(SCENE.pm, sec, 0)
    s = benchmark_statistic(DetectorKind(Variant.BEN_GLRT), snap, SCENE.geometry,
                            SCENE.pointing, SCENE.u0, SCENE.env.coupling).statistic
    e = np.real(np.vdot(SCENE.pm, SCENE.pm)) / k
    assert s == pytest.approx(e / (1 + e), rel=1e-12)


def test_ben_nc_equals_ben_without_coupling():
    g = ArrayGeometry(16)
    snap = SCENE.draw(derive_seed(6, 4), 10.0)
    a = benchmark_statistic(DetectorKind(Variant.BEN_GLRT), snap, g, SCENE.pointing,
                            SCENE.u0, CouplingProfile())
    b = benchmark_statistic(DetectorKind(Variant.BEN_GLRT_NC), snap, g, SCENE.pointing, SCENE.u0)
    assert a.statistic == b.statistic


def test_kelly_statistics_in_unit_interval():
    for t in range(50):
        snap = SCENE.draw(derive_seed(6, 5, t), 20.0 if t % 2 else None)
        for v in (Variant.BEN_GLRT, Variant.BEN_GLRT_NC, Variant.CLASSIC_GLRT,
                  Variant.SUBSPACE_SD):
            s = run(DetectorKind(v), snap).statistic
            assert 0 <= s < 1


def test_glrt_at_least_one_and_report_fields():
    rep = run(DetectorKind(Variant.GLRT_LAM, order=3), SCENE.draw(derive_seed(6, 6), 10.0))
    assert rep.statistic >= 1 and rep.b_hat.shape == (3,)
    assert abs(rep.delta_u_hat) <= SCENE.pointing.alpha
    assert rep.decide(0.0).decided_h1 and not rep.decide(np.inf).decided_h1


@pytest.mark.parametrize("t", range(4))
def test_unitary_rotation_invariance(t):
    rng = np.random.default_rng(derive_seed(6, 7, t))
    q, _ = np.linalg.qr(rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16)))
    snap = SCENE.draw(derive_seed(6, 8, t), 10.0)
    rot = SnapshotSet(q @ snap.primary, snap.secondary @ q.T, 0)
    b = SCENE.basis
    b_rot = ManifoldBasis(q @ b.d_tilde, q @ b.d_dot, b.pointing, b.geometry)
    g1 = glrt_lam(snap, b, SCENE.config).statistic
    g2 = glrt_lam(rot, b_rot, SCENE.config).statistic
    assert g2 == pytest.approx(g1, rel=1e-9)
    assert tau_p_bound(rot, b_rot) == pytest.approx(tau_p_bound(snap, b), rel=1e-9)


@pytest.mark.parametrize("t", range(10))
def test_scale_invariance_all_detectors(t):
    rng = np.random.default_rng(derive_seed(6, 9, t))
    snap = SCENE.draw(derive_seed(6, 10, t), float(rng.uniform(0, 25)))
    s = complex(*rng.normal(size=2)) * 10 ** rng.uniform(-3, 3)
    for kind in ALL_KINDS:
        if kind.verbatim:
            continue  # the verbatim denominator mixes whitened and raw energy
        a = run(kind, snap).statistic
        b = run(kind, snap.scaled(s)).statistic
        assert b == pytest.approx(a, rel=1e-9, abs=1e-12), kind.label


@pytest.mark.parametrize("t", range(3))
def test_common_phase_rotation_invariance(t):
    snap = SCENE.draw(derive_seed(6, 11, t), 12.0)
    rot = SnapshotSet(np.exp(1.3j) * snap.primary, np.exp(1.3j) * snap.secondary, 0)
    for kind in ALL_KINDS:
        assert run(kind, rot).statistic == pytest.approx(run(kind, snap).statistic,
                                                         rel=1e-9, abs=1e-12), kind.label


def test_two_stage_structure_mflrt():
    snap = SCENE.draw(derive_seed(6, 12), 20.0)
    kind = DetectorKind(Variant.MFLRT_2S, n_bar=5)
    rep = two_stage_detect(kind, snap, SCENE.geometry, SCENE.pointing, SCENE.config)
    first = rep.stage1
    sel = first.selected_order
    # the re-linearization point uses the displacement of the selected order
    w = whiten(snap, SCENE.basis if sel == 3 else manifold_basis(SCENE.geometry,
                                                                   SCENE.pointing, sel))
    assert first.delta_u_hat == pytest.approx(
        estimate_displacement(w, SCENE.config).delta_u_hat, abs=1e-15)
    p2 = PointingState(SCENE.pointing.u_bar + first.delta_u_hat, SCENE.pointing.alpha)
    direct = mflrt(snap, SCENE.geometry, p2, 5, SCENE.config)
    assert rep.statistic == direct.statistic
    assert rep.delta_u_hat == pytest.approx(first.delta_u_hat + direct.delta_u_hat)


def test_two_stage_near_no_op_at_look_direction():
    scene = Scene(delta_u=0.0)
    kind = DetectorKind(Variant.GLRT_LAM_2S, order=3)
    ratios = []
    for t in range(100):
        rep = two_stage_detect(kind, scene.draw(derive_seed(6, 13, t), 15.0), scene.geometry,
                               scene.pointing, scene.config)
        ratios.append(rep.statistic / rep.stage1.statistic)
    assert np.mean(ratios) == pytest.approx(1.0, abs=0.05)


def test_two_stage_noiseless_error_not_worse():
    d, _ = exact_basis(SCENE.geometry, SCENE.u0, 3)
    r = d @ (3.0 * SCENE.env.coupling.b_direction)
    snap = SnapshotSet(r, hermitian_sqrt(SCENE.m).T, 0)
    for kind in (DetectorKind(Variant.GLRT_LAM_2S, order=3),
                 DetectorKind(Variant.MFLRT_2S, n_bar=4, log_form=True)):
        rep = two_stage_detect(kind, snap, SCENE.geometry, SCENE.pointing, SCENE.config)
        assert abs(rep.delta_u_hat - SCENE.delta_u) <= abs(rep.stage1.delta_u_hat - SCENE.delta_u)


@pytest.mark.parametrize("sinr_db", [None, 5.0, 20.0])
def test_batch_matches_single_instance(sinr_db):
    snaps = [SCENE.draw(derive_seed(6, 14, t), sinr_db) for t in range(6)]
    ev = BatchEvaluator(ALL_KINDS, SCENE.geometry, SCENE.pointing, SCENE.config,
                        SCENE.env.k_secondary, SCENE.u0, SCENE.env.coupling)
    prep = ev.prepare(whitening_matrix(np.stack([s.secondary for s in snaps])))
    res = ev.evaluate(prep, np.stack([s.primary for s in snaps]))
    for i, snap in enumerate(snaps):
        for kind in ALL_KINDS:
            rep = run(kind, snap)
            r = res[kind.label]
            assert r.statistic[i] == pytest.approx(rep.statistic, rel=1e-9), kind.label
            if kind.estimates_bearing:
                assert r.delta_u[i] == pytest.approx(rep.delta_u_hat, abs=1e-12)
                nb = rep.b_hat.size
                assert np.allclose(r.b_hat[i, :nb], rep.b_hat, rtol=1e-8, atol=1e-12)
            if kind.variant is Variant.MFLRT:
                assert r.order[i] == rep.selected_order


def test_verbatim_ben_doa_uses_raw_energy():
    snap = SCENE.draw(derive_seed(6, 15), 10.0)
    a = run(DetectorKind(Variant.BEN_GLRT_DOA, order=3), snap).statistic
    b = run(DetectorKind(Variant.BEN_GLRT_DOA, order=3, verbatim=True), snap).statistic
    w = whiten(snap, SCENE.basis)
    raw = np.real(np.vdot(snap.primary, snap.primary))
    assert b == pytest.approx(a * (1 + w.r_norm_sq) / (1 + raw), rel=1e-12)


def test_benchmarks_use_true_model():
    # noiseless echo on the exact coupled manifold: ben-GLRT-DOA captures it entirely
    sec = np.eye(16, dtype=complex)
    snap = SnapshotSet(SCENE.pm * 2.0, sec, 0)
    s = run(DetectorKind(Variant.BEN_GLRT_DOA, order=3), snap).statistic
    e = 4 * np.real(np.vdot(SCENE.pm, SCENE.pm))
    assert s == pytest.approx(e / (1 + e), rel=1e-10)
    assert coupled_steering(SCENE.geometry, SCENE.env.coupling, SCENE.u0) == pytest.approx(
        h_of_delta(ManifoldBasis(*exact_basis(SCENE.geometry, SCENE.u0, 3), SCENE.pointing,
                                 SCENE.geometry), 0.0) @ SCENE.env.coupling.b_direction)
