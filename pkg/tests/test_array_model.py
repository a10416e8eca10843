import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import U_BAR, Scene
from mcdetect.array_model import (
    ArrayGeometry,
    CouplingProfile,
    ManifoldBasis,
    PointingState,
    check_identifiability,
    coupled_steering,
    coupling_matrix,
    cosine_similarity,
    exact_basis,
    h_of_delta,
    manifold_basis,
    mismatch_curve,
    neighborhood_grid,
    peak_mismatch_scan,
    selection_matrix,
    steering,
    steering_derivative,
)
from mcdetect.errors import (
    DegenerateVector,
    EmptyGrid,
    IdentifiabilityViolation,
    OrderExceedsAperture,
    OutOfVisibleRegion,
)

G16 = ArrayGeometry(16, 0.5)
PROFILE = CouplingProfile((0.7, 0.4))
unit_u = st.floats(-1.0, 1.0, allow_nan=False)


def test_steering_endfire_and_boresight():
    assert np.allclose(steering(ArrayGeometry(2), 1.0), [1, -1])
    assert np.allclose(steering(ArrayGeometry(5, 0.3), 0.0), np.ones(5))


def test_steering_reference_phase():
    p = steering(G16, 0.5736)
    n = np.arange(16)
    assert p[0] == 1
    assert np.allclose(np.angle(p * np.exp(-1j * np.pi * n * 0.5736)), 0, atol=1e-12)


def test_steering_rejects_invisible_direction():
    with pytest.raises(OutOfVisibleRegion):
        steering(G16, 1.2)
    with pytest.raises(OutOfVisibleRegion):
        steering_derivative(G16, -1.01)


def test_steering_derivative_examples():
    assert steering_derivative(G16, 0.3)[0] == 0
    assert np.allclose(steering_derivative(ArrayGeometry(2), 0.0), [0, 1j * np.pi])


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.999, 0.999), st.integers(2, 32), st.floats(0.1, 1.0))
def test_steering_properties(u, n, d):
    g = ArrayGeometry(n, d)
    p = steering(g, u)
    assert np.real(np.vdot(p, p)) == pytest.approx(n, rel=1e-13)
    h = 1e-6
    fd = (steering(g, u + h) - steering(g, u - h)) / (2 * h)
    exact = steering_derivative(g, u)
    assert np.linalg.norm(fd - exact) <= 1e-6 * np.linalg.norm(exact)


def test_coupling_matrix_examples():
    assert np.array_equal(coupling_matrix(CouplingProfile(), 5), np.eye(5))
    expected = np.array([[1, .7, .4, 0], [.7, 1, .7, .4], [.4, .7, 1, .7], [0, .4, .7, 1]])
    assert np.allclose(coupling_matrix(PROFILE, 4), expected, atol=0)
    c = coupling_matrix(CouplingProfile((0.5j,)), 3)
    assert c[0, 1] == c[1, 0] == 0.5j


def test_coupling_matrix_order_check():
    with pytest.raises(OrderExceedsAperture):
        coupling_matrix(CouplingProfile((0.1, 0.1, 0.1)), 3)


def test_selection_matrix():
    assert np.array_equal(selection_matrix(0, 4), np.eye(4))
    assert np.array_equal(selection_matrix(1, 3), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    with pytest.raises(OrderExceedsAperture):
        selection_matrix(3, 3)
    recomposed = np.eye(16) + 0.7 * selection_matrix(1, 16) + 0.4 * selection_matrix(2, 16)
    assert np.array_equal(coupling_matrix(PROFILE, 16), recomposed)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False),
                min_size=0, max_size=5), st.integers(6, 12))
def test_coupling_recomposition(coeffs, n):
    c = coupling_matrix(CouplingProfile(tuple(coeffs)), n)
    ref = np.eye(n, dtype=complex)
    for m, cm in enumerate(coeffs, start=1):
        ref += cm * selection_matrix(m, n)
    assert np.allclose(c, ref, atol=1e-15)
    assert np.array_equal(c, c.T)


def test_manifold_basis_columns():
    pt = PointingState(U_BAR, G16.u3db)
    b1 = manifold_basis(G16, pt, 1)
    assert np.array_equal(b1.d_tilde[:, 0], steering(G16, U_BAR))
    assert np.array_equal(b1.d_dot[:, 0], steering_derivative(G16, U_BAR))
    b3 = manifold_basis(G16, pt, 3)
    for m in range(3):
        assert np.allclose(b3.d_tilde[:, m], selection_matrix(m, 16) @ steering(G16, U_BAR))
        assert np.allclose(b3.d_dot[:, m],
                           selection_matrix(m, 16) @ steering_derivative(G16, U_BAR))
    assert np.array_equal(b3.truncated(2).d_tilde, b3.d_tilde[:, :2])
    with pytest.raises(IdentifiabilityViolation):
        manifold_basis(G16, pt, 9)


def test_identifiability():
    pt = PointingState(U_BAR, G16.u3db)
    assert check_identifiability(manifold_basis(G16, pt, 1))
    assert check_identifiability(manifold_basis(G16, pt, 3))
    dt, dd = exact_basis(G16, U_BAR, 9)
    assert not check_identifiability(ManifoldBasis(dt, dd, pt, G16))


def test_h_of_delta_trivial_cases():
    basis = Scene().basis
    assert np.array_equal(h_of_delta(basis, 0.0), basis.d_tilde)
    mock = ManifoldBasis(basis.d_tilde, np.zeros_like(basis.d_dot), basis.pointing,
                         basis.geometry)
    assert np.array_equal(h_of_delta(mock, 1.0), basis.d_tilde)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.1, 0.1), st.integers(0, 2**32 - 1))
def test_h_of_delta_factorization(du, seed):
    rng = np.random.default_rng(seed)
    basis = Scene().basis
    b = rng.normal(size=3) + 1j * rng.normal(size=3)
    p_lin = steering(G16, U_BAR) + du * steering_derivative(G16, U_BAR)
    lhs = h_of_delta(basis, du) @ b
    rhs = (b[0] * np.eye(16) + b[1] * selection_matrix(1, 16)
           + b[2] * selection_matrix(2, 16)) @ p_lin
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_h_of_delta_reproduces_coupled_lam():
    basis = Scene().basis
    du = 0.0349
    b = PROFILE.b_direction
    p_lin = steering(G16, U_BAR) + du * steering_derivative(G16, U_BAR)
    ref = coupling_matrix(PROFILE, 16) @ p_lin
    assert np.max(np.abs(h_of_delta(basis, du) @ b - ref)) < 1e-12


def test_cosine_similarity():
    v = np.array([1, 2j, 3])
    assert cosine_similarity(v, v) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    with pytest.raises(DegenerateVector):
        cosine_similarity([0, 0], [1, 0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cosine_similarity_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    v1 = rng.normal(size=6) + 1j * rng.normal(size=6)
    v2 = rng.normal(size=6) + 1j * rng.normal(size=6)
    s = complex(*rng.normal(size=2)) * 10 ** rng.uniform(-4, 4)
    assert cosine_similarity(s * v1, v2) == pytest.approx(cosine_similarity(v1, v2), abs=1e-12)


def test_mismatch_dips_below_threshold():
    theta = np.concatenate([np.arange(-60, -30.001, 0.1), np.arange(30, 60.001, 0.1)])
    cos_s = mismatch_curve(G16, PROFILE, np.sin(np.radians(theta)))
    assert cos_s.min() < 0.8
    pm = coupled_steering(G16, PROFILE, 0.5)
    assert cos_s[np.argmin(np.abs(theta - 30))] == pytest.approx(
        cosine_similarity(steering(G16, 0.5), pm), rel=1e-12)


def test_peak_scan_reference_displacement():
    u0 = math.sin(math.radians(35.0))
    _, disp = peak_mismatch_scan(G16, PROFILE, u0, neighborhood_grid(G16, u0, 0.01))
    assert disp == pytest.approx(-1.38, abs=0.01)


def test_peak_scan_mirror_symmetry():
    u0 = math.sin(math.radians(-35.0))
    _, disp = peak_mismatch_scan(G16, PROFILE, u0, neighborhood_grid(G16, u0, 0.01))
    assert disp == pytest.approx(1.38, abs=0.01)


def test_peak_scan_without_coupling():
    u0 = math.sin(math.radians(35.0))
    _, disp = peak_mismatch_scan(G16, CouplingProfile(), u0, neighborhood_grid(G16, u0))
    assert disp == pytest.approx(0.0, abs=1e-9)


def test_peak_scan_empty_grid():
    with pytest.raises(EmptyGrid):
        peak_mismatch_scan(G16, PROFILE, 0.5, [])


def test_neighborhood_grid_is_anchored():
    u0 = math.sin(math.radians(35.0))
    grid = neighborhood_grid(G16, u0, 0.01)
    assert np.any(np.isclose(grid, 35.0, atol=1e-12))
    u = np.sin(np.radians(grid))
    assert u.min() >= u0 - G16.u3db - 1e-12 and u.max() <= u0 + G16.u3db + 1e-12
