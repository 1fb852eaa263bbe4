#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for norms, angles, exterior powers and the symplectic helpers.
"""

import numpy as np
import pytest
from hypothesis import given, settings, assume
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cocyclelab.errors import NonInvertibleError, DegenerateError, NotLagrangianError
from cocyclelab.linalg import Subspace, Splitting, SymplecticForm, SPECIAL_LINEAR, SYMPLECTIC, \
    conorm, norm, principal_angle, sin_angle, vector_angle, angle_distortion_ratio, \
    planar_angle_bound_check, triple_angle_check, exterior_power, wedge, product_log_norm, \
    group_residual, project_group, random_special_linear, random_symplectic, random_unitary, \
    lagrangian_pair, symplectic_pairing_bound, lagrangian_product_bounds, hermitian, standard_j, \
    restricted_norms, inf_norms
from cocyclelab.rnd import generator

ENTRIES = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False, allow_infinity=False)


def well_conditioned(M, limit=1e4):
    return np.isfinite(np.linalg.cond(M)) and np.linalg.cond(M) < limit


def test_conorm_is_inverse_norm():
    L = np.array([[2.0, 1.0], [0.0, 0.5]])
    assert conorm(L) == pytest.approx(1.0 / norm(np.linalg.inv(L)))


def test_conorm_singular():
    with pytest.raises(NonInvertibleError, match='non-invertible'):
        conorm(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_inf_norms():
    mats = np.array([np.diag([2.0, 0.5]), np.diag([3.0, 1.0 / 3.0])])
    assert inf_norms(mats) == pytest.approx((3.0, 3.0))


def test_restricted_norms():
    L = np.diag([3.0, 2.0, 0.5])
    top, bottom = restricted_norms(L, Subspace.coordinate(3, [1, 2]))
    assert (top, bottom) == pytest.approx((2.0, 0.5))


@pytest.mark.parametrize('angle', [1e-9, 1e-4, 0.3, np.pi / 2.0 - 1e-6, np.pi / 2.0])
def test_principal_angle_plane(angle):
    E = Subspace([1.0, 0.0, 0.0])
    F = Subspace([[np.cos(angle), 0.0], [np.sin(angle), 0.0], [0.0, 1.0]])
    assert principal_angle(E, F) == pytest.approx(angle, rel=1e-6, abs=1e-12)


def test_principal_angle_intersecting():
    E = Subspace.coordinate(3, [0, 1])
    F = Subspace.coordinate(3, [1, 2])
    assert principal_angle(E, F) == pytest.approx(0.0, abs=1e-12)


def test_vector_angle_is_line_angle():
    assert vector_angle([1.0, 0.0], [-1.0, 1.0]) == pytest.approx(np.pi / 4.0)
    assert sin_angle([1.0, 0.0], [-3.0, 0.0]) == pytest.approx(0.0)


def test_degenerate_inputs():
    with pytest.raises(DegenerateError):
        Subspace([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(DegenerateError, match='degenerate pair'):
        sin_angle([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(DegenerateError):
        Splitting([Subspace([1.0, 0.0]), Subspace([2.0, 0.0])])


def test_complement_and_splitting():
    E = Subspace([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    F = E.complement()
    assert F.dim == 1
    assert E.orthonormality_residual() < 1e-12
    np.testing.assert_allclose(E.projector() + F.projector(), np.eye(3), atol=1e-12)
    assert np.abs(E.basis.T @ F.basis).max() < 1e-12
    split = Splitting([E, F])
    assert split.dims == [2, 1]
    assert split.transversality() == pytest.approx(1.0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 3), elements=ENTRIES), arrays(np.float64, (3,), elements=ENTRIES),
       arrays(np.float64, (3,), elements=ENTRIES))
def test_angle_distortion_within_condition_number(L, v, w):
    assume(well_conditioned(L))
    assume(np.linalg.norm(v) > 1e-3 and np.linalg.norm(w) > 1e-3)
    assume(sin_angle(v, w) > 1e-3)
    ratio = angle_distortion_ratio(L, v, w)
    kappa = norm(L) / conorm(L)
    assert 1.0 / kappa * (1 - 1e-9) <= ratio <= kappa * (1 + 1e-9)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (2, 2), elements=ENTRIES), st.floats(0.0, np.pi), st.floats(0.0, np.pi))
def test_planar_angle_bound(L, a, b):
    assume(well_conditioned(L))
    assume(abs(np.sin(a - b)) > 1e-3)
    lhs, rhs = planar_angle_bound_check(L, np.array([np.cos(a), np.sin(a)]), np.array([np.cos(b), np.sin(b)]))
    assert lhs <= rhs * (1 + 1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_triple_angle_inequality(seed):
    rng = generator(seed)
    V = rng.normal(size=(4, 4))
    assume(well_conditioned(V, 1e3))
    A, B, C = Subspace(V[:, :1]), Subspace(V[:, 1:3]), Subspace(V[:, 3:])
    lhs, rhs = triple_angle_check(A, B, C)
    assert lhs >= rhs - 1e-12


def test_triple_angle_degenerate():
    A = Subspace.coordinate(3, [0])
    with pytest.raises(DegenerateError, match='degenerate configuration'):
        triple_angle_check(A, Subspace.coordinate(3, [1]), Subspace([1.0, 1.0, 0.0]))


@pytest.mark.parametrize('d,p', [(3, 1), (3, 2), (4, 2), (4, 3), (5, 2)])
def test_exterior_power_multiplicative(d, p):
    rng = generator(d * 10 + p)
    A, B = rng.normal(size=(2, d, d))
    np.testing.assert_allclose(exterior_power(A @ B, p), exterior_power(A, p) @ exterior_power(B, p),
                               atol=1e-10)
    svals = np.linalg.svd(A, compute_uv=False)
    assert norm(exterior_power(A, p)) == pytest.approx(np.prod(svals[:p]))


def test_exterior_power_range():
    with pytest.raises(ValueError):
        exterior_power(np.eye(3), 4)


def test_wedge_norm_is_volume():
    V = generator(3).normal(size=(4, 2))
    assert np.linalg.norm(wedge(V)) == pytest.approx(np.sqrt(np.linalg.det(V.T @ V)))


def test_product_log_norm_long_product():
    mats = np.array([np.diag([2.0, 0.5])] * 2000)
    assert product_log_norm(mats) == pytest.approx(2000 * np.log(2.0))
    short = generator(1).normal(size=(5, 3, 3))
    prod = short[4] @ short[3] @ short[2] @ short[1] @ short[0]
    assert product_log_norm(short) == pytest.approx(np.log(norm(prod)))


def test_group_projection():
    rng = generator(4)
    M = random_special_linear(3, rng)
    assert group_residual(M, SPECIAL_LINEAR) < 1e-10
    drifted = M * (1.0 + 1e-7)
    assert group_residual(project_group(drifted, SPECIAL_LINEAR), SPECIAL_LINEAR) < 1e-10


def test_random_symplectic_and_unitary():
    rng = generator(5)
    S = random_symplectic(2, rng)
    assert group_residual(S, SYMPLECTIC) < 1e-9
    U = random_unitary(3, rng)
    J = standard_j(3)
    np.testing.assert_allclose(U @ J, J @ U, atol=1e-12)
    np.testing.assert_allclose(U.T @ U, np.eye(6), atol=1e-12)


def test_hermitian_product_parts():
    rng = generator(6)
    u, v = rng.normal(size=(2, 4))
    form = SymplecticForm(4)
    h = hermitian(u, v)
    assert h.real == pytest.approx(np.dot(u, v))
    assert h.imag == pytest.approx(form.omega(u, v))


def test_lagrangian_checks():
    form = SymplecticForm(4)
    E, F = lagrangian_pair(2)
    assert form.is_lagrangian(E) and form.is_lagrangian(F)
    with pytest.raises(NotLagrangianError):
        form.check_lagrangian(Subspace(np.eye(4)[:, [0, 2]]))
    with pytest.raises(ValueError):
        SymplecticForm(3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_symplectic_pairing_and_product_bounds(seed):
    rng = generator(seed)
    form = SymplecticForm(4)
    S0 = random_symplectic(2, rng, scale=0.3)
    E0, F0 = lagrangian_pair(2)
    E, F = E0.image(S0), F0.image(S0)
    v = E.basis @ rng.normal(size=2)
    assume(np.linalg.norm(v) > 1e-3)
    _, ratio = symplectic_pairing_bound(E, F, v, form)
    assert ratio >= np.sin(principal_angle(E, F)) / form.C_omega - 1e-9
    S = random_symplectic(2, rng, scale=0.5)
    lower, value, upper = lagrangian_product_bounds(S, E, F, form)
    assert lower * (1 - 1e-9) <= value <= upper * (1 + 1e-9)
