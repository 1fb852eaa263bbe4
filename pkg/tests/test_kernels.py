#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for the perturbation kernels and their verification.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocyclelab.errors import ThinnessError, MixedSignError, DegenerateError, AngleBudgetError
from cocyclelab.kernels import smooth_cutoff, cutoff_integral, IdentityKernel, cylinder_spec, volume_kernel, \
    volume_epsilon, phase_matrix, unitary_kernel, composite_unitary_kernel, dyadic_packing, \
    packing_volume_check, cylinder_flow_budget, symplectic_cylinder_kernel, kernel_verify, radial_profile, \
    grid_points
from cocyclelab.linalg import standard_j


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.5, 1.5), st.floats(0.05, 0.95))
def test_cutoff_bounds(t, inner):
    value, d1, d2 = smooth_cutoff(t, inner, 1.0)
    width = 1.0 - inner
    assert 0.0 <= value <= 1.0
    assert d1 <= 0.0
    assert abs(d1) <= 1.875 / width + 1e-12
    assert abs(d2) <= 5.78 / width ** 2
    if t <= inner:
        assert value == 1.0
    if t >= 1.0:
        assert value == 0.0


def test_cutoff_integral_is_primitive():
    sigma = 0.4
    t = np.linspace(0.01, 1.2, 50)
    h = 1e-6
    numeric = (cutoff_integral(t + h, sigma) - cutoff_integral(t - h, sigma)) / (2.0 * h)
    np.testing.assert_allclose(numeric, smooth_cutoff(t, sigma, 1.0)[0], atol=1e-6)
    assert cutoff_integral(3.0, sigma) == pytest.approx((1.0 + sigma) / 2.0)


def test_identity_kernel_report_is_zero():
    report = kernel_verify(IdentityKernel(3), points=500, fd_points=50)
    assert report.points == 500
    assert report.det_residual == 0.0
    assert report.identity_distance == 0.0
    assert report.displacement == 0.0
    assert report.outside_moved == 0 and report.inner_mismatch == 0
    assert report.symplectic_residual is None
    assert report.fd_error < 1e-8


def test_grid_points_inside_balls():
    P = grid_points([1, 2], 300, seed=4)
    assert P.shape == (300, 3)
    assert np.all(np.abs(P[:, 0]) <= 2.0)
    assert np.all(np.linalg.norm(P[:, 1:], axis=1) <= 2.0)
    np.testing.assert_array_equal(P, grid_points([1, 2], 300, seed=4))


def test_volume_kernel_support_and_inner_map():
    kernel = volume_kernel(cylinder_spec(3, 1.0, 0.1, 0.5, 0.3))
    report = kernel_verify(kernel, points=2000, fd_points=200)
    assert report.det_residual < 1e-9
    assert report.outside_points > 0 and report.outside_moved == 0
    assert report.inner_points > 0 and report.inner_mismatch == 0
    assert report.fd_error < 1e-5


def test_volume_kernel_with_eccentric_ellipse():
    spec = cylinder_spec(4, 2.0, 0.1, 0.6, 0.2, lam=2.0, rho=0.5, Q=np.diag([1.0, 4.0]))
    assert spec.tau == 8.0
    report = kernel_verify(volume_kernel(spec), points=1500, fd_points=100)
    assert report.det_residual < 1e-9
    assert report.outside_moved == 0 and report.inner_mismatch == 0


def test_volume_kernel_thinness_and_budget():
    with pytest.raises(ThinnessError, match='not thin enough'):
        cylinder_spec(3, 0.1, 0.1, 0.5, 0.3)
    spec = cylinder_spec(3, 1.0, 0.01, 0.5, 0.3)
    assert volume_epsilon(0.1, 0.5) == pytest.approx(0.1 * 0.5 / 18.0)
    with pytest.raises(AngleBudgetError):
        volume_kernel(spec, eps0=0.1)
    small = cylinder_spec(3, 0.02, 0.001, 0.5, 1e-3)
    assert volume_kernel(small, eps0=0.1).spec.angle == 1e-3


def test_radial_profile_shells():
    kernel = volume_kernel(cylinder_spec(3, 1.0, 0.1, 0.5, 0.3))
    rows = radial_profile(kernel, points=1000, bins=8)
    assert len(rows) == 8
    assert sum(row[2] for row in rows) == 1000
    for r_lo, r_hi, count, moved, dist in rows:
        if r_lo >= 1.0:
            assert moved == 0.0 and dist == 0.0
        if r_hi <= 0.5 and count:
            assert dist == pytest.approx(2.0 * np.sin(0.15), rel=1e-9)


def test_unitary_kernel_is_symplectic_and_exact():
    kernel = unitary_kernel(phase_matrix([0.3, 0.5]), 0.5)
    report = kernel_verify(kernel, points=2000, fd_points=200)
    assert report.symplectic_residual < 1e-9
    assert report.det_residual < 1e-9
    assert report.outside_moved == 0
    assert report.inner_points > 0 and report.inner_mismatch == 0
    assert report.fd_error < 1e-5


def test_unitary_kernel_rotated_frame():
    c, s = np.cos(0.4), np.sin(0.4)
    M = np.array([[c, 0.0, -s, 0.0], [0.0, 1.0, 0.0, 0.0], [s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]])
    R = M @ phase_matrix([-0.2, -0.7]) @ M.T
    kernel = unitary_kernel(R, 0.4, scale=0.5, center=np.ones(4))
    np.testing.assert_allclose(kernel.R, R, atol=1e-12)
    np.testing.assert_allclose(kernel(np.ones(4)), np.ones(4), atol=1e-15)
    assert kernel_verify(kernel, points=1000, fd_points=0).inner_mismatch == 0


def test_unitary_kernel_rejections():
    with pytest.raises(MixedSignError):
        unitary_kernel(phase_matrix([0.3, -0.5]), 0.5)
    with pytest.raises(DegenerateError, match='vanishing'):
        unitary_kernel(phase_matrix([0.3, 0.0]), 0.5)
    with pytest.raises(DegenerateError, match='not unitary'):
        unitary_kernel(np.diag([2.0, 0.5, 0.5, 2.0]), 0.5)


def test_dyadic_packing_disjoint_balls():
    axes = np.array([2.0, 1.0])
    packing = dyadic_packing(axes, 5)
    centers = np.vstack([level[1] for level in packing.levels if len(level[0])])
    radii = np.concatenate([level[2] for level in packing.levels])
    assert packing.count == len(radii) > 0
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2) - (radii[:, None] + radii[None, :])
    np.fill_diagonal(gaps, 0.0)
    assert gaps.min() >= -1e-12
    corners = np.abs(centers) + radii[:, None]
    assert np.all(np.sum((corners / axes) ** 2, axis=1) < 1.0)


def test_composite_kernel_mixed_signs():
    kernel = composite_unitary_kernel(phase_matrix([0.3, -0.5]), 0.5)
    assert np.all(kernel.plus > 0) and np.all(kernel.minus < 0)
    np.testing.assert_allclose(kernel.plus + kernel.minus, [0.3, -0.5])
    report = kernel_verify(kernel, points=1000, fd_points=0)
    assert report.symplectic_residual < 1e-8
    assert report.outside_moved == 0
    packing = packing_volume_check(kernel, points=2000)
    assert packing.copies == kernel.packing.count
    assert packing.bound == pytest.approx(3.0 * (1.0 - 0.5 ** 4))
    assert 0.0 <= packing.lost_fraction <= 1.0 and packing.ok


def test_flow_budget():
    budget = cylinder_flow_budget(0.1, 0.5)
    assert budget.K == pytest.approx(10.0 / 0.25 + 20.0 / 0.25 + 30.0 / 0.5 + 3.0)
    assert np.expm1(budget.t_bar * budget.K) < 0.1
    assert budget.epsilon == pytest.approx(np.sqrt(2.0) * np.sin(budget.t_bar))


def test_cylinder_kernel_rejections():
    e = np.eye(4)
    with pytest.raises(DegenerateError):
        symplectic_cylinder_kernel(e[:, [0, 1]], 1.0, 0.1, 0.5, 0.05)
    with pytest.raises(ThinnessError):
        symplectic_cylinder_kernel(e[:, [0, 2]], 0.1, 0.1, 0.5, 0.05)
    with pytest.raises(AngleBudgetError):
        symplectic_cylinder_kernel(e[:, [0, 2]], 1.0, 0.1, 0.5, 0.05, eps0=0.1)


@pytest.mark.slow
def test_cylinder_kernel_flow():
    Y = np.column_stack([np.eye(4)[:, 0], standard_j(2) @ np.eye(4)[:, 0]])
    kernel = symplectic_cylinder_kernel(Y, 1.0, 0.1, 0.5, 0.05)
    Z = kernel.from_normalized(grid_points([2, 2], 20, seed=3))
    np.testing.assert_allclose(kernel.hamiltonian(kernel(Z)), kernel.hamiltonian(Z), atol=1e-8)
    report = kernel_verify(kernel, points=200, fd_points=10)
    assert report.symplectic_residual < 1e-6
    assert report.outside_moved == 0
    assert report.inner_points > 0 and report.inner_mismatch == 0
    assert report.fd_error < 1e-4
