#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for budgets, rotations, realizable-sequence algebra and the perturbation constructions.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocyclelab.dynamics import constant_orbit, orbit_segment, witness_instance
from cocyclelab.errors import AngleBudgetError, HorizonError, SegmentMismatchError, WitnessError, \
    HypothesisError, InvariantViolation
from cocyclelab.futil import save_to_file, load_from_file
from cocyclelab.linalg import Subspace, SymplecticForm, SYMPLECTIC, GENERAL_LINEAR, group_residual, \
    standard_j, sin_angle, norm
from cocyclelab.perturb import compute_budget, budget_for, symplectic_budget, rotation_to, trivial, concat, \
    invert, interchange, interchange_symplectic, nested_rotation_sequence, eccentricity_diagnostic, \
    lower_norm_sequence, CASE1, CASE2, CASE3, UNCHANGED, EXCHANGE, MAX_ALPHA


def axes(d, k):
    return Subspace.coordinate(d, range(k)), Subspace.coordinate(d, range(k, d))


def test_budget_constants():
    budget = compute_budget(2.0, 2.0, 0.1)
    alpha = np.arcsin(0.05 / np.sqrt(2.0))
    assert budget.epsilon1 == pytest.approx(0.05)
    assert budget.alpha == pytest.approx(alpha)
    assert budget.K == pytest.approx(max(1.0 / np.sin(alpha) ** 2, 4.0))
    assert budget.C == pytest.approx(8.0 * budget.K / np.sin(alpha) ** 2)
    assert budget.m_min == math.ceil(2.0 * budget.C / budget.alpha)
    assert not budget.clamped and not budget.symplectic


@pytest.mark.parametrize('epsilon,m_min', [(0.5, 2834), (1.2, 31)])
def test_identity_budget_horizon(epsilon, m_min):
    assert budget_for(constant_orbit(np.eye(2), 3), epsilon).m_min == m_min


def test_budget_clamp_and_domain():
    assert compute_budget(1.0, 1.0, 5.0).alpha == MAX_ALPHA
    assert compute_budget(1.0, 1.0, 5.0).clamped
    with pytest.raises(ValueError):
        compute_budget(1.0, 1.0, 0.0)


def test_symplectic_budget_constants():
    budget = symplectic_budget(compute_budget(2.0, 2.0, 1.0), SymplecticForm(4))
    alpha_u = 2.0 * np.arcsin(0.5 / (2.0 * np.sqrt(2.0)))
    assert budget.symplectic
    assert budget.alpha_u == pytest.approx(alpha_u)
    assert budget.E2 == pytest.approx(8.0 * budget.K_s / np.sin(alpha_u) ** 4)
    assert budget.m_min_s == math.ceil(2.0 * np.pi / budget.beta)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 2.0 * np.pi), st.floats(1e-4, 0.3))
def test_planar_rotation_distance(phi, theta):
    v1 = np.array([np.cos(phi), np.sin(phi), 0.0])
    v2 = np.array([np.cos(phi + theta), np.sin(phi + theta), 0.0])
    R = rotation_to(v1, v2, GENERAL_LINEAR, 0.5)
    assert sin_angle(R @ v1, v2) < 1e-9
    assert norm(R - np.eye(3)) == pytest.approx(2.0 * np.sin(theta / 2.0), rel=1e-6)
    np.testing.assert_allclose(R @ [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], atol=1e-12)


def test_unitary_rotation_is_symplectic():
    v1 = np.array([1.0, 0.0, 0.0, 0.0])
    v2 = np.array([np.cos(0.2), 0.0, np.sin(0.2) * 0.6, np.sin(0.2) * 0.8])
    R = rotation_to(v1, v2, SYMPLECTIC, 1.0)
    assert sin_angle(R @ v1, v2) < 1e-9
    assert group_residual(R, SYMPLECTIC) < 1e-10
    J = standard_j(2)
    np.testing.assert_allclose(R @ J, J @ R, atol=1e-12)


def test_rotation_outside_budget():
    with pytest.raises(AngleBudgetError, match='angle exceeds budget'):
        rotation_to([1.0, 0.0], [1.0, 1.0], GENERAL_LINEAR, 0.5)


def test_concat_and_invert():
    orbit = constant_orbit(np.diag([2.0, 0.5]), 10)
    head, tail = trivial(orbit.sub_segment(0, 5)), trivial(orbit.sub_segment(5, 10))
    joined = concat(head, tail)
    np.testing.assert_allclose(joined.matrices, orbit.matrices)
    assert joined.provenance == [UNCHANGED] * 10
    np.testing.assert_allclose(invert(joined).product() @ joined.product(), np.eye(2), atol=1e-12)
    with pytest.raises(SegmentMismatchError):
        concat(head, trivial(orbit.sub_segment(6, 10)))


def test_check_reports_budget_violation():
    seq = trivial(constant_orbit(np.eye(2), 4), epsilon=0.1)
    seq.matrices[2] = np.diag([1.5, 1.0 / 1.5])
    seq.distances = np.linalg.norm(seq.matrices - seq.base, 2, axis=(1, 2))
    with pytest.raises(InvariantViolation, match='step 2'):
        seq.check()


def test_interchange_close_pair_uses_one_rotation():
    orbit = constant_orbit(np.eye(2), 5)
    E, F = Subspace([1.0, 0.0]), Subspace([np.cos(0.01), np.sin(0.01)])
    seq = interchange(orbit, E, F, budget_for(orbit, 0.1), strict=False)
    assert seq.diagnostics['case'] == 1
    assert seq.provenance.count(CASE1) == 1
    assert seq.residual() < 1e-8
    assert seq.distances.max() < 0.1


def test_interchange_window_ratio_uses_two_rotations():
    orbit = constant_orbit(np.diag([2.0, 0.5]), 6)
    E, F = Subspace([0.0, 1.0]), Subspace([1.0, 0.0])
    seq = interchange(orbit, E, F, budget_for(orbit, 1.0), strict=False)
    assert seq.diagnostics['case'] == 2
    assert (seq.diagnostics['k'], seq.diagnostics['ell']) == (0, 2)
    assert seq.provenance[:2] == [CASE2, CASE2]
    assert seq.residual() < 1e-8
    assert sin_angle(seq.w, [1.0, 0.0]) < 1e-9


def test_interchange_identity_advance():
    orbit = constant_orbit(np.eye(2), 31)
    E, F = axes(2, 1)
    seq = interchange(orbit, E, F, budget_for(orbit, 1.2))
    assert seq.diagnostics['case'] == 3
    assert seq.diagnostics['arrived']
    assert seq.provenance.count(CASE3) == 2
    assert sin_angle(seq.push(seq.v), [0.0, 1.0]) < 1e-8
    assert seq.distances.max() < 1.2


def test_interchange_horizon_enforced():
    orbit = constant_orbit(np.eye(2), 30)
    with pytest.raises(HorizonError) as err:
        interchange(orbit, *axes(2, 1), budget=budget_for(orbit, 1.2))
    assert err.value.m_min == 31


def test_symplectic_interchange_keeps_group():
    orbit = constant_orbit(np.diag([0.5, 0.5, 2.0, 2.0]), 6, group=SYMPLECTIC)
    E, F = axes(4, 2)
    seq = interchange_symplectic(orbit, E, F, budget_for(orbit, 1.0), strict=False)
    assert seq.group == SYMPLECTIC
    assert seq.diagnostics['case'] == 2
    assert max(group_residual(mat, SYMPLECTIC) for mat in seq.matrices) < 1e-9
    assert seq.residual() < 1e-8
    assert seq.distances.max() < 1.0


def test_witness_norm_lowering():
    system, cocycle, x, n = witness_instance(24, 12)
    orbit = orbit_segment(system, cocycle, x, n)
    seq, report = lower_norm_sequence(orbit, 1, 24, budget_for(orbit, 1.0), m=12, strict=False)
    assert report.unperturbed == pytest.approx(48 * np.log(2.0) / 60, abs=1e-9)
    assert report.target == pytest.approx(0.05)
    assert report.lowered and report.achieved < 0.05
    assert report.v_component <= 1e-6
    assert seq.n == n
    assert EXCHANGE in seq.provenance
    assert seq.distances.max() < 1.0


def test_norm_lowering_rejects_block_keeping_fast_direction(monkeypatch):
    system, cocycle, x, n = witness_instance(24, 12)
    orbit = orbit_segment(system, cocycle, x, n)
    monkeypatch.setattr('cocyclelab.perturb.interchange',
                        lambda block, E, F, budget, strict=True: trivial(block, budget.epsilon))
    with pytest.raises(InvariantViolation, match='relative V component'):
        lower_norm_sequence(orbit, 1, 24, budget_for(orbit, 1.0), m=12, strict=False)


def test_norm_lowering_needs_witness():
    orbit = constant_orbit(np.diag([2.0, 0.5]), 20)
    with pytest.raises(WitnessError):
        lower_norm_sequence(orbit, 1, 5, budget_for(orbit, 1.0), m=5, strict=False)


def test_nested_rotations_preserve_ellipse():
    orbit = constant_orbit(np.diag([2.0, 0.5]), 3)
    budget = budget_for(orbit, 2.0)
    seq = nested_rotation_sequence(orbit, None, None, [0.01] * 3, budget)
    assert seq.diagnostics['ellipse_residual'] < 1e-8
    assert seq.provenance == [CASE3] * 3
    with pytest.raises(AngleBudgetError):
        nested_rotation_sequence(orbit, None, None, [0.5] * 3, budget)


def test_eccentricity_bounded_for_identity():
    orbit = constant_orbit(np.eye(3), 10)
    report = eccentricity_diagnostic(orbit, Subspace.coordinate(3, [0, 1]), Subspace.coordinate(3, [2]), 0.3, 2.0)
    np.testing.assert_allclose(report.distortion, 1.0, atol=1e-9)
    assert report.bound == pytest.approx(16.0 / np.sin(0.3) ** 6)


def test_eccentricity_needs_non_domination():
    orbit = constant_orbit(np.diag([2.0, 0.5]), 10)
    with pytest.raises(HypothesisError, match='non-domination'):
        eccentricity_diagnostic(orbit, *axes(2, 1), alpha=0.3, K=2.0)


def test_sequence_pickle(tmp_path):
    orbit = constant_orbit(np.eye(2), 5)
    E, F = Subspace([1.0, 0.0]), Subspace([np.cos(0.01), np.sin(0.01)])
    seq = interchange(orbit, E, F, budget_for(orbit, 0.1), strict=False)
    path = str(tmp_path / 'seq.pickle.gz')
    save_to_file(seq, path)
    loaded = load_from_file(path)
    np.testing.assert_array_equal(loaded.matrices, seq.matrices)
    assert loaded.provenance == seq.provenance
