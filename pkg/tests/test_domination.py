#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for window ratios, domination scales, classification and the jump functional.
"""

import numpy as np
import pytest

from cocyclelab.domination import propagate_splitting, oseledets_frames, window_ratios, domination_test, \
    min_domination_m, classify_points, jump_estimate, symplectic_hyperbolicity_check, \
    lagrangian_oseledets_check, DOMINATED, GAMMA, UNRESOLVED
from cocyclelab.dynamics import CircleRotation, ConstantCocycle, OrbitSource, constant_orbit
from cocyclelab.errors import SplittingCollapseError, MarginError
from cocyclelab.linalg import Subspace, SymplecticForm

GOLDEN = 0.6180339887498949


def rotation(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def axes(d, k):
    return Subspace.coordinate(d, range(k)), Subspace.coordinate(d, range(k, d))


def test_dominated_diagonal_at_scale_one():
    source = OrbitSource(CircleRotation(GOLDEN), ConstantCocycle(np.diag([2.0, 0.5])), 0.2)
    orbit, frames = oseledets_frames(source, 1, 45, horizon=200)
    report = domination_test(orbit, None, None, 1, windows=40, frames=frames)
    assert report.dominated and report.verdict == 1
    np.testing.assert_allclose(report.ratios, 0.25, rtol=1e-9)
    assert report.min_angle == pytest.approx(np.pi / 2.0, abs=1e-9)
    assert report.to_dict()['max_ratio'] == pytest.approx(0.25)


def test_weak_splitting_needs_larger_scale():
    orbit = constant_orbit(np.diag([1.2, 1.0 / 1.2]), 30)
    E, F = axes(2, 1)
    assert not domination_test(orbit, E, F, 1).dominated
    assert min_domination_m(orbit, E, F, 5) == 2


def test_rotation_is_never_dominated():
    orbit = constant_orbit(rotation(0.7), 40)
    E, F = axes(2, 1)
    frames = propagate_splitting(orbit, E, F)
    np.testing.assert_allclose(window_ratios(frames, 3, 30), 1.0, rtol=1e-9)
    assert min_domination_m(orbit, E, F, 10) is None


def test_window_range_checked():
    orbit = constant_orbit(np.diag([2.0, 0.5]), 10)
    frames = propagate_splitting(orbit, *axes(2, 1))
    with pytest.raises(ValueError):
        window_ratios(frames, 4, 7)


def test_splitting_collapse():
    orbit = constant_orbit(np.diag([2.0, 0.5]), 5)
    line = Subspace([1.0, 0.0])
    with pytest.raises(SplittingCollapseError, match='step 0'):
        propagate_splitting(orbit, line, line)


def test_classification_of_hyperbolic_constant():
    cocycle = ConstantCocycle(np.diag([2.0, 0.5]))
    report = classify_points(CircleRotation(GOLDEN), cocycle, 1, 5, 4, 100, seed=1)
    assert report.fractions[DOMINATED] == 1.0
    assert all(rec['m'] == 1 for rec in report.records)
    with pytest.raises(ValueError):
        classify_points(CircleRotation(GOLDEN), cocycle, 2, 5, 4, 100)


def test_jump_vanishes_for_rotation():
    report = jump_estimate(CircleRotation(GOLDEN), ConstantCocycle(rotation(0.7)), 1, 5, 4, 100, seed=2)
    assert report.value == 0.0
    assert report.gamma_fraction == 0.0
    assert report.unresolved_fraction == 1.0
    assert report.integrated_exponent == pytest.approx(0.0, abs=1e-9)
    assert 'records' not in report.to_dict()


def test_jump_bound_for_dominated_cocycle():
    report = jump_estimate(CircleRotation(GOLDEN), ConstantCocycle(np.diag([2.0, 0.5])), 1, 5, 4, 100)
    assert report.value == 0.0
    assert report.integrated_exponent == pytest.approx(np.log(2.0), abs=0.02)
    assert report.bound == pytest.approx(report.integrated_exponent)
    assert {rec['label'] for rec in report.records} <= {DOMINATED, GAMMA, UNRESOLVED}


def test_symplectic_jump_needs_half_dimension():
    cocycle = ConstantCocycle(np.diag([2.0, 1.0, 0.5, 1.0]))
    with pytest.raises(ValueError):
        jump_estimate(CircleRotation(GOLDEN), cocycle, 1, 5, 4, 100, symplectic=True)


def test_symplectic_domination_gives_hyperbolicity():
    form = SymplecticForm(4)
    orbit = constant_orbit(np.diag([4.0, 4.0, 0.25, 0.25]), 20)
    E_plus, E_minus = axes(4, 2)
    report = symplectic_hyperbolicity_check(orbit, E_plus, E_minus, 1, form)
    assert report.violations == 0
    assert report.C == pytest.approx(1.0)
    assert report.max_ratio == pytest.approx(1.0 / 16.0)
    assert report.min_expansion == pytest.approx(4.0)
    assert report.max_contraction == pytest.approx(0.25)


def test_symplectic_margin_precondition():
    form = SymplecticForm(4)
    orbit = constant_orbit(np.diag([1.5, 1.5, 1.0 / 1.5, 1.0 / 1.5]), 20)
    with pytest.raises(MarginError):
        symplectic_hyperbolicity_check(orbit, *axes(4, 2), m=1, form=form)


def test_oseledets_spaces_are_lagrangian():
    source = OrbitSource(CircleRotation(GOLDEN), ConstantCocycle(np.diag([4.0, 4.0, 0.25, 0.25])), 0.1)
    report = lagrangian_oseledets_check(source, 200, SymplecticForm(4))
    assert report.lambda_q == pytest.approx(np.log(4.0), abs=0.02)
    assert report.isotropic
