#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for base systems, cocycle families and orbit segments.
"""

import io
import sys

import numpy as np
import pytest

from cocyclelab.config import Config
from cocyclelab.dynamics import CircleRotation, TorusTranslation, CatMap, SymbolicSequence, \
    ConstantCocycle, SchrodingerCocycle, ShearRotateCocycle, WindingCocycle, TableCocycle, StepAngle, \
    CosinePotential, TabulatedPotential, OrbitSource, orbit_segment, constant_orbit, witness_instance, \
    check_matrices, schrodinger_matrix, system_from_config, cocycle_from_config, start_point
from cocyclelab.errors import GroupViolationError, ConfigError, NonInvertibleError
from cocyclelab.linalg import SPECIAL_LINEAR, GENERAL_LINEAR, SYMPLECTIC
from cocyclelab.logf import set_log_stream
from cocyclelab.rnd import generator


@pytest.mark.parametrize('system,x', [(CircleRotation(0.3819660112501051), 0.2),
                                      (TorusTranslation([0.13, 0.29]), np.array([0.31, 0.52])),
                                      (CatMap(), np.array([0.125, 0.25])),
                                      (SymbolicSequence([0.1, 0.2, 0.3]), 1)])
def test_step_back_inverts_step(system, x):
    assert system.same_state(system.step_back(system.step(x)), x)
    forward = system.orbit(x, 5)
    backward = system.backward_orbit(forward[-1], 5)
    for a, b in zip(forward, backward):
        assert system.same_state(a, b)


def test_circle_orbit_matches_steps():
    system = CircleRotation(0.6180339887498949)
    x = 0.1
    states = [x]
    for _ in range(10):
        x = system.step(x)
        states.append(x)
    np.testing.assert_allclose(system.orbit(0.1, 10), states, atol=1e-12)


def test_schrodinger_transfer_matrix():
    cocycle = SchrodingerCocycle(3.0, CosinePotential(0.5))
    system = CircleRotation(0.5)
    M = cocycle.matrix(system, 0.0)
    np.testing.assert_allclose(M, schrodinger_matrix(3.0, CosinePotential(0.5), 0.0))
    np.testing.assert_allclose(M, [[2.0, -1.0], [1.0, 0.0]])
    assert np.linalg.det(M) == pytest.approx(1.0)
    assert cocycle.group == SPECIAL_LINEAR


def test_tabulated_potential_is_periodic_interpolation():
    V = TabulatedPotential([0.0, 1.0])
    np.testing.assert_allclose(V([0.0, 0.25, 0.5, 0.75, 1.0]), [0.0, 0.5, 1.0, 0.5, 0.0])


def test_shear_rotate_steps():
    cocycle = ShearRotateCocycle([2.0, 0.5], StepAngle([0.0, 0.5], [0.0, np.pi / 2.0]))
    mats = cocycle.evaluate(np.array([0.25, 0.75]))
    np.testing.assert_allclose(mats[0], np.diag([2.0, 0.5]), atol=1e-15)
    np.testing.assert_allclose(mats[1], [[0.0, -0.5], [2.0, 0.0]], atol=1e-15)
    assert cocycle.group == SPECIAL_LINEAR


def test_winding_loop_closes():
    cocycle = WindingCocycle([2.0, 0.5], 1)
    mats = cocycle.evaluate(np.array([0.0, 1.0]))
    np.testing.assert_allclose(mats[0], mats[1], atol=1e-12)


def test_table_cocycle_needs_symbolic_base():
    cocycle = TableCocycle([np.eye(2), 2.0 * np.eye(2)])
    assert cocycle.group == GENERAL_LINEAR
    np.testing.assert_allclose(cocycle.matrices(SymbolicSequence([0.0, 0.5]), [1, 2])[0], 2.0 * np.eye(2))
    with pytest.raises(ValueError):
        cocycle.matrices(CircleRotation(0.3), np.array([0.1]))


def test_group_violation_reported_with_step():
    mats = np.array([np.eye(2), np.diag([2.0, 1.0])])
    with pytest.raises(GroupViolationError, match='step 1'):
        check_matrices(mats, SPECIAL_LINEAR)
    with pytest.raises(GroupViolationError, match='step 4'):
        check_matrices(np.array([np.eye(2), np.diag([1.0, 2.0])]), SYMPLECTIC, offset=3)


def test_special_linear_drift_is_reprojected():
    mats = np.array([np.diag([2.0, 0.5 * (1.0 + 1e-8)])])
    fixed = check_matrices(mats, SPECIAL_LINEAR)
    assert abs(np.linalg.det(fixed[0]) - 1.0) < 1e-12


def test_orbit_segment_products():
    rng = generator(2)
    mats = rng.normal(size=(30, 3, 3))
    system = SymbolicSequence(np.arange(30) / 30.0)
    orbit = orbit_segment(system, TableCocycle(mats), 0, 30)
    assert orbit.n == 30 and orbit.dim == 3
    for j in (1, 7, 30):
        prod = orbit.product(j)
        np.testing.assert_allclose(orbit.recompose(j), prod, rtol=0.0, atol=1e-9 * np.linalg.norm(prod))
    assert orbit.log_norm() == pytest.approx(np.log(np.linalg.norm(orbit.product(), 2)))
    sub = orbit.sub_segment(5, 12)
    np.testing.assert_allclose(sub.product(), orbit.product(12, 5))


def test_log_norm_without_overflow():
    orbit = constant_orbit(np.diag([10.0, 0.1]), 1000)
    assert orbit.log_norm() == pytest.approx(1000 * np.log(10.0))


def test_factor_clamp_is_reported():
    orbit = constant_orbit(np.array([[0.5, 1.0], [0.0, 2.0]]), 600)
    buf = io.StringIO()
    set_log_stream(buf)
    try:
        orbit.factored(600)
    finally:
        set_log_stream(sys.stderr)
    assert 'factored product clamped from step' in buf.getvalue()


def test_orbit_source_chunks_match_segment():
    source = OrbitSource(CircleRotation(0.6180339887498949), WindingCocycle([2.0, 0.5], 1), 0.3)
    chunks = np.concatenate(list(source.matrix_chunks(25, chunk=7)))
    np.testing.assert_allclose(chunks, source.segment(25).matrices, atol=1e-12)
    later = source.advance(10)
    np.testing.assert_allclose(later.future_matrices(5), source.segment(15).matrices[10:], atol=1e-12)
    np.testing.assert_allclose(later.past_matrices(10), source.segment(10).matrices, atol=1e-12)


def test_witness_instance_layout():
    system, cocycle, x, n = witness_instance(24, 12)
    assert n == 60
    orbit = orbit_segment(system, cocycle, x, n)
    window = orbit.product(36, 24)
    np.testing.assert_allclose(np.abs(window), np.eye(2), atol=1e-9)
    with pytest.raises(ValueError):
        witness_instance(4, 3)


def test_factories():
    cfg = Config(config={'system': 'torus-translation', 'cocycle': 'schrodinger', 'E': 2.5,
                         'V': 'cosine', 'lambda': 0.5, 'x': [0.1, 0.2]}).resolve()
    system, cocycle = system_from_config(cfg), cocycle_from_config(cfg)
    assert isinstance(system, TorusTranslation)
    assert cocycle.energy == 2.5 and cocycle.potential.coupling == 0.5
    np.testing.assert_allclose(start_point(cfg, system), [0.1, 0.2])


def test_factory_errors_name_the_key():
    with pytest.raises(ConfigError, match='matrix'):
        cocycle_from_config(Config(config={'cocycle': 'constant'}).resolve())
    with pytest.raises(ConfigError) as err:
        system_from_config(Config(config={'system': 'horseshoe'}).resolve())
    assert err.value.key == 'system'


def test_constant_cocycle_group_inference():
    assert ConstantCocycle(np.diag([2.0, 0.5])).group == SPECIAL_LINEAR
    assert ConstantCocycle(np.diag([2.0, 1.0])).group == GENERAL_LINEAR
    with pytest.raises(NonInvertibleError, match='constant cocycle matrix'):
        ConstantCocycle([[1.0, 2.0], [2.0, 4.0]])
