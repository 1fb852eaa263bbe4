#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Domination along orbits: window ratios of a splitting E + F, smallest dominating scale,
sampled classification into dominated / never-dominated points, the jump functional
and the symplectic domination => hyperbolicity check.
"""

from collections import namedtuple

import numpy as np

from cocyclelab.dynamics import OrbitSource
from cocyclelab.errors import SplittingCollapseError, MarginError, UnresolvedMultiplicityError, \
    NumericalError
from cocyclelab.linalg import TRANSVERSAL_TOL
from cocyclelab.logf import log_debug, log_info, log_warn
from cocyclelab.lyapunov import oseledets_splitting, generic_frame, _reorth
from cocyclelab.parallel import parallel_map
from cocyclelab.rnd import generator

DOMINATION_THRESHOLD = 0.5
GAP_FLOOR = 1e-6

DOMINATED = 'dominated'
GAMMA = 'gamma'
UNRESOLVED = 'unresolved'


class OrbitFrames(namedtuple('OrbitFrames', ['E', 'F', 'RE', 'RF'])):
    """Orthonormal bases E[j], F[j] (j = 0..n) of the propagated splitting and the
    restricted one-step matrices RE[j] = E[j+1]^T A_j E[j], RF[j] likewise."""

    @property
    def n(self):
        return len(self.RE)

    def angles(self):
        """Smallest principal angle between E[j] and F[j], for every j."""
        cos = np.linalg.svd(np.swapaxes(self.E, 1, 2) @ self.F, compute_uv=False)[:, 0]
        small, large = (self.E, self.F) if self.E.shape[2] <= self.F.shape[2] else (self.F, self.E)
        resid = small - large @ (np.swapaxes(large, 1, 2) @ small)
        sin = np.linalg.svd(resid, compute_uv=False)[:, -1]
        return np.arctan2(np.minimum(sin, 1.0), np.minimum(cos, 1.0))


def forward_frames(matrices, basis):
    n = len(matrices)
    k = basis.shape[1]
    Q = np.empty((n + 1,) + basis.shape)
    R = np.empty((n, k, k))
    Q[0] = basis
    for j, mat in enumerate(matrices):
        Q[j + 1], T = np.linalg.qr(mat @ Q[j])
        signs = np.where(np.diag(T) < 0.0, -1.0, 1.0)
        Q[j + 1] *= signs[None, :]
        R[j] = signs[:, None] * T
    return Q, R


def backward_frames(matrices, basis):
    """Frames F[j] with F[n] = basis and F[j] spanning A_j^-1 F[j+1]; RF[j] = F[j+1]^T A_j F[j]."""
    n = len(matrices)
    k = basis.shape[1]
    Q = np.empty((n + 1,) + basis.shape)
    R = np.empty((n, k, k))
    Q[n] = basis
    inverses = np.linalg.inv(matrices)
    for j in range(n - 1, -1, -1):
        Q[j], T = np.linalg.qr(inverses[j] @ Q[j + 1])
        signs = np.where(np.diag(T) < 0.0, -1.0, 1.0)
        Q[j] *= signs[None, :]
        R[j] = np.linalg.inv(signs[:, None] * T)
    return Q, R


def check_transversal(frames):
    """@raise SplittingCollapseError: at the first step where E_j + F_j degenerates"""
    joint = np.concatenate([frames.E, frames.F], axis=2)
    sigma = np.linalg.svd(joint, compute_uv=False)[:, -1]
    bad = np.nonzero(sigma <= TRANSVERSAL_TOL)[0]
    if len(bad):
        raise SplittingCollapseError(int(bad[0]), float(sigma[bad[0]]))


def propagate_splitting(orbit, E, F):
    """Push bases of E and F forward along the orbit with QR re-orthonormalization at every
    step.

    @rtype: OrbitFrames
    @raise SplittingCollapseError: the propagated splitting loses transversality
    """
    QE, RE = forward_frames(orbit.matrices, E.basis)
    QF, RF = forward_frames(orbit.matrices, F.basis)
    frames = OrbitFrames(QE, QF, RE, RF)
    check_transversal(frames)
    return frames


def oseledets_frames(source, p, n, horizon=1000):
    """Two-sided frames of the splitting (top-p Oseledets sum, bottom d-p sum) along the
    length-n orbit of the source: the fast space is pushed forward from `horizon' steps in
    the past, the slow space pulled back from `horizon' steps beyond the orbit end.

    @rtype: tuple
    @return: (orbit segment, OrbitFrames)
    """
    d = source.dim
    orbit = source.segment(n)
    Q = generic_frame(d)
    for mat in source.past_matrices(horizon):
        Q, _ = _reorth(mat @ Q, 1)
    QE, RE = forward_frames(orbit.matrices, Q[:, :p])
    beyond = source.advance(n).future_matrices(horizon)
    Q = generic_frame(d)
    for mat in np.linalg.inv(beyond)[::-1]:
        Q, _ = _reorth(mat @ Q, 1)
    QF, RF = backward_frames(orbit.matrices, Q[:, :d - p])
    frames = OrbitFrames(QE, QF, RE, RF)
    check_transversal(frames)
    return orbit, frames


def window_log_norms(blocks, m, windows, inverse=False):
    """log ||blocks[n+m-1] ... blocks[n]|| for n < windows (or of the inverse product
    blocks[n]^-1 ... blocks[n+m-1]^-1 when inverse is set)."""
    k = blocks.shape[-1]
    mats = np.linalg.inv(blocks) if inverse else blocks
    prod = np.broadcast_to(np.eye(k), (windows, k, k)).copy()
    logs = np.zeros(windows)
    for i in range(m):
        step = mats[i:i + windows]
        prod = prod @ step if inverse else step @ prod
        scale = np.abs(prod).max(axis=(1, 2))
        prod /= scale[:, None, None]
        logs += np.log(scale)
    return logs + np.log(np.linalg.norm(prod, 2, axis=(1, 2)))


def window_ratios(frames, m, windows):
    """r_n(m) = ||A^m|F_n|| / m(A^m|E_n) for n = 0, ..., windows - 1."""
    if windows < 1 or windows + m > frames.n:
        raise ValueError('need 1 <= windows and windows + m <= n (windows %d, m %d, n %d)'
                         % (windows, m, frames.n))
    log_f = window_log_norms(frames.RF, m, windows)
    log_e_inv = window_log_norms(frames.RE, m, windows, inverse=True)
    return np.exp(log_f + log_e_inv)


class DominationReport(namedtuple('DominationReport', ['p', 'm', 'ratios', 'dominated', 'window_range',
                                                       'min_angle', 'verdict'])):
    """Window ratios of one scale m; `verdict' is the smallest dominating scale found by a
    scan (None: not m-dominated up to the scanned m_max)."""

    def to_dict(self):
        return {'p': self.p, 'm': self.m, 'dominated': self.dominated, 'window_range': list(self.window_range),
                'max_ratio': float(np.max(self.ratios)), 'min_angle': self.min_angle,
                'verdict': self.verdict}


def domination_test(orbit, E, F, m, windows=None, frames=None):
    """Test m-domination of E + F along the orbit: every window ratio must be <= 1/2.

    @param frames: precomputed L{OrbitFrames} (E and F are then only used for the index)
    @rtype: DominationReport
    """
    if frames is None:
        frames = propagate_splitting(orbit, E, F)
    windows = orbit.n - m if windows is None else windows
    ratios = window_ratios(frames, m, windows)
    dominated = bool(np.all(ratios <= DOMINATION_THRESHOLD))
    min_angle = float(frames.angles()[:windows + m + 1].min())
    return DominationReport(p=frames.E.shape[2], m=m, ratios=ratios, dominated=dominated, window_range=(0, windows),
                            min_angle=min_angle, verdict=m if dominated else None)


def min_domination_m(orbit, E, F, m_max, windows=None, frames=None):
    """Smallest m <= m_max for which the splitting is m-dominated on the tested windows
    (None if there is none)."""
    if frames is None:
        frames = propagate_splitting(orbit, E, F)
    windows = orbit.n - m_max if windows is None else windows
    for m in range(1, m_max + 1):
        ratios = window_ratios(frames, m, windows)
        if np.all(ratios <= DOMINATION_THRESHOLD):
            return m
    return None


# --- classification and jump --------------------------------------------------------------

class ClassificationReport(namedtuple('ClassificationReport', ['p', 'm_max', 'horizon', 'fractions',
                                                               'records'])):
    """Empirical measures of the dominated / never-dominated / unresolved classes.
    A finite m_max scan only bounds the never-dominated set from outside."""

    def to_dict(self):
        return {'p': self.p, 'm_max': self.m_max, 'horizon': self.horizon, 'fractions': self.fractions,
                'records': self.records,
                'note': 'never-dominated class approximated by "not dominated up to m_max"'}


def classify_point(source, p, m_max, horizon):
    """Classify one start point.

    @rtype: dict
    @return: record with label, exponent gap, Lambda_p and the dominating scale
    """
    record = {'x': np.asarray(source.x).tolist(), 'label': UNRESOLVED, 'gap': None, 'lambda_p': None,
              'lambda_p1': None, 'Lambda_p': None, 'm': None}
    try:
        approx = oseledets_splitting(source, horizon=horizon)
        lam = np.asarray(approx.spectrum)
        gap = float(lam[p - 1] - lam[p])
        record.update(gap=gap, lambda_p=float(lam[p - 1]), lambda_p1=float(lam[p]),
                      Lambda_p=float(lam[:p].sum()))
        if gap <= max(approx.cluster_tol, GAP_FLOOR):
            return record
        orbit, frames = oseledets_frames(source, p, horizon + m_max, horizon)
        m = min_domination_m(orbit, None, None, m_max, windows=horizon, frames=frames)
        record['m'] = m
        record['label'] = DOMINATED if m is not None else GAMMA
    except NumericalError as exc:
        log_debug('classify_point failed at', record['x'], str(exc))
        record['label'] = UNRESOLVED
    return record


def classify_points(system, cocycle, p, m_max, samples, horizon, seed=0, threads=None):
    """Sample start points and classify each as dominated at index p (some m <= m_max),
    never-dominated-like or unresolved (exponent gap below resolution).

    @rtype: ClassificationReport
    """
    if not 1 <= p <= cocycle.dim - 1:
        raise ValueError('p = %d outside [1, %d]' % (p, cocycle.dim - 1))
    starts = system.sample(generator(seed), samples)
    records = parallel_map(lambda x: classify_point(OrbitSource(system, cocycle, x), p, m_max, horizon),
                           list(starts), threads)
    fractions = {label: sum(1 for r in records if r['label'] == label) / float(samples)
                 for label in (DOMINATED, GAMMA, UNRESOLVED)}
    log_info('classification p=%d: %s' % (p, ', '.join('%s %.3f' % (k, v) for k, v in sorted(fractions.items()))))
    return ClassificationReport(p=p, m_max=m_max, horizon=horizon, fractions=fractions, records=records)


class JumpReport(namedtuple('JumpReport', ['p', 'value', 'stderr', 'gamma_fraction', 'unresolved_fraction',
                                          'integrated_exponent', 'bound', 'symplectic', 'records'])):
    """Monte Carlo jump functional with the reachable upper bound LE_p - J_p; `records' are the
    per-sample classification records."""

    def to_dict(self):
        res = dict(self._asdict())
        del res['records']
        return res


def jump_estimate(system, cocycle, p, m_max, samples, horizon, seed=0, symplectic=False, threads=None):
    """J_p = (1/samples) sum over never-dominated-like samples of (lambda_p - lambda_{p+1}) / 2.
    In the symplectic variant p must be half the dimension and the contribution is lambda_q.

    @rtype: JumpReport
    """
    if symplectic and 2 * p != cocycle.dim:
        raise ValueError('symplectic jump needs p = d / 2')
    report = classify_points(system, cocycle, p, m_max, samples, horizon, seed, threads)
    contrib = []
    integrated = []
    for rec in report.records:
        if rec['Lambda_p'] is not None:
            integrated.append(rec['Lambda_p'])
        if rec['label'] != GAMMA:
            contrib.append(0.0)
        elif symplectic:
            contrib.append(max(rec['lambda_p'], 0.0))
        else:
            contrib.append(rec['gap'] / 2.0)
    contrib = np.array(contrib)
    value = float(contrib.mean())
    stderr = float(contrib.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    le_p = float(np.mean(integrated)) if integrated else 0.0
    return JumpReport(p=p, value=value, stderr=stderr, gamma_fraction=report.fractions[GAMMA],
                      unresolved_fraction=report.fractions[UNRESOLVED], integrated_exponent=le_p,
                      bound=le_p - value, symplectic=symplectic, records=report.records)


# --- symplectic checks -------------------------------------------------------------------

class HyperbolicityReport(namedtuple('HyperbolicityReport', ['m', 'windows', 'C', 'min_angle', 'max_ratio',
                                                             'min_expansion', 'max_contraction',
                                                             'product_range', 'violations'])):
    def to_dict(self):
        return dict(self._asdict())


def symplectic_hyperbolicity_check(orbit, E_plus, E_minus, m, form, windows=None):
    """Domination of a Lagrangian splitting with margin ratio < 1/(4C), C = C_omega^2 / sin alpha,
    forces m(A^m|E+) > 2 and ||A^m|E-|| < 1/2; also checks C^-1 <= m(A^m|E+) ||A^m|E-|| <= C.

    @rtype: HyperbolicityReport
    @raise MarginError: the strengthened domination margin does not hold (precondition)
    """
    form.check_lagrangian(E_plus, E_minus)
    frames = propagate_splitting(orbit, E_plus, E_minus)
    windows = orbit.n - m if windows is None else windows
    alpha = float(frames.angles()[:windows + m + 1].min())
    C = form.C_omega ** 2 / np.sin(alpha)
    ratios = window_ratios(frames, m, windows)
    if ratios.max() >= 1.0 / (4.0 * C):
        raise MarginError(float(ratios.max()), 1.0 / (4.0 * C))
    expansion = np.exp(-window_log_norms(frames.RE, m, windows, inverse=True))
    contraction = np.exp(window_log_norms(frames.RF, m, windows))
    products = expansion * contraction
    violations = int(np.sum(expansion <= 2.0) + np.sum(contraction >= 0.5)
                     + np.sum(products < 1.0 / C * (1 - 1e-12)) + np.sum(products > C * (1 + 1e-12)))
    if violations:
        log_warn('symplectic hyperbolicity check: %d violations' % violations)
    return HyperbolicityReport(m=m, windows=windows, C=float(C), min_angle=alpha, max_ratio=float(ratios.max()),
                               min_expansion=float(expansion.min()), max_contraction=float(contraction.max()),
                               product_range=(float(products.min()), float(products.max())),
                               violations=violations)


class LagrangianReport(namedtuple('LagrangianReport', ['lambda_q', 'plus_residual', 'minus_residual',
                                                       'isotropic'])):
    def to_dict(self):
        return dict(self._asdict())


def lagrangian_oseledets_check(source, horizon, form, tol=1e-4):
    """Isotropy of the numerically estimated E+ (positive exponents) and E- (negative).

    @rtype: LagrangianReport
    @raise UnresolvedMultiplicityError: lambda_q not resolved from zero
    """
    q = form.q
    approx = oseledets_splitting(source, horizon=horizon)
    lam_q = float(approx.spectrum[q - 1])
    resolution = max(approx.cluster_tol, 10.0 * float(np.max(approx.stderr)))
    if lam_q <= resolution:
        raise UnresolvedMultiplicityError('lambda_q not resolved (%g <= %g)' % (lam_q, resolution))
    plus = form.isotropy_residual(approx.fast_space(q))
    minus = form.isotropy_residual(approx.slow_space(q))
    return LagrangianReport(lambda_q=lam_q, plus_residual=plus, minus_residual=minus,
                            isotropic=bool(plus < tol and minus < tol))
