#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Constructive perturbations of cocycles along finite orbit segments: small rotations,
the three-case directions interchange (general and symplectic), realizable-sequence
algebra, nested rotations preserving a quotient ellipse, the quotient eccentricity
diagnostic and the norm-lowering sequence built around one interchange block.
"""

from collections import namedtuple
import math

import numpy as np
import scipy.linalg

from cocyclelab.domination import forward_frames, backward_frames, propagate_splitting, window_log_norms
from cocyclelab.errors import AngleBudgetError, HorizonError, DominatedError, SegmentMismatchError, \
    EllipseError, HypothesisError, WitnessError, InvariantViolation, DegenerateError
from cocyclelab.linalg import GENERAL_LINEAR, SYMPLECTIC, GROUP_TOL, SymplecticForm, Subspace, \
    group_residual, inf_norms, sin_angle, normalized, to_complex, exterior_power, \
    product_log_norm, principal_angle, symplectic_pairing_bound
from cocyclelab.logf import log_debug, log_info, log_warn, is_debug_stream
from cocyclelab.lyapunov import generic_frame

RESIDUAL_TOL = 1e-8
ARRIVAL_TOL = 1e-9
ANGLE_SLACK = 1e-9
V_COMPONENT_TOL = 1e-6
ELLIPSE_TOL = 1e-8
ELLIPSE_SAMPLES = 64
MAX_ALPHA = np.pi / 3.0

UNCHANGED = 'unchanged'
CASE1 = 'case1-rotation'
CASE2 = 'case2-rotation'
CASE3 = 'case3-advance'
EXCHANGE = 'exchange-block'


# --- budgets ------------------------------------------------------------------------------

class PerturbBudget(namedtuple('PerturbBudget', ['epsilon', 'epsilon1', 'alpha', 'K', 'C', 'm_min', 'clamped',
                                                 'norm_sup', 'inv_norm_sup', 'alpha_u', 'K_s', 'E2',
                                                 'sin_gamma', 'beta', 'm_min_s'])):
    """Per-step distance budget epsilon and the constants derived from it; the `_u'/`_s'
    fields are filled in by L{symplectic_budget} only."""

    @property
    def symplectic(self):
        return self.alpha_u is not None

    def to_dict(self):
        return dict(self._asdict())


def compute_budget(norm_sup, inv_norm_sup, epsilon):
    """Budget constants: epsilon1 = epsilon / ||A||, alpha = arcsin(epsilon1 / sqrt 2)
    (at most pi/3), K = max(1 / sin^2 alpha, ||A|| ||A^-1||), C = 8K / sin^2 alpha,
    m_min = ceil(2C / alpha).

    @rtype: PerturbBudget
    """
    if not epsilon > 0:
        raise ValueError('epsilon must be positive, got %r' % epsilon)
    eps1 = epsilon / norm_sup
    alpha = float(np.arcsin(min(eps1 / np.sqrt(2.0), 1.0)))
    clamped = alpha > MAX_ALPHA
    if clamped:
        log_warn('perturbation budget: alpha clamped to pi/3 (epsilon %g)' % epsilon)
        alpha = MAX_ALPHA
    sin2 = np.sin(alpha) ** 2
    K = max(1.0 / sin2, norm_sup * inv_norm_sup)
    C = 8.0 * K / sin2
    m_min = int(math.ceil(2.0 * C / alpha))
    return PerturbBudget(epsilon=float(epsilon), epsilon1=float(eps1), alpha=alpha, K=float(K), C=float(C),
                         m_min=m_min, clamped=bool(clamped), norm_sup=float(norm_sup),
                         inv_norm_sup=float(inv_norm_sup), alpha_u=None, K_s=None, E2=None, sin_gamma=None,
                         beta=None, m_min_s=None)


def budget_for(orbit, epsilon):
    """Budget with the cocycle bounds estimated along the orbit segment."""
    return compute_budget(*inf_norms(orbit.matrices), epsilon=epsilon)


def symplectic_budget(budget, form):
    """Extend a budget with the constants of the symplectic interchange: the unitary angle
    alpha_u = 2 arcsin(epsilon1 / (2 sqrt 2)), K_s, E^2 = 8 C_w^4 K_s / sin^4 alpha_u,
    sin gamma = C_w^-14 K_s^-2 sin^9 alpha_u / 2, beta = 2 arcsin(epsilon1 sin gamma / (2 E^2))
    and m_min = ceil(2 pi / beta).

    @rtype: PerturbBudget
    """
    alpha_u = min(2.0 * float(np.arcsin(min(budget.epsilon1 / (2.0 * np.sqrt(2.0)), 1.0))), MAX_ALPHA)
    sin_u = np.sin(alpha_u)
    c_w = form.C_omega
    K_s = max(1.0 / sin_u ** 2, budget.norm_sup * budget.inv_norm_sup)
    E2 = 8.0 * c_w ** 4 * K_s / sin_u ** 4
    sin_gamma = 0.5 * c_w ** -14 * K_s ** -2 * sin_u ** 9
    beta = 2.0 * float(np.arcsin(min(budget.epsilon1 * sin_gamma / (2.0 * E2), 1.0)))
    return budget._replace(alpha_u=alpha_u, K_s=float(K_s), E2=float(E2), sin_gamma=float(sin_gamma),
                           beta=beta, m_min_s=int(math.ceil(2.0 * np.pi / beta)))


# --- rotations ----------------------------------------------------------------------------

def _planar_rotation(u1, u2):
    cos = float(np.dot(u1, u2))
    perp = u2 - cos * u1
    sin = float(np.linalg.norm(perp))
    d = len(u1)
    if sin <= 1e-15:
        return np.eye(d)
    w = perp / sin
    return (np.eye(d) + (cos - 1.0) * (np.outer(u1, u1) + np.outer(w, w))
            + sin * (np.outer(w, u1) - np.outer(u1, w)))


def _unitary_rotation(u1, u2):
    z1, z2 = to_complex(u1), to_complex(u2)
    c = complex(np.vdot(z1, z2))
    rest = z2 - c * z1
    s = float(np.linalg.norm(rest))
    q = len(z1)
    U = np.eye(q, dtype=complex) + (c - 1.0) * np.outer(z1, z1.conj())
    if s > 1e-15:
        r = rest / s
        phase = c / abs(c) if abs(c) > 0.0 else 1.0
        U += (s * np.outer(r, z1.conj()) - s * phase * np.outer(z1, r.conj())
              + (abs(c) - 1.0) * np.outer(r, r.conj()))
    return np.block([[U.real, -U.imag], [U.imag, U.real]])


def rotation_to(v1, v2, group, epsilon1, alpha=None):
    """Rotation R close to the identity mapping the line through v1 onto the line through v2.

    For the general/special-linear and orthogonal groups R is the planar rotation in
    span{v1, v2} fixing the orthogonal complement (||R - I|| = 2 sin(theta/2) <= sqrt 2 sin theta);
    for the symplectic group it is a unitary rotation acting in the complex span of the
    pair (||R - I|| <= 2 sqrt 2 sin(theta/2)).

    @param alpha: angle threshold (default: arcsin(epsilon1 / sqrt 2), unitary:
        2 arcsin(epsilon1 / (2 sqrt 2)))
    @raise AngleBudgetError: the angle between the lines reaches alpha
    @raise DegenerateError: zero vector
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if np.linalg.norm(v1) == 0.0 or np.linalg.norm(v2) == 0.0:
        raise DegenerateError('degenerate: zero vector')
    u1, u2 = normalized(v1), normalized(v2)
    if np.dot(u1, u2) < 0.0:
        u2 = -u2
    unitary = group == SYMPLECTIC
    if alpha is None:
        if unitary:
            alpha = 2.0 * np.arcsin(min(epsilon1 / (2.0 * np.sqrt(2.0)), 1.0))
        else:
            alpha = np.arcsin(min(epsilon1 / np.sqrt(2.0), 1.0))
    theta = np.arctan2(np.linalg.norm(u2 - np.dot(u1, u2) * u1), np.dot(u1, u2))
    if theta >= alpha * (1.0 + 1e-12):
        raise AngleBudgetError(float(theta), float(alpha))
    if unitary:
        return _unitary_rotation(u1, u2)
    return _planar_rotation(u1, u2)


def _plane_rotation(theta):
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


# --- realizable sequences -------------------------------------------------------------------

class PerturbedSequence(object):
    """Matrices L_0, ..., L_{m-1} along an orbit segment, close to the cocycle matrices
    A_j, with per-step provenance and optional witness vectors: L_{m-1} ... L_0 maps the
    direction of v to the direction of w."""

    def __init__(self, matrices, base, provenance, states, system=None, group=GENERAL_LINEAR,
                 epsilon=None, v=None, w=None, diagnostics=None):
        self.matrices = np.asarray(matrices, dtype=float)
        self.base = np.asarray(base, dtype=float)
        self.provenance = list(provenance)
        self.states = np.asarray(states)
        self.system = system
        self.group = group
        self.epsilon = epsilon
        self.v = None if v is None else np.asarray(v, dtype=float)
        self.w = None if w is None else np.asarray(w, dtype=float)
        self.diagnostics = diagnostics or {}
        self.distances = np.linalg.norm(self.matrices - self.base, 2, axis=(1, 2))

    @property
    def n(self):
        return len(self.matrices)

    @property
    def dim(self):
        return self.matrices.shape[-1]

    def __len__(self):
        return self.n

    def product(self):
        prod = np.eye(self.dim)
        for mat in self.matrices:
            prod = mat @ prod
        return prod

    def push(self, v):
        """L_{m-1} ... L_0 v with renormalization (direction only)."""
        v = normalized(v)
        for mat in self.matrices:
            v = normalized(mat @ v)
        return v

    def residual(self):
        """sin angle(L_{m-1} ... L_0 v, w) (0 without witnesses)."""
        if self.v is None:
            return 0.0
        return sin_angle(self.push(self.v), self.w)

    def orient_witness(self):
        """Flip w so that it points along the image of v (the residual is sign-blind; the
        stored vectors then match as vectors, not only as directions)."""
        if self.v is not None and np.dot(self.push(self.v), self.w) < 0.0:
            self.w = -self.w
        return self

    def check(self):
        """Assert the budget, group and witness invariants.

        @raise InvariantViolation: with the first failed invariant
        """
        if self.epsilon is not None and len(self.distances) and self.distances.max() >= self.epsilon:
            step = int(np.argmax(self.distances))
            raise InvariantViolation('step %d distance %g exceeds budget %g'
                                     % (step, self.distances[step], self.epsilon))
        if self.group != GENERAL_LINEAR:
            resid = max(group_residual(mat, self.group) for mat in self.matrices)
            if resid > GROUP_TOL:
                raise InvariantViolation('%s residual %g' % (self.group, resid))
        resid = self.residual()
        if resid > RESIDUAL_TOL:
            raise InvariantViolation('witness residual %g' % resid)
        return self

    def to_dict(self):
        return {'n': self.n, 'distances': self.distances, 'provenance': self.provenance, 'group': self.group,
                'epsilon': self.epsilon, 'residual': self.residual(),
                'v': self.v, 'w': self.w, 'diagnostics': self.diagnostics}


def trivial(orbit, epsilon=None):
    """The unperturbed sequence L_j = A_j."""
    return PerturbedSequence(orbit.matrices.copy(), orbit.matrices, [UNCHANGED] * orbit.n, orbit.states,
                             orbit.system, orbit.group, epsilon)


def _same_state(system, x, y):
    if system is not None:
        return system.same_state(x, y)
    return bool(np.allclose(x, y, rtol=0.0, atol=1e-12))


def concat(s1, s2):
    """Sequence over the union of two adjacent orbit segments (s1 first).

    @raise SegmentMismatchError: s2 does not start where s1 ends
    """
    if s1.dim != s2.dim or not _same_state(s1.system or s2.system, s1.states[-1], s2.states[0]):
        raise SegmentMismatchError()
    v = w = None
    if s1.v is not None:
        v = s1.v
        w = normalized(s2.product() @ s1.w)
    elif s2.v is not None:
        v = normalized(np.linalg.solve(s1.product(), s2.v))
        w = s2.w
    epsilons = [e for e in (s1.epsilon, s2.epsilon) if e is not None]
    group = s1.group if s1.group == s2.group else GENERAL_LINEAR
    diagnostics = dict(s2.diagnostics)
    diagnostics.update(s1.diagnostics)
    return PerturbedSequence(np.concatenate([s1.matrices, s2.matrices]), np.concatenate([s1.base, s2.base]),
                             s1.provenance + s2.provenance, np.concatenate([s1.states, s2.states[1:]]),
                             s1.system or s2.system, group, max(epsilons) if epsilons else None, v, w,
                             diagnostics)


def invert(s):
    """{L_{n-1}^-1, ..., L_0^-1} along the reversed orbit, distances against the inverse
    cocycle; the witnesses swap roles."""
    return PerturbedSequence(np.linalg.inv(s.matrices)[::-1], np.linalg.inv(s.base)[::-1], s.provenance[::-1],
                             s.states[::-1], s.system, s.group, None, s.w, s.v, dict(s.diagnostics))


# --- interchange helpers --------------------------------------------------------------------

def _first_window_above(frames, K, m):
    """Shortest window [k, l) within [0, m] (smallest k first) with
    ||A_{l-1} ... A_k|F_k|| / m(A_{l-1} ... A_k|E_k) > K.

    @return: (k, l, ratio), or (None, None, largest ratio seen)
    """
    RE, RF = frames.RE[:m], frames.RF[:m]
    kE, kF = RE.shape[-1], RF.shape[-1]
    invE = np.linalg.inv(RE)
    PF = np.broadcast_to(np.eye(kF), (m, kF, kF)).copy()
    PE = np.broadcast_to(np.eye(kE), (m, kE, kE)).copy()
    logs = np.zeros(m)
    log_k = np.log(K)
    worst = -np.inf
    for length in range(1, m + 1):
        count = m - length + 1
        PF = RF[length - 1:m] @ PF[:count]
        PE = PE[:count] @ invE[length - 1:m]
        logs = logs[:count]
        for prod in (PF, PE):
            scale = np.abs(prod).max(axis=(1, 2))
            prod /= scale[:, None, None]
            logs = logs + np.log(scale)
        log_ratio = logs + np.log(np.linalg.norm(PF, 2, axis=(1, 2))) + np.log(np.linalg.norm(PE, 2, axis=(1, 2)))
        worst = max(worst, float(log_ratio.max()))
        hits = np.nonzero(log_ratio > log_k)[0]
        if len(hits):
            k = int(hits[0])
            return k, k + length, float(np.exp(log_ratio[k]))
    return None, None, float(np.exp(worst))


def _pull_back(RE, k, coords):
    """Coordinates at step 0 of the vector with coordinates `coords' at step k (triangular
    solves through the restricted matrices)."""
    for j in range(k - 1, -1, -1):
        coords = normalized(scipy.linalg.solve_triangular(RE[j], coords))
    return coords


def _push_forward(R, start, stop, coords):
    for j in range(start, stop):
        coords = normalized(R[j] @ coords)
    return coords


def _hypothesis_ratio(frames, m):
    return float(np.exp(window_log_norms(frames.RF, m, 1)[0] + window_log_norms(frames.RE, m, 1, inverse=True)[0]))


def _principal_vectors(E_basis, F_basis):
    U, _, Vt = np.linalg.svd(E_basis.T @ F_basis)
    xi = E_basis @ U[:, 0]
    eta = F_basis @ Vt[0]
    if np.dot(xi, eta) < 0.0:
        eta = -eta
    return xi, eta


class _Interchange(object):
    """Shared state of one interchange construction."""

    def __init__(self, orbit, frames, m, rotate, alpha, K):
        self.orbit = orbit
        self.frames = frames
        self.m = m
        self.rotate = rotate
        self.alpha = alpha
        self.K = K
        self.matrices = orbit.matrices[:m].copy()
        self.provenance = [UNCHANGED] * m

    def case1(self, ell):
        fr = self.frames
        xi, eta = _principal_vectors(fr.E[ell], fr.F[ell])
        R = self.rotate(xi, eta)
        if ell < self.m:
            self.matrices[ell] = self.orbit.matrices[ell] @ R
            self.provenance[ell] = CASE1
        else:
            self.matrices[ell - 1] = R @ self.orbit.matrices[ell - 1]
            self.provenance[ell - 1] = CASE1
        v = fr.E[0] @ _pull_back(fr.RE, ell, fr.E[ell].T @ xi)
        w = fr.F[self.m] @ _push_forward(fr.RF, ell, self.m, fr.F[ell].T @ eta)
        log_debug('interchange case 1 at step', ell)
        return v, w

    def case2(self, k, ell):
        fr = self.frames
        if not ell - 1 > k:
            raise InvariantViolation('case-2 window [%d, %d) too short' % (k, ell))
        PE = np.eye(fr.RE.shape[-1])
        PF = np.eye(fr.RF.shape[-1])
        for j in range(k, ell):
            PE = normalized_matrix(fr.RE[j] @ PE)
            PF = normalized_matrix(fr.RF[j] @ PF)
        a = np.linalg.svd(PE)[2][-1]
        b = np.linalg.svd(PF)[2][0]
        xi = fr.E[k] @ a
        eta = fr.F[k] @ b
        if np.dot(xi, eta) < 0.0:
            eta, b = -eta, -b
        sin_a = np.sin(self.alpha)
        R1 = self.rotate(xi, xi + sin_a * eta)
        self.matrices[k] = self.orbit.matrices[k] @ R1
        self.provenance[k] = CASE2
        image = normalized(xi + sin_a * eta)
        for j in range(k, ell):
            image = normalized(self.orbit.matrices[j] @ image)
        eta_l = fr.F[ell] @ _push_forward(fr.RF, k, ell, b)
        R2 = self.rotate(image, eta_l)
        self.matrices[ell - 1] = R2 @ self.orbit.matrices[ell - 1]
        self.provenance[ell - 1] = CASE2
        v = fr.E[0] @ _pull_back(fr.RE, k, a)
        w = fr.F[self.m] @ _push_forward(fr.RF, ell, self.m, fr.F[ell].T @ eta_l)
        log_debug('interchange case 2 on window', k, ell)
        return v, w

    def case3(self):
        """Greedy oriented-angle advance in the invariant planes Y_j = span{xi_j, eta_j}."""
        fr, m = self.frames, self.m
        PE = np.eye(fr.RE.shape[-1])
        PF = np.eye(fr.RF.shape[-1])
        for j in range(m):
            PE = normalized_matrix(fr.RE[j] @ PE)
            PF = normalized_matrix(fr.RF[j] @ PF)
        a = np.linalg.svd(PE)[2][0]
        b = np.linalg.svd(PF)[2][-1]
        e1 = np.empty((m + 1, self.orbit.dim))
        e2 = np.empty_like(e1)
        w_angle = np.empty(m + 1)
        for j in range(m + 1):
            xi = fr.E[j] @ a
            eta = fr.F[j] @ b
            e1[j] = normalized(xi)
            e2[j] = normalized(eta - np.dot(eta, e1[j]) * e1[j])
            w_angle[j] = np.arctan2(np.dot(eta, e2[j]), np.dot(eta, e1[j]))
            if j < m:
                a = normalized(fr.RE[j] @ a)
                b = normalized(fr.RF[j] @ b)
        cap = self.alpha * (1.0 - ANGLE_SLACK)
        u = e1[0].copy()
        u_angle = np.zeros(m + 1)
        z_angle = np.zeros(m + 1)
        frame_prod = np.eye(2)
        eccentricity = 1.0
        for j in range(m):
            A = self.orbit.matrices[j]
            image = A @ u
            phi = float(np.arctan2(np.dot(image, e2[j + 1]), np.dot(image, e1[j + 1])))
            phi = min(max(phi, 0.0), w_angle[j + 1])
            step = min(w_angle[j + 1] - phi, cap)
            if step > 1e-15:
                target = np.cos(phi + step) * e1[j + 1] + np.sin(phi + step) * e2[j + 1]
                self.matrices[j] = self.rotate(image, target) @ A
                self.provenance[j] = CASE3
                u = target
                u_angle[j + 1] = phi + step
            else:
                u = normalized(image)
                u_angle[j + 1] = phi
            block = np.array([[np.dot(e1[j + 1], A @ e1[j]), np.dot(e1[j + 1], A @ e2[j])],
                              [np.dot(e2[j + 1], A @ e1[j]), np.dot(e2[j + 1], A @ e2[j])]])
            frame_prod = normalized_matrix(block @ frame_prod)
            svals = np.linalg.svd(frame_prod, compute_uv=False)
            eccentricity = max(eccentricity, float(svals[0] / svals[-1]))
            z = np.linalg.solve(frame_prod, [np.cos(u_angle[j + 1]), np.sin(u_angle[j + 1])])
            z_angle[j + 1] = np.arctan2(z[1], z[0]) % np.pi
        arrived = abs(u_angle[m] - w_angle[m]) <= ARRIVAL_TOL
        if np.any(np.diff(z_angle) < -ARRIVAL_TOL) or z_angle[m] > w_angle[0] + ARRIVAL_TOL:
            raise InvariantViolation('oriented angle sequence not monotone')
        log_debug('interchange case 3: arrival', arrived, 'advancing steps', self.provenance.count(CASE3))
        if is_debug_stream():
            log_debug('case 3 angles u', u_angle, 'w', w_angle)
        diagnostics = {'u_angles': u_angle, 'w_angles': w_angle, 'z_angles': z_angle,
                       'max_eccentricity': eccentricity, 'arrived': bool(arrived)}
        return e1[0], fr.F[m] @ b, diagnostics


def normalized_matrix(M):
    return M / np.abs(M).max()


def _finish(orbit, work, v, w, group, epsilon, diagnostics):
    seq = PerturbedSequence(work.matrices, orbit.matrices[:work.m], work.provenance, orbit.states[:work.m + 1],
                            orbit.system, group, epsilon, v, w, diagnostics)
    return seq.orient_witness().check()


def interchange(orbit, E, F, budget, m=None, strict=True):
    """Directions interchange along the first m steps of the orbit: a sequence of
    matrices within the budget mapping a direction of E to a direction of A^m(F).

    Dispatch: case 1 (some E_l, F_l closer than alpha: one rotation), case 2 (some window
    ratio above K: two rotations), case 3 (greedy oriented-angle advance).

    @param strict: require m >= m_min; without it only the arrival of the construction
        is verified
    @rtype: PerturbedSequence
    @raise HorizonError: m below m_min (strict) or the advance did not arrive
    @raise DominatedError: the splitting is dominated at scale m and no case succeeded
    """
    m = orbit.n if m is None else m
    if not 1 <= m <= orbit.n:
        raise ValueError('interchange needs 1 <= m <= n')
    if strict and m < budget.m_min:
        raise HorizonError(m, budget.m_min)
    if E.dim + F.dim != orbit.dim:
        raise ValueError('E + F must have dimension %d' % orbit.dim)
    group = GENERAL_LINEAR if orbit.group == SYMPLECTIC else orbit.group
    frames = propagate_splitting(orbit.sub_segment(0, m), E, F)
    ratio = _hypothesis_ratio(frames, m)
    dominated = ratio < 0.5
    if dominated:
        log_warn('dominated: interchange not guaranteed (ratio %g < 1/2); attempting anyway' % ratio)

    def rotate(v1, v2):
        return rotation_to(v1, v2, group, budget.epsilon1, budget.alpha)

    work = _Interchange(orbit, frames, m, rotate, budget.alpha, budget.K)
    diagnostics = {'hypothesis_ratio': ratio, 'dominated': dominated}
    angles = frames.angles()
    ell = int(np.argmin(angles))
    if angles[ell] < budget.alpha:
        v, w = work.case1(ell)
        diagnostics.update(case=1, ell=ell)
    else:
        k, ell, window = _first_window_above(frames, budget.K, m)
        if k is not None:
            v, w = work.case2(k, ell)
            diagnostics.update(case=2, k=k, ell=ell, window_ratio=window)
        else:
            v, w, extra = work.case3()
            diagnostics.update(extra)
            diagnostics.update(case=3, max_window_ratio=window, C=budget.C)
            if not extra['arrived']:
                if dominated:
                    raise DominatedError(ratio, 'oriented-angle advance did not arrive')
                raise HorizonError(m, budget.m_min)
    return _finish(orbit, work, v, w, group, budget.epsilon, diagnostics)


def interchange_symplectic(orbit, E, F, budget, form=None, m=None, strict=True):
    """Directions interchange for a symplectic cocycle and a transversal Lagrangian pair;
    every perturbed matrix stays symplectic.

    Cases 1 and 2 use unitary rotations with the angle alpha_u; case 3 rotates the
    symplectic plane Y_0 = span{v_0, w_0} (w_0 the F-part of J v_0) and conjugates the
    rotations along the orbit, acting as the identity on X_j = A^j(Y_0^omega).

    @rtype: PerturbedSequence
    @raise NotLagrangianError: E or F not Lagrangian
    """
    form = SymplecticForm(orbit.dim) if form is None else form
    form.check_lagrangian(E, F)
    if not budget.symplectic:
        budget = symplectic_budget(budget, form)
    m = orbit.n if m is None else m
    if not 1 <= m <= orbit.n:
        raise ValueError('interchange needs 1 <= m <= n')
    if strict and m < budget.m_min_s:
        raise HorizonError(m, budget.m_min_s)
    frames = propagate_splitting(orbit.sub_segment(0, m), E, F)
    ratio = _hypothesis_ratio(frames, m)
    dominated = ratio < 0.5
    if dominated:
        log_warn('dominated: interchange not guaranteed (ratio %g < 1/2); attempting anyway' % ratio)

    def rotate(v1, v2):
        return rotation_to(v1, v2, SYMPLECTIC, budget.epsilon1, budget.alpha_u)

    work = _Interchange(orbit, frames, m, rotate, budget.alpha_u, budget.K_s)
    diagnostics = {'hypothesis_ratio': ratio, 'dominated': dominated}
    angles = frames.angles()
    ell = int(np.argmin(angles))
    if angles[ell] < budget.alpha_u:
        v, w = work.case1(ell)
        diagnostics.update(case=1, ell=ell)
    else:
        k, ell, window = _first_window_above(frames, budget.K_s, m)
        if k is not None:
            v, w = work.case2(k, ell)
            diagnostics.update(case=2, k=k, ell=ell, window_ratio=window)
        else:
            v, w, extra = _symplectic_plane_advance(orbit, frames, E, F, form, budget.epsilon, m, work)
            diagnostics.update(extra)
            diagnostics.update(case=3, max_window_ratio=window)
            if not extra['arrived']:
                if dominated:
                    raise DominatedError(ratio, 'plane rotations did not arrive')
                raise HorizonError(m, budget.m_min_s)
    return _finish(orbit, work, v, w, SYMPLECTIC, budget.epsilon, diagnostics)


def _symplectic_plane_advance(orbit, frames, E, F, form, epsilon, m, work):
    PE = np.eye(E.dim)
    for j in range(m):
        PE = normalized_matrix(frames.RE[j] @ PE)
    v0 = E.basis @ np.linalg.svd(PE)[2][-1]
    w0, pairing = symplectic_pairing_bound(E, F, v0, form)
    w0 = normalized(w0)
    if np.dot(v0, w0) < 0.0:
        w0 = -w0
    t2 = normalized(w0 - np.dot(w0, v0) * v0)
    T = np.column_stack([v0, t2])
    target = float(np.arctan2(np.dot(w0, t2), np.dot(w0, v0)))
    X0 = form.skew_complement(Subspace(T, orthonormal=True))
    X, _ = forward_frames(orbit.matrices[:m], X0.basis)
    total = 0.0
    angles = np.zeros(m)
    for j in range(m):
        A = orbit.matrices[j]
        B = np.column_stack([T, X[j]])
        head = np.linalg.inv(B)[:2]
        cost = np.linalg.norm(A @ T, 2) * np.linalg.norm(head, 2)
        theta_max = 2.0 * np.arcsin(min(1.0, epsilon * (1.0 - ANGLE_SLACK) / (2.0 * cost)))
        theta = min(target - total, theta_max)
        if theta > 1e-15:
            P = np.eye(orbit.dim) + T @ (_plane_rotation(theta) - np.eye(2)) @ head
            work.matrices[j] = A @ P
            work.provenance[j] = CASE3
            total += theta
            angles[j] = theta
        T = A @ T
        T /= np.abs(T).max()
    arrived = abs(target - total) <= ARRIVAL_TOL
    w = frames.F[m] @ _push_forward(frames.RF, 0, m, F.basis.T @ w0)
    log_debug('symplectic plane advance: target', target, 'reached', total)
    return v0, w, {'target_angle': target, 'angles': angles, 'pairing': pairing, 'arrived': bool(arrived)}


# --- nested rotations -----------------------------------------------------------------------

def _quotient_basis(X):
    """Orthonormal basis of the orthogonal complement of span(X) (columns)."""
    d, k = X.shape
    if k == 0:
        return np.eye(d)
    Q, _ = np.linalg.qr(X, mode='complete')
    return Q[:, k:]


def nested_rotation_sequence(orbit, X0, B0, rotations, budget):
    """Perturbation L_j = A_j R_j with R_j the identity on X_j = A^j(X_0), preserving
    X_j^perp and inducing the rotation R^_j of the 2-dimensional quotient that preserves
    the ellipse B_j = (A^j / X_0)(B_0).

    @param X0: subspace of codimension 2 (None in dimension 2)
    @param B0: 2 x 2 matrix mapping the unit circle onto the ellipse B_0 (quotient
        coordinates; None = unit circle)
    @param rotations: per step either an angle (the rotation of B_0's circle conjugated to
        step j) or an explicit 2 x 2 quotient matrix
    @rtype: PerturbedSequence
    @raise EllipseError: a rotation or the sampled invariance check fails
    """
    d, n = orbit.dim, orbit.n
    if len(rotations) != n:
        raise ValueError('need one rotation per step (%d)' % n)
    basis = np.zeros((d, 0)) if X0 is None else X0.basis
    if basis.shape[1] != d - 2:
        raise ValueError('X_0 must have codimension 2')
    M0 = np.eye(2) if B0 is None else np.asarray(B0, dtype=float)
    if basis.shape[1]:
        X, _ = forward_frames(orbit.matrices, basis)
    else:
        X = np.zeros((n + 1, d, 0))
    perp = [_quotient_basis(X[j]) for j in range(n + 1)]
    N = np.eye(2)
    matrices = orbit.matrices.copy()
    provenance = [UNCHANGED] * n
    for j in range(n):
        G = N @ M0
        rot = rotations[j]
        if np.ndim(rot) == 0:
            R_hat = G @ _plane_rotation(float(rot)) @ np.linalg.inv(G)
        else:
            R_hat = np.asarray(rot, dtype=float)
            pulled = np.linalg.solve(G, R_hat @ G)
            resid = float(np.max(np.abs(pulled.T @ pulled - np.eye(2))))
            if resid > ELLIPSE_TOL:
                raise EllipseError(j, resid)
        size = np.linalg.norm(R_hat - np.eye(2), 2)
        if size >= budget.epsilon1:
            raise AngleBudgetError(float(size), budget.epsilon1)
        if size > 0.0:
            R = np.eye(d) + perp[j] @ (R_hat - np.eye(2)) @ perp[j].T
            matrices[j] = orbit.matrices[j] @ R
            provenance[j] = CASE3
        N = perp[j + 1].T @ orbit.matrices[j] @ perp[j] @ N
    group = GENERAL_LINEAR if orbit.group == SYMPLECTIC else orbit.group
    seq = PerturbedSequence(matrices, orbit.matrices, provenance, orbit.states, orbit.system, group,
                            budget.epsilon)
    seq.diagnostics['ellipse_residual'] = _ellipse_check(orbit, seq, perp, M0)
    return seq.check()


def _ellipse_check(orbit, seq, perp, M0):
    phis = np.linspace(0.0, 2.0 * np.pi, ELLIPSE_SAMPLES, endpoint=False)
    points = perp[0] @ M0 @ np.vstack([np.cos(phis), np.sin(phis)])
    N = np.eye(2)
    worst = 0.0
    for j in range(seq.n):
        points = seq.matrices[j] @ points
        N = perp[j + 1].T @ orbit.matrices[j] @ perp[j] @ N
        radial = np.linalg.norm(np.linalg.solve(N @ M0, perp[j + 1].T @ points), axis=0)
        resid = float(np.max(np.abs(radial - 1.0)))
        worst = max(worst, resid)
        if resid > ELLIPSE_TOL:
            raise EllipseError(j + 1, resid)
    return worst


# --- eccentricity diagnostic -----------------------------------------------------------------

class EccentricityReport(namedtuple('EccentricityReport', ['distortion', 'bound', 'alpha', 'K'])):
    def to_dict(self):
        return dict(self._asdict())


def check_case3_hypotheses(frames, m, alpha, K):
    """@raise HypothesisError: naming the first violated case-3 hypothesis"""
    angles = frames.angles()[:m + 1]
    if angles.min() < alpha:
        raise HypothesisError('angle(E_j, F_j) = %g < alpha = %g at j = %d'
                              % (angles.min(), alpha, int(np.argmin(angles))))
    k, ell, ratio = _first_window_above(frames, K, m)
    if k is not None:
        raise HypothesisError('window ratio %g > K = %g on [%d, %d)' % (ratio, K, k, ell))
    ratio = _hypothesis_ratio(frames, m)
    if ratio < 0.5:
        raise HypothesisError('non-domination ratio %g < 1/2' % ratio)


def eccentricity_diagnostic(orbit, E, F, alpha, K, m=None):
    """Quotient distortion ||A^j / X_0|| / m(A^j / X_0), j = 0..m, for the invariant
    codimension-2 family X_j = G_j + H_j: G_0 is the orthogonal complement in E_0 of the least
    expanded direction, H_m the orthogonal complement in F_m of the image of the most
    expanded direction of F_0.

    @rtype: EccentricityReport
    @raise HypothesisError: the case-3 hypotheses fail
    @raise InvariantViolation: a distortion exceeds 8K / sin^6 alpha
    """
    m = orbit.n if m is None else m
    segment = orbit.sub_segment(0, m)
    frames = propagate_splitting(segment, E, F)
    check_case3_hypotheses(frames, m, alpha, K)
    PE = np.eye(E.dim)
    PF = np.eye(F.dim)
    for j in range(m):
        PE = normalized_matrix(frames.RE[j] @ PE)
        PF = normalized_matrix(frames.RF[j] @ PF)
    G0 = scipy.linalg.null_space(np.linalg.svd(PE)[2][-1:])
    Hm = scipy.linalg.null_space(np.linalg.svd(PF)[0][:, :1].T)
    d = orbit.dim
    if G0.shape[1]:
        G, _ = forward_frames(segment.matrices, E.basis @ G0)
    else:
        G = np.zeros((m + 1, d, 0))
    if Hm.shape[1]:
        H, _ = backward_frames(segment.matrices, frames.F[m] @ Hm)
    else:
        H = np.zeros((m + 1, d, 0))
    perp = [_quotient_basis(np.hstack([G[j], H[j]])) for j in range(m + 1)]
    N = np.eye(2)
    distortion = [1.0]
    for j in range(m):
        N = perp[j + 1].T @ segment.matrices[j] @ perp[j] @ N
        svals = np.linalg.svd(N, compute_uv=False)
        distortion.append(float(svals[0] / svals[-1]))
        N = normalized_matrix(N)
    bound = 8.0 * K / np.sin(alpha) ** 6
    distortion = np.array(distortion)
    if distortion.max() > bound:
        raise InvariantViolation('quotient distortion %g exceeds %g' % (distortion.max(), bound))
    return EccentricityReport(distortion=distortion, bound=float(bound), alpha=float(alpha), K=float(K))


# --- norm lowering ----------------------------------------------------------------------------

class LowerNormReport(namedtuple('LowerNormReport', ['p', 'ell', 'm', 'n', 'achieved', 'unperturbed',
                                                     'target', 'lowered', 'witness_ratio', 'v_component',
                                                     'blocks'])):
    """Result of the norm-lowering construction; `blocks' holds the max-norm bookkeeping
    of the exterior block (VV, VH, HV, HH norms, the V/H angles at both ends and the two
    inequalities relating ||T|| and ||T||_max)."""

    def to_dict(self):
        return dict(self._asdict())


def _exterior_log_norm(matrices, p):
    return product_log_norm(exterior_power(matrices, p))


def _exterior_blocks(block, E0, F0, E1, F1, p):
    """Max-norm decomposition of T = wedge^p(block) w.r.t. V = wedge^p E, H = the span of
    the other basis p-vectors of E + F, at both ends of the block."""
    def split(Eb, Fb):
        W = exterior_power(np.hstack([Eb, Fb]), p)
        V = normalized(W[:, 0])
        Hq, _ = np.linalg.qr(W[:, 1:])
        theta = principal_angle(Subspace(V, orthonormal=True), Subspace(Hq, orthonormal=True))
        return np.column_stack([V, Hq]), theta

    B0, theta0 = split(E0, F0)
    B1, theta1 = split(E1, F1)
    C = np.linalg.solve(B1, exterior_power(block, p) @ B0)
    norms = {'VV': np.linalg.norm(C[:1, :1], 2), 'VH': np.linalg.norm(C[:1, 1:], 2),
             'HV': np.linalg.norm(C[1:, :1], 2), 'HH': np.linalg.norm(C[1:, 1:], 2)}
    t_max = max(norms.values())
    t_norm = np.linalg.norm(exterior_power(block, p), 2)
    result = {key: float(val) for key, val in norms.items()}
    result.update(theta0=float(theta0), theta1=float(theta1), norm=float(t_norm), max_norm=float(t_max),
                  upper_ok=bool(t_norm <= 4.0 * t_max / np.sin(theta0) * (1 + 1e-9)),
                  lower_ok=bool(t_max <= t_norm / np.sin(theta1) * (1 + 1e-9)))
    return result


def lower_norm_sequence(orbit, p, ell, budget, delta=0.05, m=None, splitting=None, require_witness=True,
                        strict=True):
    """Concatenate the unperturbed head {A_0..A_{ell-1}}, an interchange block at y = f^ell(x)
    and the unperturbed tail, and evaluate (1/n) log ||wedge^p (L_{n-1} ... L_0)||.

    The splitting at y is E = fast p-dimensional space (frame pushed through the head),
    F = slow space (frame pulled back from the orbit end), unless given explicitly.

    @param splitting: optional (E, F) at y (artificial witness)
    @rtype: tuple
    @return: (PerturbedSequence, LowerNormReport)
    @raise WitnessError: the splitting is dominated at scale m (when require_witness)
    @raise InvariantViolation: the block image of E is not inside the slow space at the block end
    """
    d, n = orbit.dim, orbit.n
    if not 1 <= p <= d - 1:
        raise ValueError('p = %d outside [1, %d]' % (p, d - 1))
    m = budget.m_min if m is None else m
    if not (0 <= ell and ell + m <= n) or (splitting is None and ell == 0):
        raise ValueError('exchange block [%d, %d) outside the orbit of length %d' % (ell, ell + m, n))
    if strict and n < 10 * m:
        log_warn('orbit length %d below 10 m = %d' % (n, 10 * m))
    if splitting is None:
        frame = generic_frame(d)
        QE, _ = forward_frames(orbit.matrices[:ell], frame[:, :p])
        QF, _ = backward_frames(orbit.matrices[ell:], frame[:, :d - p])
        E, F = Subspace(QE[-1], orthonormal=True), Subspace(QF[0], orthonormal=True)
    else:
        E, F = splitting
    block_orbit = orbit.sub_segment(ell, ell + m)
    frames = propagate_splitting(block_orbit, E, F)
    witness = _hypothesis_ratio(frames, m)
    if witness < 0.5:
        if require_witness:
            raise WitnessError(witness)
        log_warn('no interchange witness at %d (ratio %g); attempting anyway' % (ell, witness))
    log_info('norm lowering: p=%d, ell=%d, m=%d, n=%d' % (p, ell, m, n))

    block = interchange(block_orbit, E, F, budget, strict=strict)
    block.provenance = [EXCHANGE if prov != UNCHANGED else prov for prov in block.provenance]
    parts = [block]
    if ell > 0:
        parts.insert(0, trivial(orbit.sub_segment(0, ell), budget.epsilon))
    if ell + m < n:
        parts.append(trivial(orbit.sub_segment(ell + m, n), budget.epsilon))
    seq = parts[0]
    for part in parts[1:]:
        seq = concat(seq, part)

    achieved = _exterior_log_norm(seq.matrices, p) / n
    unperturbed = _exterior_log_norm(orbit.matrices, p) / n
    lower = _exterior_log_norm(orbit.matrices, p - 1) / n if p > 1 else 0.0
    upper = _exterior_log_norm(orbit.matrices, p + 1) / n
    target = (lower + upper) / 2.0 + delta

    block_product = block.product()
    image = block_product @ E.basis
    coeffs = np.linalg.solve(np.hstack([frames.E[m], frames.F[m]]), image)
    v_component = abs(np.linalg.det(coeffs[:p])) / np.sqrt(abs(np.linalg.det(image.T @ image)))
    if v_component > V_COMPONENT_TOL:
        raise InvariantViolation('block image of the fast space keeps relative V component %g' % v_component)
    blocks = _exterior_blocks(block_product, E.basis, F.basis, frames.E[m], frames.F[m], p)
    report = LowerNormReport(p=p, ell=ell, m=m, n=n, achieved=float(achieved), unperturbed=float(unperturbed),
                             target=float(target), lowered=bool(achieved <= target), witness_ratio=witness,
                             v_component=float(v_component), blocks=blocks)
    log_info('norm lowering: unperturbed %.4f, achieved %.4f, target %.4f' % (unperturbed, achieved, target))
    return seq, report
