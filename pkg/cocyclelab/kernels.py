#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Explicit local perturbation maps and their verification: the volume preserving twisted
rotation of a thin cylinder, closed-form and composite unitary kernels, the Hamiltonian
cylinder kernel computed by numerical integration, and grid checks of support, closeness,
volume preservation and symplecticity.

All maps work on stacks of points (arrays of shape (N, d)); single points are accepted too.
"""

from collections import namedtuple
from itertools import product
import math

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from cocyclelab.errors import ThinnessError, MixedSignError, FlowIntegrationError, AngleBudgetError, \
    DegenerateError
from cocyclelab.linalg import Subspace, standard_j
from cocyclelab.logf import log_debug, log_warn
from cocyclelab.parallel import parallel_map

INNER_TOL = 1e-10
FLOW_INNER_TOL = 1e-7
FLOW_SUPPORT_TOL = 1e-10
UNITARY_TOL = 1e-9
ZERO_ANGLE = 1e-14
FD_STEP = 1e-5
GRID_POINTS = 10000
GRID_SCALE = 2.0
CHUNK_SIZE = 500
FLOW_BATCH = 64
FLOW_RTOL = 1e-12
FLOW_ATOL = 1e-14
PACKING_TOL = 1e-9
MAX_CUBES = 200000


# --- cutoff functions ---------------------------------------------------------------------

def smooth_cutoff(t, inner, outer):
    """C^2 quintic cutoff, equal to 1 for t <= inner and to 0 for t >= outer.

    With w = outer - inner the derivatives are bounded by |f'| <= 1.875 / w and
    |f''| <= 5.78 / w^2.

    @return: (value, first derivative, second derivative), arrays shaped like t
    """
    t = np.asarray(t, dtype=float)
    width = outer - inner
    s = np.clip((t - inner) / width, 0.0, 1.0)
    step = s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)
    d1 = 30.0 * s ** 2 * (1.0 - s) ** 2
    d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    return 1.0 - step, -d1 / width, -d2 / width ** 2


def cutoff_integral(t, sigma):
    """Primitive (from 0, for t >= 0) of the cutoff with inner = sigma and outer = 1;
    constant (1 + sigma) / 2 for t >= 1."""
    t = np.asarray(t, dtype=float)
    width = 1.0 - sigma
    s = np.clip((t - sigma) / width, 0.0, 1.0)
    ramp = s - s ** 4 * (2.5 - 3.0 * s + s ** 2)
    return np.where(t <= sigma, t, sigma + width * ramp)


# --- helpers ------------------------------------------------------------------------------

def _as_points(Z):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        return Z[None, :], True
    return Z, False


def _block_norms(P, blocks):
    norms = []
    start = 0
    for size in blocks:
        norms.append(np.linalg.norm(P[:, start:start + size], axis=1))
        start += size
    return np.stack(norms, axis=1)


def _sqrt_pd(Q):
    """Symmetric square root of a positive definite form and its inverse."""
    if Q.size == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    vals, vecs = scipy.linalg.eigh(Q)
    if vals[0] <= 0.0:
        raise ValueError('quadratic form is not positive definite (smallest eigenvalue %g)' % vals[0])
    return (vecs * np.sqrt(vals)) @ vecs.T, (vecs / np.sqrt(vals)) @ vecs.T


def _eig_range(Q):
    if Q.size == 0:
        return float('inf'), 0.0
    vals = scipy.linalg.eigvalsh(Q)
    return float(vals[0]), float(vals[-1])


def _plane_rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _conjugate(M, D):
    """M D_n M^T for every matrix of the stack D."""
    return np.einsum('ij,njk,lk->nil', M, D, M)


# --- kernel interface ---------------------------------------------------------------------

class Kernel(object):
    """A perturbation map of R^d given together with its Jacobian.

    The support region is described in normalized coordinates as a product of unit balls
    (block sizes in `blocks'), placed in R^d by L{from_normalized}. The map equals the
    linear map `R' where every normalized block radius is at most `sigma' (only if
    `inner_exact' is set) and the identity where some block radius exceeds 1.
    """

    symplectic = False
    inner_exact = True
    inner_tol = INNER_TOL
    support_tol = 0.0

    def __init__(self, dim, R, sigma, blocks):
        self.dim = dim
        self.R = R
        self.sigma = sigma
        self.blocks = blocks

    def evaluate(self, Z, jacobian=True):
        """Map a stack of points.

        @param Z: points, shape (N, d)
        @param jacobian: compute the Jacobians too
        @return: (images (N, d), Jacobians (N, d, d) or None)
        """
        raise NotImplementedError()

    def __call__(self, Z):
        points, single = _as_points(Z)
        values = self.evaluate(points, jacobian=False)[0]
        return values[0] if single else values

    def jacobian(self, Z):
        points, single = _as_points(Z)
        jac = self.evaluate(points)[1]
        return jac[0] if single else jac

    def to_normalized(self, Z):
        raise NotImplementedError()

    def from_normalized(self, P):
        raise NotImplementedError()

    def radii(self, Z):
        """Normalized block radii of the points (shape (N, number of blocks))."""
        return _block_norms(self.to_normalized(_as_points(Z)[0]), self.blocks)

    def to_dict(self):
        return {'kind': self.__class__.__name__, 'dim': self.dim, 'sigma': self.sigma}


class IdentityKernel(Kernel):
    """The identity map, supported (trivially) on the unit ball."""

    def __init__(self, dim, sigma=0.5):
        super(IdentityKernel, self).__init__(dim, np.eye(dim), sigma, [dim])

    def evaluate(self, Z, jacobian=True):
        jac = np.broadcast_to(np.eye(self.dim), (len(Z), self.dim, self.dim)).copy() if jacobian else None
        return np.array(Z, dtype=float), jac

    def to_normalized(self, Z):
        return Z

    def from_normalized(self, P):
        return P


# --- volume preserving cylinder rotation --------------------------------------------------

class CylinderSpec(namedtuple('CylinderSpec', ['X', 'Q', 'Y', 'lam', 'rho', 'a', 'b', 'sigma', 'angle'])):
    """A thin cylinder C = aA + bB in R^d and the rotation of its cross-section.

    X is a d x (d-2) orthonormal basis of the axis subspace, Q a quadratic form in X
    coordinates with A = {Q <= 1}; Y is a d x 2 orthonormal basis of X^perp along the axes
    of the ellipse B = {x^2 / lam^2 + lam^2 y^2 <= rho^2}; sigma is the shrink factor of the
    inner cylinder and `angle' the rotation angle of the inner map H_lam R_angle H_lam^-1.
    """

    @property
    def dim(self):
        return self.Y.shape[0]

    @property
    def tau(self):
        """Constant with ||DQ_u|| <= tau ||u||, at least 1."""
        return max(1.0, 2.0 * _eig_range(self.Q)[1])

    @property
    def ellipse_map(self):
        return np.diag([self.lam, 1.0 / self.lam])

    @property
    def inner_rotation(self):
        """The map of Y (in its own basis) preserving B, conjugate to a rotation."""
        H = self.ellipse_map
        return H @ _plane_rotation(self.angle) @ np.linalg.inv(H)

    @property
    def linear_map(self):
        """R = identity on X, the inner rotation on Y."""
        return np.eye(self.dim) + self.Y @ (self.inner_rotation - np.eye(2)) @ self.Y.T

    @property
    def diameter(self):
        qmin = _eig_range(self.Q)[0]
        axis = self.a / math.sqrt(qmin) if self.Q.size else 0.0
        return 2.0 * math.hypot(axis, self.b * self.rho * self.lam)

    def validate(self):
        """@raise ValueError: on malformed data
        @raise ThinnessError: if a <= tau * b"""
        d = self.dim
        if self.Y.shape != (d, 2) or self.X.shape != (d, d - 2) or self.Q.shape != (d - 2, d - 2):
            raise ValueError('cylinder data shapes do not fit R^%d' % d)
        if not 0.0 < self.sigma < 1.0:
            raise ValueError('sigma must lie in (0, 1), got %g' % self.sigma)
        if self.a <= 0 or self.b <= 0 or self.rho <= 0:
            raise ValueError('cylinder scales must be positive')
        if self.lam < 1.0:
            raise ValueError('ellipse eccentricity must be >= 1, got %g' % self.lam)
        frame = np.hstack([self.X, self.Y])
        if np.max(np.abs(frame.T @ frame - np.eye(d))) > 1e-9:
            raise ValueError('X and Y bases must be orthonormal and orthogonal')
        if self.Q.size and not np.allclose(self.Q, self.Q.T):
            raise ValueError('quadratic form must be symmetric')
        _sqrt_pd(self.Q)
        if self.a <= self.tau * self.b:
            raise ThinnessError(self.a, self.tau, self.b)

    def to_dict(self):
        return {'dim': self.dim, 'X': self.X.tolist(), 'Q': self.Q.tolist(), 'Y': self.Y.tolist(),
                'lam': self.lam, 'rho': self.rho, 'a': self.a, 'b': self.b, 'sigma': self.sigma,
                'angle': self.angle, 'tau': self.tau}


def cylinder_spec(dim, a, b, sigma, angle, lam=1.0, rho=1.0, X=None, Y=None, Q=None):
    """Cylinder data with defaults: Y = span(e_1, e_2), X = span(e_3, ..., e_d), Q = identity."""
    if dim < 2:
        raise ValueError('cylinder needs dimension >= 2')
    eye = np.eye(dim)
    Y = eye[:, :2] if Y is None else np.asarray(Y, dtype=float)
    X = eye[:, 2:] if X is None else np.asarray(X, dtype=float)
    Q = np.eye(dim - 2) if Q is None else np.asarray(Q, dtype=float)
    spec = CylinderSpec(X, Q, Y, float(lam), float(rho), float(a), float(b), float(sigma), float(angle))
    spec.validate()
    return spec


def volume_epsilon(eps0, sigma):
    """Largest admissible ||R^ - I|| for the closeness target eps0: 18 eps / (1 - sigma) < eps0."""
    return eps0 * (1.0 - sigma) / 18.0


class VolumeKernel(Kernel):
    """h(z) = z' + b g_t(z'' / b) with t = Q(z') / a^2, where g_t = H g~_t H^-1 twists the
    ellipse B by the angle angle * phi(t) * phi(|H^-1 v| / rho)."""

    def __init__(self, spec):
        super(VolumeKernel, self).__init__(spec.dim, spec.linear_map, spec.sigma, [spec.dim - 2, 2])
        self.spec = spec
        self._H = spec.ellipse_map
        self._Hinv = np.linalg.inv(self._H)
        self._A, self._Ainv = _sqrt_pd(spec.Q)

    def evaluate(self, Z, jacobian=True):
        spec = self.spec
        n = len(Z)
        U = Z @ spec.X
        V = Z @ spec.Y / spec.b
        t = np.einsum('ni,ij,nj->n', U, spec.Q, U) / spec.a ** 2
        W = V @ self._Hinv.T
        r = np.linalg.norm(W, axis=1)
        ft, dft, _ = smooth_cutoff(t, spec.sigma, 1.0)
        fr, dfr, _ = smooth_cutoff(r / spec.rho, spec.sigma, 1.0)
        theta = spec.angle * ft * fr
        c, s = np.cos(theta), np.sin(theta)
        JW = np.stack([-W[:, 1], W[:, 0]], axis=1)
        # g~(w) - w, kept in displacement form so that it vanishes exactly outside the support
        disp = (c - 1.0)[:, None] * W + s[:, None] * JW
        values = Z + spec.b * (disp @ self._H.T) @ spec.Y.T
        if not jacobian:
            return values, None

        rot = np.empty((n, 2, 2))
        rot[:, 0, 0] = c
        rot[:, 0, 1] = -s
        rot[:, 1, 0] = s
        rot[:, 1, 1] = c
        turned = np.einsum('nij,nj->ni', rot, JW)
        safe_r = np.where(r > 0, r, 1.0)
        grad_theta = (spec.angle * ft * dfr / (spec.rho * safe_r))[:, None] * W
        Dg = rot + turned[:, :, None] * grad_theta[:, None, :]
        Dg = np.einsum('ij,njk,kl->nil', self._H, Dg, self._Hinv)
        dt_g = (turned @ self._H.T) * (spec.angle * dft * fr)[:, None]
        grad_t = 2.0 * (U @ spec.Q) @ spec.X.T / spec.a ** 2
        jac = np.eye(self.dim) + _conjugate(spec.Y, Dg - np.eye(2))
        jac += spec.b * (dt_g @ spec.Y.T)[:, :, None] * grad_t[:, None, :]
        return values, jac

    def to_normalized(self, Z):
        spec = self.spec
        U = (Z @ spec.X) @ self._A / spec.a
        W = (Z @ spec.Y) @ self._Hinv.T / (spec.b * spec.rho)
        return np.hstack([U, W])

    def from_normalized(self, P):
        spec = self.spec
        k = self.dim - 2
        U = spec.a * P[:, :k] @ self._Ainv
        V = spec.b * spec.rho * P[:, k:] @ self._H.T
        return U @ spec.X.T + V @ spec.Y.T

    def to_dict(self):
        res = super(VolumeKernel, self).to_dict()
        res['cylinder'] = self.spec.to_dict()
        return res


def volume_kernel(spec, eps0=None):
    """The volume preserving perturbation supported in the cylinder C that equals the
    linear map R on sigma C.

    @param spec: a L{CylinderSpec}
    @param eps0: closeness target; if given, ||R^ - I|| must stay below L{volume_epsilon}
        and |angle| below pi/2 (so that |angle| <= 2 |sin angle|)
    @rtype: L{VolumeKernel}
    @raise ThinnessError: if a <= tau * b
    @raise AngleBudgetError: if the inner map is too far from the identity
    """
    spec.validate()
    if eps0 is not None:
        eps = volume_epsilon(eps0, spec.sigma)
        dist = np.linalg.norm(spec.inner_rotation - np.eye(2), 2)
        if dist >= eps:
            raise AngleBudgetError(dist, eps)
        if abs(spec.angle) > math.pi / 2.0:
            raise AngleBudgetError(abs(spec.angle), math.pi / 2.0)
        if spec.diameter >= eps0:
            log_warn('Cylinder diameter %g is not below eps0 = %g, displacement bound void' %
                     (spec.diameter, eps0))
    log_debug('volume kernel: d=%d a=%g b=%g tau=%g angle=%g' % (spec.dim, spec.a, spec.b, spec.tau,
                                                                spec.angle))
    return VolumeKernel(spec)


# --- unitary kernels ----------------------------------------------------------------------

def unitary_eigenframe(R):
    """Diagonalize a unitary map given in real form (orthogonal and commuting with J).

    @return: (M, theta): M real orthogonal and symplectic, theta the eigenvalue arguments,
        with R = M diag(e^{i theta}) M^T in the real form
    @raise DegenerateError: if R is not unitary
    """
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    if d % 2 or R.shape != (d, d):
        raise ValueError('unitary map needs an even square matrix')
    q = d // 2
    J = standard_j(q)
    residual = max(np.linalg.norm(R.T @ R - np.eye(d), 2), np.linalg.norm(R @ J - J @ R, 2))
    if residual > UNITARY_TOL:
        raise DegenerateError('degenerate: map is not unitary (residual %g)' % residual)
    T, Zc = scipy.linalg.schur(R[:q, :q] + 1j * R[q:, :q], output='complex')
    theta = np.angle(np.diag(T))
    theta[np.abs(theta) <= ZERO_ANGLE] = 0.0
    M = np.block([[Zc.real, -Zc.imag], [Zc.imag, Zc.real]])
    return M, theta


def phase_matrix(theta):
    """Real form of diag(e^{i theta})."""
    c, s = np.diag(np.cos(theta)), np.diag(np.sin(theta))
    return np.block([[c, -s], [s, c]])


def _phase_flow(W, theta, sigma, jacobian=True):
    """Time-one map of the Hamiltonian tau(H) with H = 1/2 sum |theta_k| |w_k|^2, in eigen
    coordinates W = (Re w, Im w): w_k -> e^{i theta_k tau(H(w))} w_k.

    @return: (displacement, Jacobians or None)
    """
    q = len(theta)
    x, y = W[:, :q], W[:, q:]
    weights = np.abs(theta)
    energy = 0.5 * ((x ** 2 + y ** 2) @ weights)
    tau, dtau, _ = smooth_cutoff(energy, sigma ** 2, 1.0)
    phase = np.outer(tau, theta)
    c, s = np.cos(phase), np.sin(phase)
    disp = np.hstack([(c - 1.0) * x - s * y, s * x + (c - 1.0) * y])
    if not jacobian:
        return disp, None
    gx, gy = x + disp[:, :q], y + disp[:, q:]
    idx = np.arange(q)
    D = np.zeros((len(W), 2 * q, 2 * q))
    D[:, idx, idx] = c
    D[:, idx, q + idx] = -s
    D[:, q + idx, idx] = s
    D[:, q + idx, q + idx] = c
    turn = np.hstack([-gy * theta, gx * theta]) * dtau[:, None]
    grad = np.hstack([x * weights, y * weights])
    D += turn[:, :, None] * grad[:, None, :]
    return disp, D


def _energy_axes(theta):
    """Semi-axes of {H < 1} in eigen coordinates (1 where theta vanishes identically)."""
    if not np.any(theta):
        return np.ones(2 * len(theta))
    axes = np.sqrt(2.0 / np.abs(theta))
    return np.concatenate([axes, axes])


class UnitaryKernel(Kernel):
    """Closed-form Hamiltonian kernel of a unitary map whose eigenvalue arguments share one
    sign, rescaled to scale * U + center, U = {H < 1}."""

    symplectic = True

    def __init__(self, frame, theta, sigma, scale=1.0, center=None):
        dim = frame.shape[0]
        R = frame @ phase_matrix(theta) @ frame.T
        super(UnitaryKernel, self).__init__(dim, R, sigma, [dim])
        self.frame = frame
        self.theta = theta
        self.scale = scale
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        self._axes = _energy_axes(theta)

    def _eigen(self, Z):
        return ((Z - self.center) / self.scale) @ self.frame

    def evaluate(self, Z, jacobian=True):
        disp, D = _phase_flow(self._eigen(Z), self.theta, self.sigma, jacobian)
        values = Z + self.scale * disp @ self.frame.T
        return values, (_conjugate(self.frame, D) if jacobian else None)

    def to_normalized(self, Z):
        return self._eigen(Z) / self._axes

    def from_normalized(self, P):
        return self.center + self.scale * (P * self._axes) @ self.frame.T

    def to_dict(self):
        res = super(UnitaryKernel, self).to_dict()
        res.update({'theta': self.theta.tolist(), 'scale': self.scale})
        return res


def unitary_kernel(R, sigma, scale=1.0, center=None):
    """Closed-form kernel of a unitary R whose eigenvalue arguments are all positive or all
    negative: equals R on {H <= sigma^2} and the identity on {H >= 1}.

    @raise MixedSignError: if the arguments have both signs
    @raise DegenerateError: if some arguments vanish while others do not
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError('sigma must lie in (0, 1), got %g' % sigma)
    frame, theta = unitary_eigenframe(R)
    if np.any(theta > 0) and np.any(theta < 0):
        raise MixedSignError()
    if np.any(theta) and not np.all(theta):
        raise DegenerateError('degenerate: vanishing eigenvalue argument, use composite kernel')
    log_debug('unitary kernel: theta=%s' % str(theta))
    return UnitaryKernel(frame, theta, sigma, scale, center)


Packing = namedtuple('Packing', ['half_width', 'levels', 'count'])


def dyadic_packing(axes, levels):
    """Pack the ellipsoid sum (x_i / axes_i)^2 < 1 with disjoint balls inscribed in dyadic
    cubes of the box [-E, E]^d, E = max(axes).

    Cubes are refined level by level; a cube hosts a ball when it lies inside the ellipsoid
    and misses the balls of all its ancestors. Cubes that host a ball keep being refined, so
    the corners around each ball are packed too.

    @return: L{Packing} whose `levels' lists, per level, (sorted cube keys, centers, radii)
    """
    axes = np.asarray(axes, dtype=float)
    d = len(axes)
    half = float(np.max(axes))
    offsets = np.array(list(product((0, 1), repeat=d)), dtype=float)
    lo = np.full((1, d), -half)
    b_centers = np.zeros((1, 0, d))
    b_radii = np.zeros((1, 0))
    per_level = []
    count = 0
    for level in range(1, levels + 1):
        side = 2.0 * half / 2 ** level
        lo = (lo[:, None, :] + offsets[None, :, :] * side).reshape(-1, d)
        b_centers = np.repeat(b_centers, len(offsets), axis=0)
        b_radii = np.repeat(b_radii, len(offsets), axis=0)
        hi = lo + side
        nearest = np.clip(0.0, lo, hi)
        farthest = np.maximum(np.abs(lo), np.abs(hi))
        meets = np.sum((nearest / axes) ** 2, axis=1) < 1.0
        inside = np.sum((farthest / axes) ** 2, axis=1) < 1.0
        if b_radii.shape[1]:
            gap = np.linalg.norm(np.clip(b_centers, lo[:, None, :], hi[:, None, :]) - b_centers, axis=2)
            reach = np.linalg.norm(np.maximum(np.abs(lo[:, None, :] - b_centers),
                                              np.abs(hi[:, None, :] - b_centers)), axis=2)
            free = np.all(gap >= b_radii, axis=1)
            covered = np.any((reach <= b_radii) & (b_radii > 0), axis=1)
        else:
            free = np.ones(len(lo), dtype=bool)
            covered = np.zeros(len(lo), dtype=bool)
        host = inside & free
        centers = lo[host] + side / 2.0
        keys = np.ravel_multi_index(np.rint((lo[host] + half) / side).astype(np.int64).T, (2 ** level,) * d)
        order = np.argsort(keys)
        per_level.append((keys[order], centers[order], np.full(len(keys), side / 2.0)))
        count += len(keys)

        ball_c = np.where(host[:, None], lo + side / 2.0, 0.0)
        ball_r = np.where(host, side / 2.0, 0.0)
        b_centers = np.concatenate([b_centers, ball_c[:, None, :]], axis=1)
        b_radii = np.concatenate([b_radii, ball_r[:, None]], axis=1)
        active = meets & ~covered
        lo, b_centers, b_radii = lo[active], b_centers[active], b_radii[active]
        if not len(lo) or len(lo) * len(offsets) > MAX_CUBES:
            break
    return Packing(half, per_level, count)


class CompositeUnitaryKernel(Kernel):
    """Kernel of a unitary map with arguments of any sign, written as R = R_+ R_- with both
    factors single-signed on the same eigenbasis: h = h_+ o h_-, where h_- is made of
    disjoint rescaled copies of the R_- kernel packed inside the support of h_+.

    Dh = R only holds on the kept set where a copy acts linearly and its image lies in the
    linear region of h_+, measured by L{packing_volume_check}.
    """

    symplectic = True
    inner_exact = False

    def __init__(self, frame, theta, sigma, levels=None, scale=1.0, center=None):
        dim = frame.shape[0]
        super(CompositeUnitaryKernel, self).__init__(dim, frame @ phase_matrix(theta) @ frame.T, sigma, [dim])
        self.frame = frame
        self.theta = theta
        self.scale = scale
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        eta = max(0.5 * float(np.max(np.abs(theta))), 1e-3)
        self.plus = np.where(theta > 0, theta + eta, eta)
        self.minus = theta - self.plus
        self._axes_plus = _energy_axes(self.plus)
        self._axes_minus = _energy_axes(self.minus)
        if levels is None:
            levels = min(7, max(2, 14 // dim))
        self.packing = dyadic_packing(self._axes_plus / self._axes_minus, levels)
        log_debug('composite unitary kernel: %d copies of the negative kernel' % self.packing.count)

    def _eigen(self, Z):
        return ((Z - self.center) / self.scale) @ self.frame

    def _minus_copies(self, W, jacobian):
        """Apply the packed copies of the negative kernel (disjoint supports)."""
        xi = W / self._axes_minus
        half = self.packing.half_width
        disp = np.zeros_like(W)
        D = np.broadcast_to(np.eye(self.dim), (len(W), self.dim, self.dim)).copy() if jacobian else None
        for level, (keys, centers, radii) in enumerate(self.packing.levels, 1):
            if not len(keys):
                continue
            cells = 2 ** level
            side = 2.0 * half / cells
            idx = np.clip(np.floor((xi + half) / side).astype(np.int64), 0, cells - 1)
            point_keys = np.ravel_multi_index(idx.T, (cells,) * self.dim)
            pos = np.minimum(np.searchsorted(keys, point_keys), len(keys) - 1)
            hit = np.flatnonzero(keys[pos] == point_keys)
            if not len(hit):
                continue
            copy = pos[hit]
            shift = centers[copy] * self._axes_minus
            radius = radii[copy][:, None]
            local = (W[hit] - shift) / radius
            step, Dloc = _phase_flow(local, self.minus, self.sigma, jacobian)
            disp[hit] += radius * step
            if jacobian:
                D[hit] += Dloc - np.eye(self.dim)
        return disp, D

    def evaluate(self, Z, jacobian=True):
        W = self._eigen(Z)
        disp1, D1 = self._minus_copies(W, jacobian)
        disp2, D2 = _phase_flow(W + disp1, self.plus, self.sigma, jacobian)
        values = Z + self.scale * (disp1 + disp2) @ self.frame.T
        if not jacobian:
            return values, None
        return values, _conjugate(self.frame, np.einsum('nij,njk->nik', D2, D1))

    def to_normalized(self, Z):
        return self._eigen(Z) / self._axes_plus

    def from_normalized(self, P):
        return self.center + self.scale * (P * self._axes_plus) @ self.frame.T

    def to_dict(self):
        res = super(CompositeUnitaryKernel, self).to_dict()
        res.update({'theta': self.theta.tolist(), 'plus': self.plus.tolist(), 'minus': self.minus.tolist(),
                    'copies': self.packing.count, 'scale': self.scale})
        return res


def composite_unitary_kernel(R, sigma, levels=None, scale=1.0, center=None):
    """Kernel of a unitary map with eigenvalue arguments of any sign (see
    L{CompositeUnitaryKernel})."""
    if not 0.0 < sigma < 1.0:
        raise ValueError('sigma must lie in (0, 1), got %g' % sigma)
    frame, theta = unitary_eigenframe(R)
    return CompositeUnitaryKernel(frame, theta, sigma, levels, scale, center)


class PackingReport(namedtuple('PackingReport', ['points', 'lost_fraction', 'bound', 'copies', 'sigma',
                                                 'dim'])):
    """Fraction of the support where Dh differs from R, against the bound 3 (1 - sigma^d)."""

    @property
    def ok(self):
        return self.lost_fraction < self.bound

    def to_dict(self):
        res = dict(self._asdict())
        res['ok'] = self.ok
        return res


def packing_volume_check(kernel, points=GRID_POINTS, seed=0, tol=PACKING_TOL):
    """Count uniform low-discrepancy points of the support where ||Dh - R|| > tol."""
    P = grid_points(kernel.blocks, points, seed, scale=1.0)
    jac = kernel.jacobian(kernel.from_normalized(P))
    lost = np.linalg.norm(jac - kernel.R, 2, axis=(1, 2)) > tol
    copies = getattr(getattr(kernel, 'packing', None), 'count', 0)
    return PackingReport(len(P), float(np.mean(lost)), 3.0 * (1.0 - kernel.sigma ** kernel.dim), copies,
                         kernel.sigma, kernel.dim)


# --- Hamiltonian cylinder kernel ----------------------------------------------------------

class FlowBudget(namedtuple('FlowBudget', ['K', 't_bar', 'epsilon'])):
    """Second-derivative bound K of the cut-off Hamiltonian, the largest flow time t_bar with
    e^{t_bar K} - 1 < eps0, and the matching closeness epsilon = sqrt(2) sin t_bar."""

    def to_dict(self):
        return dict(self._asdict())


def cylinder_flow_budget(eps0, sigma):
    w = 1.0 - sigma
    K = 10.0 / w ** 2 + 20.0 / (sigma * w) + 30.0 / w + 3.0
    t_bar = math.log1p(eps0) / K * (1.0 - 1e-9)
    return FlowBudget(K, t_bar, math.sqrt(2.0) * math.sin(t_bar))


class SymplecticCylinderKernel(Kernel):
    """Time-t0 map of the Hamiltonian c - psi(x) (c - phi(y)) on R^{2q} = X + Y, where
    psi(x) = zeta(|A x| / a) cuts off along the ellipsoid aA and phi(y) = b^2 rho(|y| / b)^2 / 2
    (rho the primitive of zeta) along the disk bB. Equal to the rotation by t0 in the complex
    line Y on sigma C and to the identity outside C.

    Points and their variational equations are integrated in batches with DOP853.
    """

    symplectic = True
    inner_tol = FLOW_INNER_TOL
    support_tol = FLOW_SUPPORT_TOL

    def __init__(self, X, Y, Q, a, b, sigma, t0, rtol=FLOW_RTOL, atol=FLOW_ATOL, batch=FLOW_BATCH):
        dim = Y.shape[0]
        J = standard_j(dim // 2)
        R = scipy.linalg.expm(t0 * J @ Y @ Y.T)
        super(SymplecticCylinderKernel, self).__init__(dim, R, sigma, [dim - 2, 2])
        self.X, self.Y, self.Q = X, Y, Q
        self.a, self.b, self.t0 = a, b, t0
        self.rtol, self.atol, self.batch = rtol, atol, batch
        self._frame = np.hstack([X, Y])
        self._Jc = self._frame.T @ J @ self._frame
        self._A, self._Ainv = _sqrt_pd(Q)
        self.level = 0.5 * b * b * cutoff_integral(1.0, sigma) ** 2

    def _derivatives(self, C, hessian=True):
        """Gradient and Hessian of the Hamiltonian in (x, y) coordinates."""
        k = self.dim - 2
        a, b, sigma = self.a, self.b, self.sigma
        x, y = C[:, :k], C[:, k:]
        Qx = x @ self.Q
        r = np.sqrt(np.maximum(np.einsum('ni,ni->n', x, Qx), 0.0))
        psi, dpsi, ddpsi = smooth_cutoff(r / a, sigma, 1.0)
        safe_r = np.where(r > 0, r, 1.0)
        unit_x = Qx / safe_r[:, None]
        grad_psi = (dpsi / a)[:, None] * unit_x

        ynorm = np.linalg.norm(y, axis=1)
        s = ynorm / b
        rho = cutoff_integral(s, sigma)
        zeta, dzeta, _ = smooth_cutoff(s, sigma, 1.0)
        phi = 0.5 * b * b * rho ** 2
        safe_y = np.where(ynorm > 0, ynorm, 1.0)
        coef = np.where(s <= sigma, 1.0, b * rho * zeta / safe_y)
        grad_phi = coef[:, None] * y

        gap = self.level - phi
        grad = np.hstack([-gap[:, None] * grad_psi, psi[:, None] * grad_phi])
        if not hessian:
            return grad, None

        n = len(C)
        outer_x = unit_x[:, :, None] * unit_x[:, None, :]
        hess_psi = (ddpsi / a ** 2)[:, None, None] * outer_x + \
            (dpsi / (a * safe_r))[:, None, None] * (self.Q - outer_x)
        unit_y = y / safe_y[:, None]
        outer_y = unit_y[:, :, None] * unit_y[:, None, :]
        radial = zeta ** 2 + rho * dzeta
        hess_phi = coef[:, None, None] * (np.eye(2) - outer_y) + radial[:, None, None] * outer_y
        hess = np.empty((n, self.dim, self.dim))
        hess[:, :k, :k] = -gap[:, None, None] * hess_psi
        hess[:, :k, k:] = grad_psi[:, :, None] * grad_phi[:, None, :]
        hess[:, k:, :k] = np.transpose(hess[:, :k, k:], (0, 2, 1))
        hess[:, k:, k:] = psi[:, None, None] * hess_phi
        return grad, hess

    def hamiltonian(self, Z):
        C = _as_points(Z)[0] @ self._frame
        k = self.dim - 2
        x, y = C[:, :k], C[:, k:]
        r = np.sqrt(np.maximum(np.einsum('ni,ij,nj->n', x, self.Q, x), 0.0))
        psi = smooth_cutoff(r / self.a, self.sigma, 1.0)[0]
        phi = 0.5 * self.b ** 2 * cutoff_integral(np.linalg.norm(y, axis=1) / self.b, self.sigma) ** 2
        return self.level - psi * (self.level - phi)

    def _rhs(self, t, state, n, variational):
        d = self.dim
        C = state[:n * d].reshape(n, d)
        grad, hess = self._derivatives(C, hessian=variational)
        dC = grad @ self._Jc.T
        if not variational:
            return dC.ravel()
        Phi = state[n * d:].reshape(n, d, d)
        dPhi = np.einsum('ij,njk,nkl->nil', self._Jc, hess, Phi)
        return np.concatenate([dC.ravel(), dPhi.ravel()])

    def _flow(self, C, variational):
        n, d = C.shape
        state = C.ravel()
        if variational:
            state = np.concatenate([state, np.broadcast_to(np.eye(d), (n, d, d)).ravel()])
        sol = solve_ivp(self._rhs, (0.0, self.t0), state, method='DOP853', rtol=self.rtol, atol=self.atol,
                        args=(n, variational))
        if not sol.success:
            raise FlowIntegrationError(sol.message)
        end = sol.y[:, -1]
        if not np.all(np.isfinite(end)):
            raise FlowIntegrationError('non-finite state')
        return end[:n * d].reshape(n, d), (end[n * d:].reshape(n, d, d) if variational else None)

    def evaluate(self, Z, jacobian=True):
        Z = np.asarray(Z, dtype=float)
        if self.t0 == 0.0:
            return IdentityKernel(self.dim).evaluate(Z, jacobian)
        C = Z @ self._frame
        ends, phis = [], []
        for start in range(0, len(C), self.batch):
            end, Phi = self._flow(C[start:start + self.batch], jacobian)
            ends.append(end)
            phis.append(Phi)
        values = np.vstack(ends) @ self._frame.T if ends else np.zeros_like(Z)
        if not jacobian:
            return values, None
        jac = _conjugate(self._frame, np.concatenate(phis)) if phis else np.zeros((0, self.dim, self.dim))
        return values, jac

    def to_normalized(self, Z):
        k = self.dim - 2
        C = Z @ self._frame
        return np.hstack([C[:, :k] @ self._A / self.a, C[:, k:] / self.b])

    def from_normalized(self, P):
        k = self.dim - 2
        return (self.a * P[:, :k] @ self._Ainv) @ self.X.T + (self.b * P[:, k:]) @ self.Y.T

    def to_dict(self):
        res = super(SymplecticCylinderKernel, self).to_dict()
        res.update({'a': self.a, 'b': self.b, 't0': self.t0, 'rtol': self.rtol, 'atol': self.atol})
        return res


def symplectic_cylinder_kernel(Y, a, b, sigma, t0, X=None, Q=None, eps0=None, rtol=FLOW_RTOL,
                               atol=FLOW_ATOL):
    """Hamiltonian kernel rotating the complex line Y by t0 inside sigma C, C = aA + bB.

    @param Y: 2q x 2 basis of a J-invariant plane (orthonormalized here)
    @param X: basis of X = Y^perp = Y^omega (default: the orthogonal complement)
    @param Q: quadratic form on X coordinates, A = {Q <= 1} (default: identity)
    @param eps0: closeness target; if given, |t0| must be below the flow budget's t_bar
    @rtype: L{SymplecticCylinderKernel}
    @raise ThinnessError: if a <= ||A|| b
    @raise AngleBudgetError: if |t0| exceeds the budget
    @raise DegenerateError: if Y is not a complex line
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError('sigma must lie in (0, 1), got %g' % sigma)
    if a <= 0 or b <= 0:
        raise ValueError('cylinder scales must be positive')
    Y = Subspace(Y).basis
    dim = Y.shape[0]
    if dim % 2 or Y.shape[1] != 2 or dim < 4:
        raise ValueError('symplectic cylinder needs a plane in R^{2q}, q >= 2')
    J = standard_j(dim // 2)
    drift = np.linalg.norm(J @ Y - Y @ (Y.T @ J @ Y))
    if drift > 1e-9:
        raise DegenerateError('degenerate configuration: plane is not invariant under J (%g)' % drift)
    X = Subspace(Y).complement().basis if X is None else np.asarray(X, dtype=float)
    if X.shape != (dim, dim - 2) or np.max(np.abs(np.hstack([X, Y]).T @ np.hstack([X, Y]) - np.eye(dim))) > 1e-9:
        raise ValueError('X must be an orthonormal basis of the orthogonal complement of Y')
    Q = np.eye(dim - 2) if Q is None else np.asarray(Q, dtype=float)
    _sqrt_pd(Q)
    qmin, qmax = _eig_range(Q)
    tau = math.sqrt(qmax)
    if a <= tau * b:
        raise ThinnessError(a, tau, b)
    if eps0 is not None:
        budget = cylinder_flow_budget(eps0, sigma)
        if abs(t0) >= budget.t_bar:
            raise AngleBudgetError(abs(t0), budget.t_bar)
        diameter = 2.0 * math.hypot(a / math.sqrt(qmin), b)
        if diameter >= eps0:
            log_warn('Cylinder diameter %g is not below eps0 = %g, displacement bound void' % (diameter, eps0))
    return SymplecticCylinderKernel(X, Y, Q, float(a), float(b), float(sigma), float(t0), rtol, atol)


# --- verification -------------------------------------------------------------------------

def grid_points(blocks, count, seed=0, scale=GRID_SCALE):
    """Deterministic scrambled Halton points, uniform in the product of balls of radius
    `scale' (normalized coordinates, block sizes `blocks').

    @rtype: array (count, sum(blocks))
    """
    dim = sum(blocks)
    sampler = qmc.Halton(d=dim, scramble=True, seed=seed)
    kept = []
    have = 0
    while have < count:
        P = scale * (2.0 * sampler.random(max(2 * (count - have), 64)) - 1.0)
        P = P[np.all(_block_norms(P, blocks) <= scale, axis=1)]
        kept.append(P)
        have += len(P)
    return np.vstack(kept)[:count]


class KernelReport(namedtuple('KernelReport', ['points', 'det_residual', 'identity_distance', 'displacement',
                                               'outside_points', 'outside_moved', 'inner_points',
                                               'inner_mismatch', 'inner_error', 'symplectic_residual',
                                               'fd_error'])):
    """Maxima over the verification grid: |det Dh - 1|, ||Dh - I||, ||h(z) - z||; counts of
    moved points outside C and of points of sigma C where h differs from R (with the largest
    inner error); ||Dh^T J Dh - J|| for symplectic kernels (None otherwise); the largest entry
    difference between the Jacobian and central finite differences."""

    def to_dict(self):
        return dict(self._asdict())


def _chunk_stats(kernel, P):
    Z = kernel.from_normalized(P)
    values, jac = kernel.evaluate(Z)
    d = kernel.dim
    eye = np.eye(d)
    moved = np.linalg.norm(values - Z, axis=1)
    radius = np.max(_block_norms(P, kernel.blocks), axis=1)
    outside = radius > 1.0
    inner = radius <= kernel.sigma
    stats = {'points': len(P),
             'det_residual': float(np.max(np.abs(np.linalg.det(jac) - 1.0))),
             'identity_distance': float(np.max(np.linalg.norm(jac - eye, 2, axis=(1, 2)))),
             'displacement': float(np.max(moved)),
             'outside_points': int(np.sum(outside)),
             'outside_moved': int(np.sum(moved[outside] > kernel.support_tol)),
             'inner_points': 0, 'inner_mismatch': 0, 'inner_error': 0.0, 'symplectic_residual': None}
    if kernel.inner_exact and np.any(inner):
        err = np.linalg.norm(values[inner] - Z[inner] @ kernel.R.T, axis=1)
        stats.update({'inner_points': int(np.sum(inner)), 'inner_mismatch': int(np.sum(err > kernel.inner_tol)),
                      'inner_error': float(np.max(err))})
    if kernel.symplectic:
        J = standard_j(d // 2)
        form = np.einsum('nji,jk,nkl->nil', jac, J, jac) - J
        stats['symplectic_residual'] = float(np.max(np.linalg.norm(form, 2, axis=(1, 2))))
    return stats


def finite_difference_error(kernel, Z, step=FD_STEP):
    """Largest entry of |Dh - (h(z + step e_j) - h(z - step e_j)) / (2 step)| over the points."""
    Z = _as_points(Z)[0]
    if not len(Z):
        return 0.0
    n, d = Z.shape
    shifts = step * np.eye(d)
    plus = kernel((Z[:, None, :] + shifts[None]).reshape(-1, d)).reshape(n, d, d)
    minus = kernel((Z[:, None, :] - shifts[None]).reshape(-1, d)).reshape(n, d, d)
    fd = np.transpose((plus - minus) / (2.0 * step), (0, 2, 1))
    return float(np.max(np.abs(fd - kernel.jacobian(Z))))


def kernel_verify(kernel, points=GRID_POINTS, seed=0, fd_points=1000, fd_step=FD_STEP, threads=None):
    """Evaluate a kernel on a low-discrepancy grid inside 2C and collect a L{KernelReport}.

    @param kernel: a L{Kernel}
    @param points: grid size
    @param fd_points: number of grid points used for the finite-difference cross-check
    @param threads: worker count for the chunked evaluation
    @rtype: L{KernelReport}
    """
    P = grid_points(kernel.blocks, points, seed)
    chunks = [P[i:i + CHUNK_SIZE] for i in range(0, len(P), CHUNK_SIZE)]
    parts = parallel_map(lambda chunk: _chunk_stats(kernel, chunk), chunks, threads)
    res = {'points': 0, 'det_residual': 0.0, 'identity_distance': 0.0, 'displacement': 0.0,
           'outside_points': 0, 'outside_moved': 0, 'inner_points': 0, 'inner_mismatch': 0,
           'inner_error': 0.0, 'symplectic_residual': 0.0 if kernel.symplectic else None}
    for part in parts:
        for key in ('points', 'outside_points', 'outside_moved', 'inner_points', 'inner_mismatch'):
            res[key] += part[key]
        for key in ('det_residual', 'identity_distance', 'displacement', 'inner_error'):
            res[key] = max(res[key], part[key])
        if kernel.symplectic:
            res['symplectic_residual'] = max(res['symplectic_residual'], part['symplectic_residual'])
    res['fd_error'] = finite_difference_error(kernel, kernel.from_normalized(P[:fd_points]), fd_step) \
        if fd_points else 0.0
    log_debug('kernel_verify: %s' % str(res))
    return KernelReport(**res)


def radial_profile(kernel, points=2000, seed=0, bins=20):
    """Largest displacement and Jacobian distance to the identity per shell of the largest
    normalized block radius in [0, 2].

    @rtype: list
    @return: rows (r_lo, r_hi, points, max ||h(z) - z||, max ||Dh - I||)
    """
    P = grid_points(kernel.blocks, points, seed)
    Z = kernel.from_normalized(P)
    values, jac = kernel.evaluate(Z)
    radius = np.max(_block_norms(P, kernel.blocks), axis=1)
    moved = np.linalg.norm(values - Z, axis=1)
    dist = np.linalg.norm(jac - np.eye(kernel.dim), 2, axis=(1, 2))
    edges = np.linspace(0.0, GRID_SCALE, bins + 1)
    shell = np.clip(np.searchsorted(edges, radius, side='right') - 1, 0, bins - 1)
    rows = []
    for k in range(bins):
        mask = shell == k
        rows.append((float(edges[k]), float(edges[k + 1]), int(np.sum(mask)),
                     float(moved[mask].max()) if np.any(mask) else 0.0,
                     float(dist[mask].max()) if np.any(mask) else 0.0))
    return rows
