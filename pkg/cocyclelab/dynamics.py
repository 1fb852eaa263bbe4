#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Base systems, cocycle families and orbit segments.

A base system moves states; a cocycle evaluates a d x d matrix at each state. Matrices
along an orbit are produced in vectorized batches, their long products are kept in
QR-factored form (orthogonal factor, log-scale diagonal, unit upper-triangular rest).
"""

from collections import namedtuple

import numpy as np

from cocyclelab.errors import GroupViolationError, ConfigError
from cocyclelab.linalg import GENERAL_LINEAR, SPECIAL_LINEAR, SYMPLECTIC, GROUPS, GROUP_TOL, \
    project_group, standard_j, check_invertible
from cocyclelab.logf import log_debug, log_warn
from cocyclelab.rnd import generator

# special-linear matrices within this residual are re-projected instead of rejected
REPROJECT_TOL = 1e-6
EXP_CLAMP = 700.0


# --- base systems -----------------------------------------------------------------------

class BaseSystem(object):
    """Invertible measure-preserving map; states are reals mod 1, vectors mod 1 or indices.
    The `phase' of a state is the circle coordinate cocycle functions are evaluated at."""

    kind = None

    def step(self, x):
        raise NotImplementedError()

    def step_back(self, x):
        raise NotImplementedError()

    def orbit(self, x, n):
        """States x, f(x), ..., f^n(x) as an array with n + 1 rows."""
        states = [x]
        for _ in range(n):
            x = self.step(x)
            states.append(x)
        return np.array(states)

    def backward_orbit(self, x, n):
        """States f^-n(x), ..., f^-1(x), x (forward order)."""
        states = [x]
        for _ in range(n):
            x = self.step_back(x)
            states.append(x)
        return np.array(states[::-1])

    def phase(self, states):
        return np.asarray(states, dtype=float)

    def sample(self, rng, k):
        """k start points drawn from the invariant (Lebesgue / counting) measure."""
        raise NotImplementedError()

    def same_state(self, x, y):
        return bool(np.allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                                rtol=0.0, atol=1e-12))

    def describe(self):
        return {'kind': self.kind}


class CircleRotation(BaseSystem):
    """x -> x + alpha mod 1."""

    kind = 'circle-rotation'

    def __init__(self, alpha):
        self.alpha = float(alpha)

    def step(self, x):
        return (x + self.alpha) % 1.0

    def step_back(self, x):
        return (x - self.alpha) % 1.0

    def orbit(self, x, n):
        return np.mod(x + self.alpha * np.arange(n + 1), 1.0)

    def backward_orbit(self, x, n):
        return np.mod(x - self.alpha * np.arange(n, -1, -1), 1.0)

    def sample(self, rng, k):
        return rng.random(k)

    def describe(self):
        return {'kind': self.kind, 'alpha': self.alpha}


class TorusTranslation(BaseSystem):
    """x -> x + vector mod 1 on the torus T^k; the phase is the first coordinate."""

    kind = 'torus-translation'

    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=float)

    def step(self, x):
        return np.mod(np.asarray(x) + self.vector, 1.0)

    def step_back(self, x):
        return np.mod(np.asarray(x) - self.vector, 1.0)

    def orbit(self, x, n):
        return np.mod(np.asarray(x)[None, :] + np.arange(n + 1)[:, None] * self.vector[None, :], 1.0)

    def backward_orbit(self, x, n):
        return np.mod(np.asarray(x)[None, :] - np.arange(n, -1, -1)[:, None] * self.vector[None, :], 1.0)

    def phase(self, states):
        return np.asarray(states, dtype=float)[..., 0]

    def sample(self, rng, k):
        return rng.random((k, len(self.vector)))

    def describe(self):
        return {'kind': self.kind, 'vector': self.vector.tolist()}


class CatMap(BaseSystem):
    """The cat map (x, y) -> (2x + y, x + y) mod 1."""

    kind = 'cat-map'

    def step(self, x):
        x = np.asarray(x, dtype=float)
        return np.mod(np.array([2.0 * x[0] + x[1], x[0] + x[1]]), 1.0)

    def step_back(self, x):
        x = np.asarray(x, dtype=float)
        return np.mod(np.array([x[0] - x[1], -x[0] + 2.0 * x[1]]), 1.0)

    def phase(self, states):
        return np.asarray(states, dtype=float)[..., 0]

    def sample(self, rng, k):
        return rng.random((k, 2))


class SymbolicSequence(BaseSystem):
    """Shift along an explicit periodic sequence of values; states are integer indices."""

    kind = 'symbolic'

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        if not len(self.values):
            raise ValueError('symbolic system needs a non-empty sequence')

    def step(self, x):
        return (int(x) + 1) % len(self.values)

    def step_back(self, x):
        return (int(x) - 1) % len(self.values)

    def orbit(self, x, n):
        return (int(x) + np.arange(n + 1)) % len(self.values)

    def backward_orbit(self, x, n):
        return (int(x) - np.arange(n, -1, -1)) % len(self.values)

    def phase(self, states):
        return self.values[np.asarray(states, dtype=int)]

    def sample(self, rng, k):
        return rng.integers(0, len(self.values), size=k)

    def same_state(self, x, y):
        return int(x) == int(y)

    def describe(self):
        return {'kind': self.kind, 'length': len(self.values)}


def step(system, x):
    """Next state of the base system."""
    return system.step(x)


# --- potentials and angle functions ----------------------------------------------------

class ZeroPotential(object):
    kind = 'zero'

    def __call__(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def describe(self):
        return {'kind': self.kind}


class CosinePotential(object):
    """V(theta) = 2 lambda cos(2 pi theta)."""

    kind = 'cosine'

    def __init__(self, coupling):
        self.coupling = float(coupling)

    def __call__(self, theta):
        return 2.0 * self.coupling * np.cos(2.0 * np.pi * np.asarray(theta, dtype=float))

    def describe(self):
        return {'kind': self.kind, 'lambda': self.coupling}


class TabulatedPotential(object):
    """Periodic linear interpolation of samples taken on the uniform grid k / N."""

    kind = 'table'

    def __init__(self, samples):
        self.samples = np.asarray(samples, dtype=float)
        grid = np.arange(len(self.samples) + 1) / float(len(self.samples))
        self._grid = grid
        self._vals = np.append(self.samples, self.samples[0])

    def __call__(self, theta):
        return np.interp(np.mod(np.asarray(theta, dtype=float), 1.0), self._grid, self._vals)

    def describe(self):
        return {'kind': self.kind, 'samples': self.samples.tolist()}


class StepAngle(object):
    """Piecewise constant angle: angles[k] on [starts[k], starts[k+1]) of the circle."""

    kind = 'steps'

    def __init__(self, starts, angles):
        order = np.argsort(starts)
        self.starts = np.asarray(starts, dtype=float)[order]
        self.angles = np.asarray(angles, dtype=float)[order]

    def __call__(self, phase):
        phase = np.mod(np.asarray(phase, dtype=float), 1.0)
        idx = np.searchsorted(self.starts, phase, side='right') - 1
        # phases before the first start belong to the last (wrapping) interval
        return self.angles[idx]

    def describe(self):
        return {'kind': self.kind, 'starts': self.starts.tolist(), 'angles': self.angles.tolist()}


class WindingAngle(object):
    """theta(x) = 2 pi k x (a loop of rotations of degree k)."""

    kind = 'winding'

    def __init__(self, degree):
        self.degree = int(degree)

    def __call__(self, phase):
        return 2.0 * np.pi * self.degree * np.asarray(phase, dtype=float)

    def describe(self):
        return {'kind': self.kind, 'degree': self.degree}


# --- cocycles ---------------------------------------------------------------------------

class Cocycle(object):
    """Matrix-valued function on the base; `matrices' evaluates it along states."""

    kind = None
    dim = None
    group = GENERAL_LINEAR

    def evaluate(self, phases):
        raise NotImplementedError()

    def matrices(self, system, states):
        return self.evaluate(np.atleast_1d(system.phase(states)))

    def matrix(self, system, x):
        states = np.asarray([x]) if np.ndim(x) == 0 else np.asarray(x)[None, ...]
        return self.matrices(system, states)[0]

    def describe(self):
        return {'kind': self.kind, 'dim': self.dim, 'group': self.group}


def _infer_group(M):
    if abs(np.linalg.det(M) - 1.0) <= GROUP_TOL:
        return SPECIAL_LINEAR
    return GENERAL_LINEAR


class ConstantCocycle(Cocycle):
    kind = 'constant'

    def __init__(self, matrix, group=None):
        self.M = np.array(matrix, dtype=float)
        self.dim = self.M.shape[0]
        check_invertible(self.M, 'constant cocycle matrix')
        self.group = group or _infer_group(self.M)
        if self.group not in GROUPS:
            raise ValueError('unknown group tag ' + str(self.group))

    def evaluate(self, phases):
        return np.broadcast_to(self.M, (len(phases),) + self.M.shape).copy()

    def describe(self):
        desc = super(ConstantCocycle, self).describe()
        desc['matrix'] = self.M.tolist()
        return desc


def schrodinger_matrix(E, V, theta):
    """Transfer matrix [[E - V(theta), -1], [1, 0]] (determinant 1)."""
    return np.array([[E - float(V(theta)), -1.0], [1.0, 0.0]])


class SchrodingerCocycle(Cocycle):
    """Schroedinger transfer matrices over the base, energy E and potential V."""

    kind = 'schrodinger'
    dim = 2
    group = SPECIAL_LINEAR

    def __init__(self, energy, potential=None):
        self.energy = float(energy)
        self.potential = potential or ZeroPotential()

    def evaluate(self, phases):
        out = np.zeros((len(phases), 2, 2))
        out[:, 0, 0] = self.energy - self.potential(phases)
        out[:, 0, 1] = -1.0
        out[:, 1, 0] = 1.0
        return out

    def describe(self):
        return {'kind': self.kind, 'E': self.energy, 'V': self.potential.describe(), 'group': self.group}


class ShearRotateCocycle(Cocycle):
    """A(x) = R_theta(x) D: rotation by theta(x) in the first coordinate plane composed with
    a fixed diagonal matrix D."""

    kind = 'shear-rotate'

    def __init__(self, diag, angle):
        self.diag = np.asarray(diag, dtype=float)
        self.dim = len(self.diag)
        if self.dim < 2:
            raise ValueError('shear-rotate needs dimension >= 2')
        self.angle = angle
        self.group = SPECIAL_LINEAR if abs(np.prod(self.diag) - 1.0) <= GROUP_TOL else GENERAL_LINEAR

    def evaluate(self, phases):
        theta = self.angle(phases)
        cos, sin = np.cos(theta), np.sin(theta)
        out = np.zeros((len(phases), self.dim, self.dim))
        out[:, np.arange(self.dim), np.arange(self.dim)] = self.diag
        out[:, 0, 0] = cos * self.diag[0]
        out[:, 0, 1] = -sin * self.diag[1]
        out[:, 1, 0] = sin * self.diag[0]
        out[:, 1, 1] = cos * self.diag[1]
        return out

    def describe(self):
        return {'kind': self.kind, 'diag': self.diag.tolist(), 'angle': self.angle.describe(),
                'group': self.group}


class WindingCocycle(ShearRotateCocycle):
    """A(x) = R_{2 pi k x} D; for k != 0 not homotopic to a constant cocycle."""

    kind = 'winding'

    def __init__(self, diag, degree):
        super(WindingCocycle, self).__init__(diag, WindingAngle(degree))


class TableCocycle(Cocycle):
    """Explicit matrix list indexed by the states of a symbolic system."""

    kind = 'table'

    def __init__(self, matrices, group=None):
        self.table = np.array(matrices, dtype=float)
        self.dim = self.table.shape[-1]
        self.group = group or (SPECIAL_LINEAR if np.all(np.abs(np.linalg.det(self.table) - 1.0) <= GROUP_TOL)
                               else GENERAL_LINEAR)

    def matrices(self, system, states):
        if not isinstance(system, SymbolicSequence):
            raise ValueError('table cocycles are indexed by symbolic states')
        return self.table[np.asarray(states, dtype=int) % len(self.table)]

    def describe(self):
        return {'kind': self.kind, 'dim': self.dim, 'length': len(self.table), 'group': self.group}


def check_matrices(matrices, group, offset=0):
    """Enforce the group invariant on a batch of matrices: special-linear drift up to
    REPROJECT_TOL is re-projected, anything beyond GROUP_TOL otherwise raises.

    @return: the (possibly re-projected) matrices
    """
    if not np.all(np.isfinite(matrices)):
        bad = int(np.argwhere(~np.all(np.isfinite(matrices), axis=(1, 2)))[0, 0])
        raise GroupViolationError(offset + bad, group, float('inf'))
    if group == GENERAL_LINEAR:
        return matrices
    if group == SPECIAL_LINEAR:
        resid = np.abs(np.linalg.det(matrices) - 1.0)
    elif group == SYMPLECTIC:
        J = standard_j(matrices.shape[-1] // 2)
        resid = np.max(np.abs(np.swapaxes(matrices, 1, 2) @ J @ matrices - J), axis=(1, 2))
    else:
        resid = np.max(np.abs(np.swapaxes(matrices, 1, 2) @ matrices - np.eye(matrices.shape[-1])), axis=(1, 2))
    worst = int(np.argmax(resid))
    if resid[worst] <= GROUP_TOL:
        return matrices
    if group == SPECIAL_LINEAR and resid[worst] <= REPROJECT_TOL:
        log_debug('re-projecting special-linear matrices, residual %g' % resid[worst])
        return project_group(matrices, group)
    raise GroupViolationError(offset + worst, group, float(resid[worst]))


# --- orbits -----------------------------------------------------------------------------

class OrbitSegment(object):
    """States x_0, ..., x_n with matrices A_0, ..., A_{n-1} along them.

    Partial products A^j = A_{j-1} ... A_0 are available in factored form
    A^j = Q_j diag(exp(log_r_j)) N_j (N_j unit upper triangular), computed lazily.
    """

    def __init__(self, states, matrices, group=GENERAL_LINEAR, system=None):
        self.states = np.asarray(states)
        self.matrices = np.asarray(matrices, dtype=float)
        if len(self.matrices) < 1:
            raise ValueError('orbit segment needs n >= 1')
        if len(self.states) != len(self.matrices) + 1:
            raise ValueError('orbit segment needs n + 1 states for n matrices')
        self.group = group
        self.system = system
        self._factors = None

    @property
    def n(self):
        return len(self.matrices)

    @property
    def dim(self):
        return self.matrices.shape[-1]

    def __len__(self):
        return self.n

    def sub_segment(self, start, stop):
        """Segment of steps start, ..., stop - 1."""
        if not 0 <= start < stop <= self.n:
            raise ValueError('invalid sub-segment [%d, %d) of a length-%d orbit' % (start, stop, self.n))
        return OrbitSegment(self.states[start:stop + 1], self.matrices[start:stop], self.group, self.system)

    def product(self, stop=None, start=0):
        """Dense product A_{stop-1} ... A_start (identity for an empty range)."""
        stop = self.n if stop is None else stop
        prod = np.eye(self.dim)
        for mat in self.matrices[start:stop]:
            prod = mat @ prod
        return prod

    def _factor(self):
        n, d = self.n, self.dim
        Qs = np.empty((n + 1, d, d))
        logr = np.empty((n + 1, d))
        Ns = np.empty((n + 1, d, d))
        Qs[0], logr[0], Ns[0] = np.eye(d), 0.0, np.eye(d)
        upper = np.triu(np.ones((d, d), dtype=bool))
        clamped = None
        for j in range(n):
            Q, T = np.linalg.qr(self.matrices[j] @ Qs[j])
            signs = np.where(np.diag(T) < 0.0, -1.0, 1.0)
            Q = Q * signs[None, :]
            T = signs[:, None] * T
            diag = np.diag(T)
            expo = np.where(upper, logr[j][None, :] - logr[j][:, None], 0.0)
            if clamped is None and np.any((expo > EXP_CLAMP) & (T != 0.0)):
                clamped = j
            Ns[j + 1] = np.where(upper, (T / diag[:, None]) * np.exp(np.minimum(expo, EXP_CLAMP)), 0.0) @ Ns[j]
            logr[j + 1] = logr[j] + np.log(diag)
            Qs[j + 1] = Q
        if clamped is not None:
            log_warn('factored product clamped from step %d: exponent gap above %g nats' % (clamped, EXP_CLAMP))
        self._factors = (Qs, logr, Ns)

    def factored(self, j):
        """(Q_j, log_r_j, N_j) of the j-th partial product."""
        if self._factors is None:
            self._factor()
        Qs, logr, Ns = self._factors
        return Qs[j], logr[j], Ns[j]

    def recompose(self, j):
        Q, logr, N = self.factored(j)
        return Q @ (np.exp(logr)[:, None] * N)

    def log_norm(self, j=None):
        """log ||A^j|| from the factored form (no overflow)."""
        j = self.n if j is None else j
        _, logr, N = self.factored(j)
        top = logr.max()
        return float(top + np.log(np.linalg.norm(np.exp(logr - top)[:, None] * N, 2)))


class OrbitSource(namedtuple('OrbitSource', ['system', 'cocycle', 'x'])):
    """A base system, a cocycle and a start point: produces matrices along the orbit."""

    @property
    def dim(self):
        return self.cocycle.dim

    def segment(self, n):
        return orbit_segment(self.system, self.cocycle, self.x, n)

    def advance(self, n):
        """The same source started at f^n(x)."""
        x = self.system.orbit(self.x, n)[-1]
        return OrbitSource(self.system, self.cocycle, x)

    def matrix_chunks(self, n, chunk=8192):
        """Yield the matrices A_0, ..., A_{n-1} in batches."""
        x = self.x
        done = 0
        while done < n:
            size = min(chunk, n - done)
            states = self.system.orbit(x, size)
            mats = self.cocycle.matrices(self.system, states[:-1])
            yield check_matrices(mats, self.cocycle.group, done)
            x = states[-1]
            done += size

    def past_matrices(self, n):
        """The matrices A(f^-n x), ..., A(f^-1 x) in forward time order."""
        states = self.system.backward_orbit(self.x, n)
        return check_matrices(self.cocycle.matrices(self.system, states[:-1]), self.cocycle.group, -n)

    def future_matrices(self, n):
        states = self.system.orbit(self.x, n)
        return check_matrices(self.cocycle.matrices(self.system, states[:-1]), self.cocycle.group)


def orbit_segment(system, cocycle, x, n):
    """Orbit segment of length n from x.

    @raise GroupViolationError: a matrix fails the cocycle's group invariant
    """
    if n < 1:
        raise ValueError('orbit segment needs n >= 1')
    states = system.orbit(x, n)
    mats = check_matrices(cocycle.matrices(system, states[:-1]), cocycle.group)
    return OrbitSegment(states, mats, cocycle.group, system)


def constant_orbit(matrix, n, group=None):
    """Orbit segment of a constant cocycle over a circle rotation (start 0)."""
    cocycle = ConstantCocycle(matrix, group)
    return orbit_segment(CircleRotation(0.6180339887498949), cocycle, 0.0, n)


def witness_instance(ell, m, diag=(2.0, 0.5)):
    """Symbolic shear-rotate orbit with a non-dominated window in the middle: ell steps of
    D, m steps of R_{pi/2} D (m even, so the window product is +-I), then ell steps of D.

    @rtype: tuple
    @return: (system, cocycle, x, n)
    """
    if m % 2:
        raise ValueError('witness window length must be even')
    values = [0.25] * ell + [0.75] * m + [0.25] * ell
    system = SymbolicSequence(values)
    cocycle = ShearRotateCocycle(diag, StepAngle([0.0, 0.5], [0.0, np.pi / 2.0]))
    return system, cocycle, 0, len(values)


# --- configuration factories ------------------------------------------------------------

def system_from_config(cfg):
    kind = cfg.get('system', 'circle-rotation')
    if kind == 'circle-rotation':
        return CircleRotation(cfg.get('alpha', 0.6180339887498949))
    if kind == 'torus-translation':
        return TorusTranslation(cfg.get('vector', [0.6180339887498949, 0.41421356237309515]))
    if kind == 'cat-map':
        return CatMap()
    if kind == 'symbolic':
        if not cfg.get('sequence'):
            raise ConfigError('sequence', 'symbolic system needs the `sequence` key')
        return SymbolicSequence(cfg['sequence'])
    raise ConfigError('system', 'unknown system kind: ' + str(kind))


def potential_from_config(cfg):
    kind = cfg.get('V', 'zero')
    if kind == 'zero':
        return ZeroPotential()
    if kind == 'cosine':
        return CosinePotential(cfg.get('lambda', 1.0))
    if kind == 'table':
        if not cfg.get('potential_table'):
            raise ConfigError('potential_table', 'tabulated potential needs `potential_table`')
        return TabulatedPotential(cfg['potential_table'])
    raise ConfigError('V', 'unknown potential: ' + str(kind))


def cocycle_from_config(cfg):
    kind = cfg.get('cocycle', 'constant')
    group = cfg.get('group')
    if group is not None and group not in GROUPS:
        raise ConfigError('group', 'unknown group tag: ' + str(group))
    if kind == 'constant':
        if cfg.get('matrix') is None:
            raise ConfigError('matrix', 'constant cocycle needs the `matrix` key')
        return ConstantCocycle(cfg['matrix'], group)
    if kind == 'schrodinger':
        return SchrodingerCocycle(cfg.get('E', 0.0), potential_from_config(cfg))
    if kind == 'shear-rotate':
        steps = cfg.get('steps', [0.0, 0.0, 0.5, np.pi / 2.0])
        if len(steps) % 2:
            raise ConfigError('steps', 'steps must be start/angle pairs')
        return ShearRotateCocycle(cfg.get('diag', [2.0, 0.5]), StepAngle(steps[0::2], steps[1::2]))
    if kind == 'winding':
        return WindingCocycle(cfg.get('diag', [2.0, 0.5]), cfg.get('winding', 1))
    if kind == 'table':
        flat = cfg.get('table')
        dim = cfg.get('dim')
        if not flat or not dim or len(flat) % (dim * dim):
            raise ConfigError('table', 'table cocycle needs `table` (flattened matrices) and `dim`')
        return TableCocycle(np.reshape(flat, (-1, dim, dim)), group)
    raise ConfigError('cocycle', 'unknown cocycle kind: ' + str(kind))


def start_point(cfg, system, default_seed=0):
    """Start point from the `x' key, or a seeded uniform sample."""
    x = cfg.get('x')
    if x is None:
        rng = generator(cfg.get('seed', default_seed))
        return system.sample(rng, 1)[0]
    if isinstance(system, SymbolicSequence):
        return int(x[0])
    if isinstance(system, (TorusTranslation, CatMap)):
        if len(x) < 2:
            raise ConfigError('x', 'start point needs two coordinates for ' + system.kind)
        return np.asarray(x, dtype=float)
    return float(x[0])
