#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Matrix and subspace geometry: norms and co-norms, principal angles, exterior powers,
the standard symplectic form and the angle-distortion inequalities used by the
perturbation constructions.
"""

from itertools import combinations

import numpy as np
import scipy.linalg

from cocyclelab.errors import NonInvertibleError, DegenerateError, NotLagrangianError

GENERAL_LINEAR = 'general-linear'
SPECIAL_LINEAR = 'special-linear'
SYMPLECTIC = 'symplectic'
ORTHOGONAL = 'orthogonal'
GROUPS = (GENERAL_LINEAR, SPECIAL_LINEAR, SYMPLECTIC, ORTHOGONAL)

GROUP_TOL = 1e-9
ORTHONORMAL_TOL = 1e-10
TRANSVERSAL_TOL = 1e-10
LAGRANGIAN_TOL = 1e-9


def standard_j(q):
    """The standard skew matrix [[0, -I], [I, 0]] on R^{2q} (multiplication by i in the
    coordinates z_k = x_k + i y_k)."""
    eye = np.eye(q)
    zero = np.zeros((q, q))
    return np.block([[zero, -eye], [eye, zero]])


class SymplecticForm(object):
    """The standard symplectic form omega(u, v) = <J u, v> on R^{2q}."""

    def __init__(self, dim):
        if dim % 2:
            raise ValueError('symplectic form needs even dimension, got %d' % dim)
        self.dim = dim
        self.q = dim // 2
        self.J = standard_j(self.q)
        self.C_omega = 1.0

    def omega(self, u, v):
        return float(np.dot(self.J @ u, v))

    def gram(self, U, V=None):
        """Matrix of pairings omega(U[:, i], V[:, j])."""
        V = U if V is None else V
        return (self.J @ U).T @ V

    def isotropy_residual(self, subspace):
        """Largest |omega(e_i, e_j)| over the orthonormal basis vectors of the subspace."""
        basis = subspace.basis if isinstance(subspace, Subspace) else subspace
        return float(np.max(np.abs(self.gram(basis)))) if basis.shape[1] else 0.0

    def is_lagrangian(self, subspace, tol=LAGRANGIAN_TOL):
        return subspace.dim == self.q and self.isotropy_residual(subspace) <= tol

    def check_lagrangian(self, *subspaces):
        """@raise NotLagrangianError: if any subspace is not Lagrangian"""
        for sub in subspaces:
            if sub.dim != self.q:
                raise NotLagrangianError(float('inf'))
            res = self.isotropy_residual(sub)
            if res > LAGRANGIAN_TOL:
                raise NotLagrangianError(res)

    def skew_complement(self, subspace):
        """The symplectic orthogonal S^omega = (J S)^perp."""
        return Subspace(self.J @ subspace.basis).complement()


# --- norms ------------------------------------------------------------------------------

def norm(L):
    """Operator (spectral) norm."""
    return float(np.linalg.norm(L, 2))


def conorm(L):
    """Co-norm m(L) = smallest singular value = 1 / ||L^-1||.

    @raise NonInvertibleError: if L is singular
    """
    svals = scipy.linalg.svdvals(np.asarray(L, dtype=float))
    if svals[-1] <= 0.0 or svals[-1] <= svals[0] * np.finfo(float).eps:
        raise NonInvertibleError()
    return float(svals[-1])


def restricted_norms(L, E):
    """Return (max, min) of ||L v|| over unit v in the subspace E.

    @rtype: tuple
    """
    svals = scipy.linalg.svdvals(np.asarray(L) @ E.basis)
    return float(svals[0]), float(svals[-1])


def check_invertible(L, what='matrix'):
    """@raise NonInvertibleError: if L has a non-finite entry or a zero singular value"""
    L = np.asarray(L, dtype=float)
    if not np.all(np.isfinite(L)) or scipy.linalg.svdvals(L)[-1] <= 0.0:
        raise NonInvertibleError(what)


def inf_norms(matrices):
    """(sup ||A_j||, sup ||A_j^-1||) over a stack of matrices."""
    svals = np.linalg.svd(np.asarray(matrices), compute_uv=False)
    if np.any(svals[..., -1] <= 0.0):
        raise NonInvertibleError('cocycle matrix')
    return float(svals[..., 0].max()), float((1.0 / svals[..., -1]).max())


def group_residual(M, group):
    """Residual of the group invariant (0 for the general-linear group)."""
    M = np.asarray(M)
    if group == SPECIAL_LINEAR:
        return float(np.max(np.abs(np.linalg.det(M) - 1.0)))
    if group == SYMPLECTIC:
        J = standard_j(M.shape[-1] // 2)
        return float(np.max(np.abs(np.swapaxes(M, -1, -2) @ J @ M - J)))
    if group == ORTHOGONAL:
        eye = np.eye(M.shape[-1])
        return float(np.max(np.abs(np.swapaxes(M, -1, -2) @ M - eye)))
    return 0.0


def project_group(M, group):
    """Re-project a matrix drifting off its group (special-linear: divide by det^(1/d));
    other groups are returned unchanged."""
    if group == SPECIAL_LINEAR:
        det = np.linalg.det(M)
        d = M.shape[-1]
        scale = np.sign(det) * np.abs(det) ** (1.0 / d)
        return M / np.asarray(scale)[..., None, None]
    return M


# --- subspaces -------------------------------------------------------------------------

class Subspace(object):
    """A k-dimensional subspace of R^d stored with an orthonormal basis (d x k)."""

    def __init__(self, vectors, orthonormal=False):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if vectors.shape[1] < 1 or vectors.shape[1] > vectors.shape[0]:
            raise DegenerateError('degenerate subspace of dimension %d in R^%d' % (vectors.shape[1],
                                                                                    vectors.shape[0]))
        if orthonormal:
            self.basis = vectors
        else:
            svals = scipy.linalg.svdvals(vectors)
            if svals[-1] <= 1e-12 * max(svals[0], 1e-300):
                raise DegenerateError('degenerate subspace: spanning vectors are dependent')
            self.basis, _ = np.linalg.qr(vectors)

    @staticmethod
    def coordinate(d, indices):
        """Span of the standard basis vectors e_i, i in indices (0-based)."""
        return Subspace(np.eye(d)[:, list(indices)], orthonormal=True)

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def ambient_dim(self):
        return self.basis.shape[0]

    def projector(self):
        return self.basis @ self.basis.T

    def complement(self):
        """Orthogonal complement (None for the whole space)."""
        if self.dim == self.ambient_dim:
            return None
        return Subspace(scipy.linalg.null_space(self.basis.T), orthonormal=True)

    def image(self, L):
        return Subspace(np.asarray(L) @ self.basis)

    def sum(self, other):
        """The sum of two subspaces; raises DegenerateError if it is not direct."""
        return Subspace(np.hstack([self.basis, other.basis]))

    def distance_residual(self, v):
        """||v - P v|| / ||v||; zero iff v lies in the subspace."""
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.basis @ (self.basis.T @ v)) / np.linalg.norm(v))

    def orthonormality_residual(self):
        return float(np.max(np.abs(self.basis.T @ self.basis - np.eye(self.dim))))

    def __repr__(self):
        return 'Subspace(dim=%d, ambient=%d)' % (self.dim, self.ambient_dim)


class Splitting(object):
    """An ordered direct-sum decomposition of R^d into subspaces."""

    def __init__(self, parts):
        self.parts = list(parts)
        d = self.parts[0].ambient_dim
        if sum(part.dim for part in self.parts) != d:
            raise DegenerateError('splitting dimensions do not sum to %d' % d)
        sigma = self.transversality()
        if sigma <= TRANSVERSAL_TOL:
            raise DegenerateError('splitting is not transversal (%g)' % sigma)

    def basis_matrix(self):
        return np.hstack([part.basis for part in self.parts])

    def transversality(self):
        return float(scipy.linalg.svdvals(self.basis_matrix())[-1])

    @property
    def dims(self):
        return [part.dim for part in self.parts]

    def __len__(self):
        return len(self.parts)

    def __getitem__(self, i):
        return self.parts[i]


def transversality(E, F):
    """Smallest singular value of the joint basis [E | F]."""
    return float(scipy.linalg.svdvals(np.hstack([E.basis, F.basis]))[-1])


# --- angles ----------------------------------------------------------------------------

def principal_angle(E, F):
    """Smallest principal angle between two subspaces (0 if they intersect).

    Evaluated as atan2(sin, cos) from both the cosine (largest singular value of
    E^T F) and the sine (smallest singular value of the residual of the smaller basis
    against the larger one), so tiny and near-right angles are both accurate.
    """
    QE, QF = E.basis, F.basis
    cos = min(float(scipy.linalg.svdvals(QE.T @ QF)[0]), 1.0)
    small, large = (QE, QF) if QE.shape[1] <= QF.shape[1] else (QF, QE)
    resid = small - large @ (large.T @ small)
    sin = min(float(scipy.linalg.svdvals(resid)[-1]), 1.0)
    return float(np.arctan2(sin, cos))


def sin_angle(v, w):
    """Sine of the angle between the lines through v and w."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0.0 or nw == 0.0:
        raise DegenerateError('degenerate pair: zero vector')
    u = v / nv
    x = w / nw
    return float(min(np.linalg.norm(x - np.dot(u, x) * u), 1.0))


def vector_angle(v, w):
    """Angle in [0, pi/2] between the lines through v and w."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    cos = abs(np.dot(v, w)) / (np.linalg.norm(v) * np.linalg.norm(w))
    return float(np.arctan2(sin_angle(v, w), cos))


def angle_distortion_ratio(L, v, w):
    """sin angle(Lv, Lw) / sin angle(v, w); always within [m(L)/||L||, ||L||/m(L)].

    @raise DegenerateError: v and w collinear
    """
    sin_vw = sin_angle(v, w)
    if sin_vw <= 1e-14:
        raise DegenerateError('degenerate pair: collinear vectors')
    return sin_angle(L @ v, L @ w) / sin_vw


def planar_angle_bound_check(L, v, w):
    """Planar distortion bound: lhs = ||L|| / m(L) against
    rhs = 4 max(|Lv|/|Lw|, |Lw|/|Lv|) / (sin angle(v, w) sin angle(Lv, Lw)).

    @rtype: tuple
    @return: (lhs, rhs); lhs <= rhs holds for every invertible 2x2 L
    """
    L = np.asarray(L, dtype=float)
    if L.shape != (2, 2):
        raise ValueError('planar check needs a 2x2 matrix')
    sin_vw = sin_angle(v, w)
    if sin_vw <= 1e-14:
        raise DegenerateError('degenerate pair: collinear vectors')
    Lv, Lw = L @ v, L @ w
    ratio = np.linalg.norm(Lv) / np.linalg.norm(Lw)
    lhs = norm(L) / conorm(L)
    rhs = 4.0 * max(ratio, 1.0 / ratio) / (sin_vw * sin_angle(Lv, Lw))
    return float(lhs), float(rhs)


def triple_angle_check(A, B, C):
    """lhs = sin angle(A, B + C), rhs = sin angle(A, B) * sin angle(A + B, C); lhs >= rhs.

    @raise DegenerateError: 'degenerate configuration' when A + B or (A + B) + C is not direct
    """
    d = A.ambient_dim
    if A.dim + B.dim + C.dim > d:
        raise DegenerateError('degenerate configuration: dimensions exceed %d' % d)
    try:
        AB = A.sum(B)
        BC = B.sum(C)
        AB.sum(C)
    except DegenerateError:
        raise DegenerateError('degenerate configuration')
    lhs = np.sin(principal_angle(A, BC))
    rhs = np.sin(principal_angle(A, B)) * np.sin(principal_angle(AB, C))
    return float(lhs), float(rhs)


# --- exterior powers ------------------------------------------------------------------

def exterior_indices(d, p):
    """Lexicographic list of p-subsets of range(d)."""
    return list(combinations(range(d), p))


def exterior_power(L, p):
    """Matrix of the p-th exterior power in the lexicographic basis e_I (orthonormal,
    decomposable p-vectors have the parallelepiped volume as norm). Works on stacks of
    matrices (any leading dimensions).
    """
    L = np.asarray(L, dtype=float)
    d = L.shape[-1]
    if not 1 <= p <= d:
        raise ValueError('exterior power index %d outside [1, %d]' % (p, d))
    idx = np.array(exterior_indices(d, p))
    rows = idx[:, None, :, None]
    cols = idx[None, :, None, :]
    return np.linalg.det(L[..., rows, cols])


def wedge(vectors):
    """Coordinates of v_1 ^ ... ^ v_p (columns of `vectors') in the lexicographic basis."""
    vectors = np.asarray(vectors, dtype=float)
    d, p = vectors.shape
    idx = np.array(exterior_indices(d, p))
    return np.linalg.det(vectors[idx, :])


# --- products ---------------------------------------------------------------------------

def product_log_norm(matrices):
    """log ||A_{n-1} ... A_0|| with renormalization at every step.

    @rtype: float
    """
    matrices = np.asarray(matrices)
    prod = np.eye(matrices.shape[-1])
    log_scale = 0.0
    for mat in matrices:
        prod = mat @ prod
        scale = np.abs(prod).max()
        prod /= scale
        log_scale += np.log(scale)
    return float(log_scale + np.log(norm(prod)))


def normalized(v):
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise DegenerateError('degenerate: zero vector')
    return v / nv


# --- complex structure ------------------------------------------------------------------

def to_complex(v):
    """R^{2q} vector (x, y) as the complex q-vector x + i y."""
    q = len(v) // 2
    return np.asarray(v[:q]) + 1j * np.asarray(v[q:])


def hermitian(u, v):
    """Hermitian product <u, v>_C = sum conj(u_k) v_k; its real part is u . v and its
    imaginary part omega(u, v)."""
    return complex(np.vdot(to_complex(u), to_complex(v)))


# --- random generators (experiments and property tests) --------------------------------

def random_special_linear(d, rng, spread=1.0):
    """Random matrix with det 1 (Gaussian entries, rescaled)."""
    while True:
        M = rng.normal(scale=spread, size=(d, d))
        det = np.linalg.det(M)
        if abs(det) > 1e-3:
            break
    if det < 0:
        M[:, 0] = -M[:, 0]
    return project_group(M, SPECIAL_LINEAR)


def random_symplectic(q, rng, scale=0.5):
    """exp(J H) for a random symmetric H; a symplectic matrix near the identity for small
    scale."""
    H = rng.normal(scale=scale, size=(2 * q, 2 * q))
    H = (H + H.T) / 2.0
    return scipy.linalg.expm(standard_j(q) @ H)


def random_unitary(q, rng):
    """Random orthogonal and symplectic matrix (real form of a random unitary matrix)."""
    Z = rng.normal(size=(q, q)) + 1j * rng.normal(size=(q, q))
    U, _ = np.linalg.qr(Z)
    return np.block([[U.real, -U.imag], [U.imag, U.real]])


def lagrangian_pair(q):
    """The standard transversal Lagrangian pair (span of x-axes, span of y-axes)."""
    return Subspace.coordinate(2 * q, range(q)), Subspace.coordinate(2 * q, range(q, 2 * q))


# --- Lagrangian pairs -------------------------------------------------------------------

def symplectic_pairing_bound(E, F, v, form):
    """For transversal Lagrangian E, F and v in E: w = projection of J v to F along E,
    and the ratio |omega(v, w)| / (|v| |w|), which is at least sin angle(E, F) / C_omega.

    @rtype: tuple
    @return: (w, ratio)
    @raise NotLagrangianError: E or F not Lagrangian
    """
    form.check_lagrangian(E, F)
    if transversality(E, F) <= TRANSVERSAL_TOL:
        raise DegenerateError('degenerate configuration: E and F intersect')
    v = np.asarray(v, dtype=float)
    if np.linalg.norm(v) == 0.0 or E.distance_residual(v) > 1e-9:
        raise ValueError('v must be a non-zero vector of E')
    coeffs = np.linalg.solve(np.hstack([E.basis, F.basis]), form.J @ v)
    w = F.basis @ coeffs[E.dim:]
    ratio = abs(form.omega(v, w)) / (np.linalg.norm(v) * np.linalg.norm(w))
    return w, float(ratio)


def lagrangian_product_bounds(S, E, F, form):
    """Two-sided bound on m(S|E) ||S|F|| for a symplectic S and a transversal Lagrangian
    pair: C_omega^-2 sin alpha <= value <= C_omega^2 / sin beta with alpha, beta the angles
    before and after S.

    @rtype: tuple
    @return: (lower, value, upper)
    """
    form.check_lagrangian(E, F)
    _, co_e = restricted_norms(S, E)
    nm_f, _ = restricted_norms(S, F)
    alpha = principal_angle(E, F)
    beta = principal_angle(E.image(S), F.image(S))
    c2 = form.C_omega ** 2
    return float(np.sin(alpha) / c2), float(co_e * nm_f), float(c2 / np.sin(beta))
