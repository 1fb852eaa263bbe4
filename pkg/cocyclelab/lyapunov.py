#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Lyapunov spectra (discrete QR method), integrated exponents of exterior powers and
numerical Oseledets splittings.
"""

from collections import namedtuple

import numpy as np

from cocyclelab.dynamics import OrbitSource
from cocyclelab.errors import CadenceError, UnresolvedMultiplicityError
from cocyclelab.linalg import SPECIAL_LINEAR, SYMPLECTIC, Subspace, Splitting, exterior_power, \
    principal_angle
from cocyclelab.logf import log_debug, log_warn
from cocyclelab.parallel import parallel_map
from cocyclelab.rnd import generator

DEFAULT_CADENCE = 10
BATCHES = 10
MIN_CLUSTER_TOL = 1e-9


class LyapunovEstimate(namedtuple('LyapunovEstimate',
                                  ['exponents', 'horizon', 'cadence', 'drift', 'stderr', 'group'])):
    """Estimated exponents (sorted non-increasing, nats per iterate) with diagnostics:
    `drift' is the largest change of the running estimate over the last 10% of the run,
    `stderr' the batch-means standard error of each exponent."""

    @property
    def dim(self):
        return len(self.exponents)

    def drift_bound(self):
        return max(1e-6 * self.dim, 10.0 * self.dim * self.drift)

    def check(self):
        """Check the group symmetries of the spectrum; returns a list of problems
        (also logged as warnings)."""
        problems = []
        lam = np.asarray(self.exponents)
        if self.group == SPECIAL_LINEAR and abs(lam.sum()) > self.drift_bound():
            problems.append('exponent sum %g exceeds drift bound %g' % (lam.sum(), self.drift_bound()))
        if self.group == SYMPLECTIC:
            pairing = np.max(np.abs(lam + lam[::-1]))
            if pairing > 1e-4:
                problems.append('symplectic pairing residual %g' % pairing)
        for problem in problems:
            log_warn(problem)
        return problems

    def to_dict(self):
        return {'exponents': list(self.exponents), 'horizon': self.horizon, 'cadence': self.cadence,
                'drift': self.drift, 'stderr': list(self.stderr), 'group': self.group}


def _block_products(mats, size):
    """Products of consecutive blocks of `size' matrices (len(mats) divisible by size)."""
    d = mats.shape[-1]
    blocks = mats.reshape(-1, size, d, d)
    prod = blocks[:, 0]
    for i in range(1, size):
        prod = blocks[:, i] @ prod
    return prod


def _qr_run(chunks, frame, cadence):
    """Push an orthonormal frame through the matrix stream, re-orthonormalizing every
    `cadence' steps.

    @return: (log-diagonal increments per re-orthonormalization (rows), steps per row, final frame)
    """
    Q = frame
    d = frame.shape[0]
    pending = np.empty((0, d, d))
    increments, steps = [], []
    for mats in chunks:
        mats = np.concatenate([pending, mats]) if len(pending) else mats
        nb = len(mats) // cadence
        pending = mats[nb * cadence:]
        if not nb:
            continue
        with np.errstate(over='ignore', invalid='ignore'):
            blocks = _block_products(mats[:nb * cadence], cadence)
        for block in blocks:
            Q, logs = _reorth(block @ Q, cadence)
            increments.append(logs)
            steps.append(cadence)
    if len(pending):
        block = pending[0]
        for mat in pending[1:]:
            block = mat @ block
        Q, logs = _reorth(block @ Q, cadence)
        increments.append(logs)
        steps.append(len(pending))
    return np.array(increments), np.array(steps), Q


def _reorth(M, cadence):
    if not np.all(np.isfinite(M)):
        raise CadenceError(cadence)
    Q, R = np.linalg.qr(M)
    diag = np.diag(R)
    if np.any(diag == 0.0):
        raise CadenceError(cadence)
    signs = np.sign(diag)
    return Q * signs[None, :], np.log(np.abs(diag))


def _batch_stderr(increments, steps):
    """Batch-means standard error of the per-iterate exponents."""
    count = len(increments)
    if count < 2:
        return np.zeros(increments.shape[1])
    batches = min(BATCHES, count)
    edges = np.linspace(0, count, batches + 1).astype(int)
    means = np.array([increments[a:b].sum(axis=0) / steps[a:b].sum() for a, b in zip(edges[:-1], edges[1:])])
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def _tail_drift(increments, steps):
    cum = np.cumsum(increments, axis=0) / np.cumsum(steps)[:, None]
    tail = max(1, len(cum) // 10)
    return float(np.max(np.abs(cum[-tail:] - cum[-1]))) if len(cum) else 0.0


def qr_spectrum(source, n, cadence=DEFAULT_CADENCE):
    """Lyapunov spectrum by the discrete QR method along the orbit of the source.

    @param source: L{OrbitSource}
    @param n: number of iterates
    @param cadence: re-orthonormalization period
    @rtype: LyapunovEstimate
    @raise CadenceError: overflow before a re-orthonormalization
    """
    if not (n >= cadence >= 1):
        raise ValueError('need n >= cadence >= 1 (n = %d, cadence = %d)' % (n, cadence))
    d = source.dim
    chunk = cadence * max(1, 16384 // cadence)
    increments, steps, _ = _qr_run(source.matrix_chunks(n, chunk), np.eye(d), cadence)
    order = np.argsort(-increments.sum(axis=0), kind='stable')
    increments = increments[:, order]
    exponents = increments.sum(axis=0) / float(n)
    est = LyapunovEstimate(exponents=tuple(float(v) for v in exponents), horizon=n, cadence=cadence,
                           drift=_tail_drift(increments, steps),
                           stderr=tuple(float(v) for v in _batch_stderr(increments, steps)),
                           group=source.cocycle.group)
    log_debug('qr_spectrum', est.exponents, 'drift', est.drift)
    return est


# --- integrated exponents ---------------------------------------------------------------

class IntegratedExponent(namedtuple('IntegratedExponent', ['p', 'horizons', 'values', 'stderr', 'per_sample'])):
    """Monte Carlo values of (1/h) int log ||ext^p A^h|| for h = n, n/2, n/4, ..."""

    def to_dict(self):
        return {'p': self.p, 'horizons': list(self.horizons), 'values': list(self.values),
                'stderr': list(self.stderr)}


def _doubling_ladder(ext, levels):
    """Values (1/n) sum over blocks of log ||block product|| for block lengths
    n, n/2, ..., n/2^(levels-1) (exterior-power matrices `ext', n of them)."""
    n, N = ext.shape[0], ext.shape[-1]
    nb = 2 ** (levels - 1)
    size = n // nb
    blocks = ext.reshape(nb, size, N, N)
    prod = np.broadcast_to(np.eye(N), (nb, N, N)).copy()
    logs = np.zeros(nb)
    for i in range(size):
        prod = blocks[:, i] @ prod
        scale = np.abs(prod).max(axis=(1, 2))
        prod /= scale[:, None, None]
        logs += np.log(scale)
    values = [None] * levels
    for level in range(levels - 1, -1, -1):
        block_logs = logs + np.log(np.linalg.norm(prod, 2, axis=(1, 2)))
        values[level] = block_logs.sum() / n
        if level:
            prod = prod[1::2] @ prod[0::2]
            logs = logs[0::2] + logs[1::2]
            scale = np.abs(prod).max(axis=(1, 2))
            prod /= scale[:, None, None]
            logs += np.log(scale)
    return np.array(values)


def integrated_exponent(cocycle, system, p, n, samples=64, seed=0, levels=3, threads=None):
    """Integrated exponent of the p-th exterior power at horizons n, n/2, ..., n/2^(levels-1).

    Each sample orbit of length n is cut into 2^k blocks for the k-th value, so along
    the ladder the values are non-increasing with growing horizon on every sample.

    @rtype: IntegratedExponent
    """
    if not 1 <= p <= cocycle.dim - 1:
        raise ValueError('p = %d outside [1, %d]' % (p, cocycle.dim - 1))
    if levels < 1 or n % (2 ** (levels - 1)):
        raise ValueError('n = %d must be divisible by 2^(levels - 1) = %d' % (n, 2 ** (levels - 1)))
    starts = system.sample(generator(seed), samples)

    def one_sample(x):
        mats = OrbitSource(system, cocycle, x).future_matrices(n)
        return _doubling_ladder(exterior_power(mats, p), levels)

    per_sample = np.array(parallel_map(one_sample, list(starts), threads))
    stderr = per_sample.std(axis=0, ddof=1) / np.sqrt(samples) if samples > 1 else np.zeros(levels)
    return IntegratedExponent(p=p, horizons=[n // 2 ** k for k in range(levels)],
                              values=[float(v) for v in per_sample.mean(axis=0)],
                              stderr=[float(v) for v in stderr], per_sample=per_sample)


# --- Oseledets splittings ---------------------------------------------------------------

class OseledetsApprox(namedtuple('OseledetsApprox', ['splitting', 'exponents', 'multiplicities', 'cluster_tol',
                                                     'spectrum', 'stderr', 'past_frame', 'future_frame'])):
    """Approximate Oseledets splitting at a point: parts ordered by decreasing exponent.
    `past_frame' columns span the fast flag (top-k columns = sum of the k fastest
    directions), `future_frame' columns the slow flag."""

    @property
    def k(self):
        return len(self.exponents)

    def fast_space(self, p):
        """Sum of the Oseledets spaces of the p largest exponents (counted with multiplicity)."""
        return Subspace(self.past_frame[:, :p], orthonormal=True)

    def slow_space(self, p):
        """Sum of the Oseledets spaces of the d - p smallest exponents."""
        d = self.past_frame.shape[0]
        return Subspace(self.future_frame[:, :d - p], orthonormal=True)

    def to_dict(self):
        return {'exponents': list(self.exponents), 'multiplicities': list(self.multiplicities),
                'cluster_tol': self.cluster_tol, 'spectrum': list(self.spectrum)}


def generic_frame(d, seed=0):
    """Random orthonormal frame, in general position with respect to any fixed flag (almost surely)."""
    Q, _ = np.linalg.qr(generator(seed).normal(size=(d, d)))
    return Q


def _frame_run(mats, d):
    """Per-step QR of a generic full frame pushed through the matrices; returns (frame, increments)."""
    Q = generic_frame(d)
    increments = np.empty((len(mats), d))
    for j, mat in enumerate(mats):
        Q, increments[j] = _reorth(mat @ Q, 1)
    return Q, increments


def _cluster(spectrum, tol):
    groups = [[0]]
    for i in range(1, len(spectrum)):
        if spectrum[i - 1] - spectrum[i] > tol:
            groups.append([i])
        else:
            groups[-1].append(i)
    return groups


def oseledets_splitting(source, x=None, horizon=1000, cluster_tol=None):
    """Numerical Oseledets splitting at x: the fast flag from pushing a frame through the
    past orbit segment of length `horizon', the slow flag from pulling a frame back
    through the inverse cocycle over the future segment; the spaces are the flag
    intersections.

    @param cluster_tol: exponents closer than this form one group (default: ten batch
        standard errors)
    @rtype: OseledetsApprox
    @raise UnresolvedMultiplicityError: the flags do not determine the splitting
    """
    if horizon < 100:
        raise ValueError('horizon must be at least 100')
    if x is not None:
        source = source._replace(x=x)
    d = source.dim
    Qp, inc_p = _frame_run(source.past_matrices(horizon), d)
    future = source.future_matrices(horizon)
    Qf, inc_f = _frame_run(np.linalg.inv(future)[::-1], d)

    lam_past = inc_p.sum(axis=0) / horizon
    lam_future = -inc_f.sum(axis=0)[::-1] / horizon
    spectrum = (np.sort(lam_past)[::-1] + np.sort(lam_future)[::-1]) / 2.0
    stderr = np.maximum(_batch_stderr(inc_p, np.ones(len(inc_p))),
                        np.abs(np.sort(lam_past)[::-1] - np.sort(lam_future)[::-1]) / 2.0)
    if cluster_tol is None:
        cluster_tol = max(10.0 * float(stderr.max()), MIN_CLUSTER_TOL)

    groups = _cluster(spectrum, cluster_tol)
    for left, right in zip(groups[:-1], groups[1:]):
        if spectrum[left[-1]] - spectrum[right[0]] <= 1e-12:
            raise UnresolvedMultiplicityError('unresolved multiplicity: gap below 1e-12 at the requested clustering')

    parts = []
    done = 0
    for group in groups:
        dj = len(group)
        fast = Qp[:, :done + dj]
        slow = Qf[:, :d - done]
        Y, cos, _ = np.linalg.svd(fast.T @ slow)
        if cos[dj - 1] < 0.9:
            raise UnresolvedMultiplicityError('unresolved multiplicity: flags meet at cosine %g' % cos[dj - 1])
        parts.append(Subspace(fast @ Y[:, :dj]))
        done += dj
    splitting = Splitting(parts)
    exponents = tuple(float(np.mean(spectrum[g])) for g in groups)
    log_debug('oseledets_splitting exponents', exponents, 'tol', cluster_tol)
    return OseledetsApprox(splitting=splitting, exponents=exponents,
                           multiplicities=tuple(len(g) for g in groups), cluster_tol=float(cluster_tol),
                           spectrum=tuple(float(v) for v in spectrum),
                           stderr=tuple(float(v) for v in stderr), past_frame=Qp, future_frame=Qf)


def exterior_consistency(source, p, horizon, cadence=DEFAULT_CADENCE):
    """Lambda_p = lambda_1 + ... + lambda_p from the QR spectrum and, independently, the top
    exponent of the p-th exterior power cocycle.

    @rtype: tuple
    @return: (Lambda_p, top exponent of the exterior power)
    """
    d = source.dim
    if not 1 <= p <= d:
        raise ValueError('p = %d outside [1, %d]' % (p, d))
    direct = float(sum(qr_spectrum(source, horizon, cadence).exponents[:p]))
    N = exterior_power(np.eye(d), p).shape[0]
    start = generator(0).normal(size=(N, 1))
    start /= np.linalg.norm(start)
    chunk = cadence * max(1, 8192 // cadence)
    ext_chunks = (exterior_power(mats, p) for mats in source.matrix_chunks(horizon, chunk))
    increments, _, _ = _qr_run(ext_chunks, start, cadence)
    return direct, float(increments.sum() / horizon)


def angle_decay_rate(source, horizon, resolution_horizon=1000):
    """Per-group rates (1/n)(log sin angle(E^j, sum of the others) at f^n x minus the same
    at x), n = horizon.

    @rtype: list
    @raise UnresolvedMultiplicityError: fewer than two exponents resolved
    """
    start = oseledets_splitting(source, horizon=resolution_horizon)
    end = oseledets_splitting(source.advance(horizon), horizon=resolution_horizon)
    if start.k < 2:
        raise UnresolvedMultiplicityError('unresolved multiplicity: a single exponent group')
    if start.multiplicities != end.multiplicities:
        raise UnresolvedMultiplicityError('unresolved multiplicity: groups differ along the orbit')
    rates = []
    for j in range(start.k):
        logs = []
        for approx in (start, end):
            parts = approx.splitting.parts
            others = Subspace(np.hstack([part.basis for i, part in enumerate(parts) if i != j]))
            logs.append(np.log(np.sin(principal_angle(parts[j], others))))
        rates.append(float((logs[1] - logs[0]) / horizon))
    return rates