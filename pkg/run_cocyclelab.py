#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Numerical experiments with linear cocycles.

Usage: ./run_cocyclelab.py <action> [options]

Actions:

spectrum -- Lyapunov spectrum along sampled orbits (QR method)
    - writes <out>_spectrum.csv (sample_index, x, lambda_1..lambda_d, drift) and a JSON summary

schrodinger_scan -- top exponent and domination verdict of the Schroedinger cocycle over E_grid
    - writes <out>_scan.csv (E, lambda_1, stderr, drift, m, flag) and a JSON summary
    - flag = lambda_1 > threshold and not dominated up to mmax

perturb -- directions interchange (mode = interchange) or norm lowering (mode = lower-norm)
    along one orbit segment
    - writes <out>_perturb.csv (j, x, provenance, distance), a JSON report and the pickled
      perturbed sequence <out>_perturb.pickle.gz

kernel_check -- build a perturbation kernel (kernel = identity | volume | unitary | composite |
    cylinder) and verify it on a low-discrepancy grid
    - writes <out>_kernel.csv (radial profile) and a JSON report

dominate -- window ratios and the smallest dominating scale of the Oseledets splitting at x
    - writes <out>_dominate.csv (m, max_ratio, dominated) and a JSON report

jump -- Monte Carlo estimate of the jump functional
    - writes <out>_jump.csv (per-sample classification) and a JSON report

describe -- print the configuration and output reference page

Options common to all actions except describe:
    [-c config-file] [-d debug-logfile] [--set key=value ...] [--system S] [--cocycle C] [--E E]
    [--V V] [--lambda L] [--n N] [--m M] [--p P] [--eps EPS] [--delta D] [--samples K]
    [--seed SEED] [--mmax M] [--out PREFIX] [--svg]

Flags win over --set, --set wins over the configuration file. Exit codes: 0 success,
1 numerical failure, 2 configuration error.
"""

import os
import platform
import sys
from argparse import ArgumentParser
from collections import Counter

import numpy as np

from cocyclelab.config import Config, SCHEMA, describe_schema, parse_value
from cocyclelab.debug import exc_info_hook
from cocyclelab.domination import oseledets_frames, domination_test, jump_estimate
from cocyclelab.dynamics import OrbitSource, SchrodingerCocycle, orbit_segment, system_from_config, \
    cocycle_from_config, potential_from_config, start_point
from cocyclelab.errors import ConfigError, NumericalError, DominatedError
from cocyclelab.futil import file_stream, write_csv, write_json, save_to_file
from cocyclelab.kernels import IdentityKernel, cylinder_spec, volume_kernel, volume_epsilon, \
    phase_matrix, unitary_kernel, composite_unitary_kernel, packing_volume_check, cylinder_flow_budget, \
    symplectic_cylinder_kernel, kernel_verify, radial_profile
from cocyclelab.linalg import Subspace, SymplecticForm, standard_j, exterior_power, product_log_norm
from cocyclelab.logf import log_info, log_warn, set_debug_stream, close_debug_stream
from cocyclelab.lyapunov import qr_spectrum
from cocyclelab.parallel import parallel_map
from cocyclelab.perturb import budget_for, symplectic_budget, interchange, interchange_symplectic, \
    lower_norm_sequence
from cocyclelab.rnd import generator
from cocyclelab import svg

# Start PuDB on error in interactive mode
sys.excepthook = exc_info_hook

# flag name -> type; every flag overrides the configuration key of the same name
FLAGS = [('system', str), ('cocycle', str), ('E', float), ('V', str), ('lambda', float), ('n', int),
         ('m', int), ('p', int), ('eps', float), ('delta', float), ('samples', int), ('seed', int),
         ('mmax', int), ('out', str)]

OUTPUT_COLUMNS = {
    'spectrum': ['sample_index', 'x', 'lambda_1 .. lambda_d', 'drift'],
    'schrodinger_scan': ['E', 'lambda_1', 'stderr', 'drift', 'm', 'flag'],
    'perturb': ['j', 'x', 'provenance', 'distance'],
    'kernel_check': ['r_lo', 'r_hi', 'points', 'displacement', 'jacobian_distance'],
    'dominate': ['m', 'max_ratio', 'dominated'],
    'jump': ['sample_index', 'x', 'label', 'gap', 'lambda_p', 'lambda_p1', 'Lambda_p', 'm'],
}


def load_config(args, prog=None):
    """Parse the common options and return the resolved configuration.

    @rtype: Config
    @raise ConfigError: unknown key, invalid value or unreadable configuration file
    """
    ap = ArgumentParser(prog=prog or ' '.join(sys.argv[0:2]))
    ap.add_argument('-c', '--config', type=str, help='Configuration file (key = value, YAML or Python)')
    ap.add_argument('-d', '--debug-logfile', type=str, help='Debug output file name')
    ap.add_argument('--set', type=str, action='append', default=[], metavar='KEY=VALUE',
                    help='Override any configuration key')
    for key, kind in FLAGS:
        ap.add_argument('--' + key, dest='flag_' + key, type=kind, help=SCHEMA[key][2])
    ap.add_argument('--svg', dest='flag_svg', action='store_const', const=True, default=None,
                    help=SCHEMA['svg'][2])
    args = ap.parse_args(args)

    if args.debug_logfile:
        set_debug_stream(file_stream(args.debug_logfile, mode='w'))

    try:
        cfg = Config(args.config)
    except (IOError, OSError) as exc:
        raise ConfigError('config', 'cannot read configuration file %s: %s' % (args.config, exc))
    overrides = {}
    for item in args.set:
        if '=' not in item:
            raise ConfigError(item, 'malformed override (key=value expected): ' + item)
        key, value = item.split('=', 1)
        overrides[key.strip()] = parse_value(value)
    cfg.update(overrides)
    cfg.update({key: getattr(args, 'flag_' + key) for key, _ in FLAGS + [('svg', None)]})
    return cfg.resolve()


def output_path(cfg, suffix):
    prefix = cfg['out']
    dirname = os.path.dirname(prefix)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    return prefix + '_' + suffix


def state_cell(x):
    return ' '.join(repr(v) for v in np.atleast_1d(np.asarray(x)).tolist())


def _check_index(cfg, dim):
    if not 1 <= cfg['p'] <= dim - 1:
        raise ConfigError('p', 'p = %d outside [1, %d]' % (cfg['p'], dim - 1))


def spectrum(args):
    cfg = load_config(args)
    system, cocycle = system_from_config(cfg), cocycle_from_config(cfg)
    if cfg.get('x') is not None:
        starts = [start_point(cfg, system)]
    else:
        starts = list(system.sample(generator(cfg['seed']), cfg['samples']))
    log_info('Spectrum: %d samples, n = %d, d = %d' % (len(starts), cfg['n'], cocycle.dim))

    estimates = parallel_map(lambda x: qr_spectrum(OrbitSource(system, cocycle, x), cfg['n'], cfg['cadence']),
                             starts, cfg['threads'])
    exps = np.array([est.exponents for est in estimates])
    means = exps.mean(axis=0)
    if len(estimates) > 1:
        stderr = exps.std(axis=0, ddof=1) / np.sqrt(len(estimates))
    else:
        stderr = np.asarray(estimates[0].stderr)
    problems = [problem for est in estimates for problem in est.check()]

    columns = ['sample_index', 'x'] + ['lambda_%d' % (i + 1) for i in range(cocycle.dim)] + ['drift']
    rows = [[num, state_cell(x)] + list(est.exponents) + [est.drift]
            for num, (x, est) in enumerate(zip(starts, estimates))]
    write_csv(output_path(cfg, 'spectrum.csv'), 'spectrum', cfg.as_dict(), columns, rows)
    write_json(output_path(cfg, 'spectrum.json'), 'spectrum', cfg.as_dict(),
               {'samples': len(estimates), 'n': cfg['n'], 'cadence': cfg['cadence'], 'group': cocycle.group,
                'means': means, 'stderr': stderr, 'max_drift': max(est.drift for est in estimates),
                'problems': problems})
    if cfg['svg']:
        series = {'lambda_%d' % (i + 1): (np.arange(len(starts)), exps[:, i]) for i in range(cocycle.dim)}
        svg.write_svg(output_path(cfg, 'spectrum.svg'), series, 'Lyapunov exponents', 'sample', 'exponent',
                      scatter=True)
    log_info('Mean exponents: ' + ', '.join('%.6f' % val for val in means))


def _scan_energy(cfg, system, potential, energy):
    cocycle = SchrodingerCocycle(energy, potential)
    source = OrbitSource(system, cocycle, start_point(cfg, system))
    est = qr_spectrum(source, cfg['n'], cfg['cadence'])
    lam1 = est.exponents[0]
    try:
        orbit, frames = oseledets_frames(source, 1, cfg['windows'] + cfg['mmax'], cfg['horizon'])
        m = None
        for scale in range(1, cfg['mmax'] + 1):
            if domination_test(orbit, None, None, scale, cfg['windows'], frames).dominated:
                m = scale
                break
    except NumericalError as exc:
        log_warn('E = %g: domination scan failed (%s)' % (energy, exc))
        m = None
    flag = bool(lam1 > cfg['threshold'] and m is None)
    return [energy, lam1, est.stderr[0], est.drift, m, flag]


def schrodinger_scan(args):
    cfg = load_config(args)
    grid = cfg.get('E_grid')
    if not grid:
        raise ConfigError('E_grid', 'schrodinger_scan needs the `E_grid` key')
    steps = np.diff(grid)
    if len(steps) and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ConfigError('E_grid', 'E_grid must be strictly monotone')
    system, potential = system_from_config(cfg), potential_from_config(cfg)
    log_info('Schroedinger scan: %d energies, V = %s' % (len(grid), cfg['V']))

    rows = parallel_map(lambda energy: _scan_energy(cfg, system, potential, energy), grid, cfg['threads'])
    write_csv(output_path(cfg, 'scan.csv'), 'schrodinger_scan', cfg.as_dict(),
              OUTPUT_COLUMNS['schrodinger_scan'], rows)
    flagged = [row[0] for row in rows if row[5]]
    write_json(output_path(cfg, 'scan.json'), 'schrodinger_scan', cfg.as_dict(),
               {'energies': len(rows), 'flagged': flagged,
                'dominated': sum(1 for row in rows if row[4] is not None),
                'rows': [dict(zip(OUTPUT_COLUMNS['schrodinger_scan'], row)) for row in rows]})
    if cfg['svg']:
        svg.write_svg(output_path(cfg, 'scan.svg'), {'lambda_1': ([row[0] for row in rows],
                                                                   [row[1] for row in rows])},
                      'Top exponent of the Schroedinger cocycle', 'E', 'lambda_1')
    log_info('Flagged energies: %d of %d' % (len(flagged), len(rows)))


def _explicit_splitting(cfg, dim):
    if cfg.get('splitting') is None:
        return None
    try:
        k = int(cfg['splitting'])
    except ValueError:
        raise ConfigError('splitting', 'splitting must be the dimension of E, got %r' % cfg['splitting'])
    if not 1 <= k <= dim - 1:
        raise ConfigError('splitting', 'dimension of E must lie in [1, %d]' % (dim - 1))
    return Subspace.coordinate(dim, range(k)), Subspace.coordinate(dim, range(k, dim))


def _finite_horizon(matrices, p):
    return product_log_norm(exterior_power(matrices, p)) / len(matrices)


def perturb(args):
    cfg = load_config(args)
    system, cocycle = system_from_config(cfg), cocycle_from_config(cfg)
    x = start_point(cfg, system)
    d, p, n = cocycle.dim, cfg['p'], cfg['n']
    _check_index(cfg, d)
    orbit = orbit_segment(system, cocycle, x, n)
    budget = budget_for(orbit, cfg['eps'])
    if cfg['symplectic']:
        budget = symplectic_budget(budget, SymplecticForm(d))
    default_m = budget.m_min_s if cfg['symplectic'] else budget.m_min
    m = cfg.get('m', min(default_m, n))
    if m > n:
        raise ConfigError('m', 'block length m = %d exceeds the orbit length n = %d' % (m, n))
    splitting = _explicit_splitting(cfg, d)
    log_info('Perturb (%s): d = %d, p = %d, n = %d, m = %d, eps = %g' % (cfg['mode'], d, p, n, m, cfg['eps']))

    result = {'mode': cfg['mode'], 'budget': budget, 'm': m, 'status': 'ok'}
    try:
        if cfg['mode'] == 'interchange':
            block = orbit.sub_segment(0, m)
            if splitting is None:
                _, frames = oseledets_frames(OrbitSource(system, cocycle, x), p, m, cfg['horizon'])
                splitting = (Subspace(frames.E[0], orthonormal=True), Subspace(frames.F[0], orthonormal=True))
            if cfg['symplectic']:
                seq = interchange_symplectic(block, splitting[0], splitting[1], budget, strict=cfg['strict'])
            else:
                seq = interchange(block, splitting[0], splitting[1], budget, strict=cfg['strict'])
            base = block.matrices
        elif cfg['mode'] == 'lower-norm':
            ell = cfg.get('ell', (n - m) // 2)
            seq, report = lower_norm_sequence(orbit, p, ell, budget, cfg['delta'], m, splitting,
                                              require_witness=splitting is None, strict=cfg['strict'])
            result['lower_norm'] = report
            base = orbit.matrices
        else:
            raise ConfigError('mode', 'unknown perturb mode: ' + str(cfg['mode']))
    except DominatedError as exc:
        log_warn(str(exc))
        result.update(status='dominated', message=str(exc))
        write_json(output_path(cfg, 'perturb.json'), 'perturb', cfg.as_dict(), result)
        return

    seq.check()
    result.update(histogram=dict(Counter(seq.provenance)), max_distance=float(seq.distances.max()),
                  residual=seq.residual(), diagnostics=seq.diagnostics,
                  Lambda_unperturbed=_finite_horizon(base, p), Lambda_perturbed=_finite_horizon(seq.matrices, p))
    rows = [[j, state_cell(seq.states[j]), prov, dist]
            for j, (prov, dist) in enumerate(zip(seq.provenance, seq.distances))]
    write_csv(output_path(cfg, 'perturb.csv'), 'perturb', cfg.as_dict(), OUTPUT_COLUMNS['perturb'], rows)
    write_json(output_path(cfg, 'perturb.json'), 'perturb', cfg.as_dict(), result)
    save_to_file(seq, output_path(cfg, 'perturb.pickle.gz'))
    if cfg['svg']:
        svg.write_svg(output_path(cfg, 'perturb.svg'), {'distance': (np.arange(seq.n), seq.distances)},
                      'Per-step distance to the cocycle', 'j', '||L_j - A_j||')
    log_info('Lambda_%d: unperturbed %.6f, perturbed %.6f, max distance %.4g, residual %.3g'
             % (p, result['Lambda_unperturbed'], result['Lambda_perturbed'], result['max_distance'],
                result['residual']))


def build_kernel(cfg):
    """The kernel named by the `kernel' key with the closeness budget it is checked against.

    @rtype: tuple
    @return: (kernel, budget dict or None)
    """
    kind, sigma, eps = cfg['kernel'], cfg['sigma'], cfg['eps']
    theta = np.asarray(cfg['theta'], dtype=float)
    if kind == 'identity':
        return IdentityKernel(cfg.get('dim', 2), sigma), None
    if kind == 'volume':
        spec = cylinder_spec(cfg.get('dim', 3), cfg['a'], cfg['b'], sigma, theta[0])
        dist = float(np.linalg.norm(spec.inner_rotation - np.eye(2), 2))
        limit = volume_epsilon(eps, sigma)
        return volume_kernel(spec), {'eps0': eps, 'epsilon': limit, 'distance': dist, 'within': dist < limit}
    dim = cfg.get('dim', 4 if kind == 'cylinder' else 2)
    if dim % 2:
        raise ConfigError('dim', '%s kernel needs an even dimension, got %d' % (kind, dim))
    q = dim // 2
    if kind in ('unitary', 'composite'):
        R = phase_matrix(np.resize(theta, q))
        dist = float(np.linalg.norm(R - np.eye(dim), 2))
        kernel = unitary_kernel(R, sigma) if kind == 'unitary' else composite_unitary_kernel(R, sigma)
        return kernel, {'eps0': eps, 'distance': dist}
    if kind == 'cylinder':
        e1 = np.eye(dim)[:, 0]
        Y = np.column_stack([e1, standard_j(q) @ e1])
        budget = cylinder_flow_budget(eps, sigma)
        res = budget.to_dict()
        res.update(eps0=eps, within=abs(cfg['t0']) < budget.t_bar)
        return symplectic_cylinder_kernel(Y, cfg['a'], cfg['b'], sigma, cfg['t0']), res
    raise ConfigError('kernel', 'unknown kernel kind: ' + str(kind))


def kernel_check(args):
    cfg = load_config(args)
    kernel, budget = build_kernel(cfg)
    log_info('Kernel check: %s, d = %d, %d grid points' % (cfg['kernel'], kernel.dim, cfg['grid']))

    report = kernel_verify(kernel, cfg['grid'], cfg['seed'], fd_points=min(1000, cfg['grid']),
                           threads=cfg['threads'])
    result = {'kernel': kernel.to_dict(), 'report': report, 'budget': budget}
    if cfg['kernel'] == 'composite':
        result['packing'] = packing_volume_check(kernel, cfg['grid'], cfg['seed'])
    profile = radial_profile(kernel, min(cfg['grid'], 2000), cfg['seed'])
    write_csv(output_path(cfg, 'kernel.csv'), 'kernel_check', cfg.as_dict(), OUTPUT_COLUMNS['kernel_check'],
              profile)
    write_json(output_path(cfg, 'kernel.json'), 'kernel_check', cfg.as_dict(), result)
    if cfg['svg']:
        mids = [(row[0] + row[1]) / 2.0 for row in profile]
        svg.write_svg(output_path(cfg, 'kernel.svg'),
                      {'displacement': (mids, [row[3] for row in profile]),
                       '||Dh - I||': (mids, [row[4] for row in profile])},
                      'Kernel radial profile', 'normalized radius', 'max')
    log_info('det residual %.3g, fd error %.3g, outside moved %d, inner mismatch %d'
             % (report.det_residual, report.fd_error, report.outside_moved, report.inner_mismatch))


def dominate(args):
    cfg = load_config(args)
    system, cocycle = system_from_config(cfg), cocycle_from_config(cfg)
    _check_index(cfg, cocycle.dim)
    source = OrbitSource(system, cocycle, start_point(cfg, system))
    windows, m_max = cfg['windows'], cfg['mmax']
    log_info('Dominate: p = %d, m <= %d, %d windows' % (cfg['p'], m_max, windows))

    orbit, frames = oseledets_frames(source, cfg['p'], windows + m_max, cfg['horizon'])
    reports = [domination_test(orbit, None, None, m, windows, frames) for m in range(1, m_max + 1)]
    verdict = next((rep.m for rep in reports if rep.dominated), None)
    rows = [[rep.m, float(np.max(rep.ratios)), rep.dominated] for rep in reports]
    write_csv(output_path(cfg, 'dominate.csv'), 'dominate', cfg.as_dict(), OUTPUT_COLUMNS['dominate'], rows)
    write_json(output_path(cfg, 'dominate.json'), 'dominate', cfg.as_dict(),
               {'p': cfg['p'], 'verdict': verdict, 'windows': windows, 'horizon': cfg['horizon'],
                'min_angle': float(frames.angles().min()), 'scales': reports})
    if cfg['svg']:
        shown = reports[(verdict or m_max) - 1]
        svg.write_svg(output_path(cfg, 'dominate.svg'),
                      {'m = %d' % shown.m: (np.arange(len(shown.ratios)), shown.ratios)},
                      'Window ratios', 'window', 'ratio')
    log_info('Verdict: %s' % ('dominated at m = %d' % verdict if verdict else 'not dominated up to m = %d' % m_max))


def jump(args):
    cfg = load_config(args)
    system, cocycle = system_from_config(cfg), cocycle_from_config(cfg)
    _check_index(cfg, cocycle.dim)
    log_info('Jump: p = %d, %d samples' % (cfg['p'], cfg['samples']))

    report = jump_estimate(system, cocycle, cfg['p'], cfg['mmax'], cfg['samples'], cfg['horizon'], cfg['seed'],
                           cfg['symplectic'], cfg['threads'])
    rows = [[num, state_cell(rec['x']), rec['label'], rec['gap'], rec['lambda_p'], rec['lambda_p1'],
             rec['Lambda_p'], rec['m']] for num, rec in enumerate(report.records)]
    write_csv(output_path(cfg, 'jump.csv'), 'jump', cfg.as_dict(), OUTPUT_COLUMNS['jump'], rows)
    write_json(output_path(cfg, 'jump.json'), 'jump', cfg.as_dict(), report)
    if cfg['svg']:
        gaps = [rec['gap'] if rec['gap'] is not None else float('nan') for rec in report.records]
        svg.write_svg(output_path(cfg, 'jump.svg'), {'gap': (np.arange(len(gaps)), gaps)},
                      'Exponent gap per sample', 'sample', 'lambda_p - lambda_p+1', scatter=True)
    log_info('J_%d = %.6f +- %.6f (Gamma fraction %.3f)' % (report.p, report.value, report.stderr,
                                                          report.gamma_fraction))


def describe(args):
    print(describe_schema())
    print('\nOutput columns (CSV files start with "#" lines carrying the JSON header):\n')
    for action in sorted(OUTPUT_COLUMNS):
        print('  %-18s %s' % (action, ', '.join(OUTPUT_COLUMNS[action])))


def main(argv):
    if len(argv) < 2:
        sys.exit(__doc__)

    action = argv[1]
    args = argv[2:]

    log_info('Running on %s version %s' % (platform.python_implementation(),
                                           platform.python_version()))
    try:
        if action == 'spectrum':
            spectrum(args)
        elif action == 'schrodinger_scan':
            schrodinger_scan(args)
        elif action == 'perturb':
            perturb(args)
        elif action == 'kernel_check':
            kernel_check(args)
        elif action == 'dominate':
            dominate(args)
        elif action == 'jump':
            jump(args)
        elif action == 'describe':
            describe(args)
        else:
            # Unknown action
            sys.exit(("\nERROR: Unknown cocyclelab action: %s\n\n---" % action) + __doc__)
    except NumericalError as exc:
        log_warn('Numerical failure: %s' % exc)
        return 1
    except ValueError as exc:
        # ConfigError and argument range checks
        log_warn('Configuration error: %s' % exc)
        return 2
    finally:
        close_debug_stream()

    log_info('Done.')
    return 0


if __name__ == '__main__':
    sys.exit(main(sys.argv))
