#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Experiment configuration: plain-text `key = value' files, YAML files or Python modules
exposing a `config' dictionary, merged with command-line overrides and checked against
a schema of known keys.

Plain-text format::

    # comment
    system = circle-rotation
    alpha = 0.6180339887498949
    cocycle = constant
    matrix = 2, 0; 0, 0.5      # row-major, rows separated by ';'
    eps = 0.1
"""

import importlib.util
import os

import regex
import yaml

from cocyclelab.errors import ConfigError
from cocyclelab.futil import file_stream

_LINE_RE = regex.compile(r'^\s*(?P<key>[A-Za-z_][\w\-]*)\s*=\s*(?P<value>.*?)\s*$')
_COMMENT_RE = regex.compile(r'\s+#.*$|^#.*$')
_NUMBER_RE = regex.compile(r'^[+\-]?(\d+(\.\d*)?|\.\d+)([eE][+\-]?\d+)?$')
_INT_RE = regex.compile(r'^[+\-]?\d+$')

# key -> (type, default, description)
SCHEMA = {
    'system': ('str', 'circle-rotation',
               'base system: circle-rotation | torus-translation | cat-map | symbolic'),
    'alpha': ('float', 0.6180339887498949, 'rotation number of circle-rotation'),
    'vector': ('floats', [0.6180339887498949, 0.41421356237309515], 'translation vector of torus-translation'),
    'sequence': ('floats', None, 'state values of a symbolic system (in [0, 1))'),
    'cocycle': ('str', 'constant',
                'cocycle family: constant | schrodinger | shear-rotate | winding | table'),
    'matrix': ('matrix', None, 'matrix of the constant cocycle (rows separated by ;)'),
    'group': ('str', None, 'group tag: general-linear | special-linear | symplectic | orthogonal'),
    'E': ('float', 0.0, 'energy of the Schroedinger cocycle'),
    'V': ('str', 'zero', 'potential: zero | cosine | table'),
    'lambda': ('float', 1.0, 'coupling of the cosine potential V = 2 lambda cos(2 pi theta)'),
    'potential_table': ('floats', None, 'samples of a tabulated potential on a uniform circle grid'),
    'diag': ('floats', [2.0, 0.5], 'diagonal of shear-rotate / winding cocycles'),
    'steps': ('floats', [0.0, 0.0, 0.5, 1.5707963267948966],
              'step angle function: start1, angle1, start2, angle2, ...'),
    'winding': ('int', 1, 'degree of the winding cocycle'),
    'table': ('floats', None, 'flattened matrix list of the table cocycle'),
    'dim': ('int', None, 'matrix dimension of the table cocycle / kernel dimension'),
    'x': ('floats', None, 'start point (scalar, vector or symbolic index)'),
    'n': ('int', 100000, 'orbit length'),
    'm': ('int', None, 'window / interchange block length'),
    'p': ('int', 1, 'index (number of top exponents)'),
    'eps': ('float', 0.1, 'perturbation budget'),
    'delta': ('float', 0.05, 'norm-lowering slack'),
    'samples': ('int', 64, 'Monte Carlo sample count'),
    'seed': ('int', 0, 'random seed'),
    'mmax': ('int', 20, 'largest domination scale tested'),
    'horizon': ('int', 1000, 'horizon of Oseledets / classification runs'),
    'cadence': ('int', 10, 're-orthonormalization cadence'),
    'windows': ('int', 1000, 'number of tested windows'),
    'cluster_tol': ('float', None, 'exponent clustering tolerance (default 10 standard errors)'),
    'ell': ('int', None, 'exchange position along the orbit'),
    'levels': ('int', 3, 'doubling levels of the integrated exponent'),
    'E_grid': ('floats', None, 'energies of the Schroedinger scan'),
    'threshold': ('float', 0.01, 'exponent threshold of the discontinuity flag'),
    'mode': ('str', 'interchange', 'perturb mode: interchange | lower-norm'),
    'splitting': ('str', None, 'explicit splitting for perturb: E-dimension (first coordinate axes)'),
    'kernel': ('str', 'volume', 'kernel: identity | volume | unitary | composite | cylinder'),
    'sigma': ('float', 0.9, 'kernel shrink factor'),
    'a': ('float', 0.4, 'kernel axis scale'),
    'b': ('float', 0.04, 'kernel base scale'),
    'theta': ('floats', [0.01], 'kernel rotation angle(s)'),
    'grid': ('int', 10000, 'kernel verification grid size'),
    't0': ('float', 0.05, 'flow time of the integrated kernel'),
    'strict': ('bool', True, 'require m >= m_min for interchanges'),
    'symplectic': ('bool', False, 'use the symplectic interchange / checks'),
    'out': ('str', 'cocyclelab_out', 'output path prefix'),
    'svg': ('bool', False, 'also emit SVG plots'),
    'threads': ('int', None, 'worker threads (COCYCLE_LAB_THREADS overrides)'),
}


def load_as_module(path):
    """Execute a Python configuration file as an anonymous module; the interpreter's
    import path and module table are left untouched.

    @return: the loaded module object
    @raise ConfigError: if the file name does not end in '.py'
    """
    if not path.endswith('.py'):
        raise ConfigError(path, 'Python configuration file must end in .py: ' + path)
    name = '_cocyclelab_config_' + os.path.splitext(os.path.basename(path))[0]
    spec = importlib.util.spec_from_file_location(name, os.path.abspath(path))
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def parse_value(text):
    """Parse one plain-text value: matrix (rows separated by ';'), comma list,
    number or string."""
    text = text.strip()
    if ';' in text:
        return [parse_value(row) for row in text.split(';') if row.strip()]
    if ',' in text:
        return [parse_value(item) for item in text.split(',') if item.strip()]
    if _INT_RE.match(text):
        return int(text)
    if _NUMBER_RE.match(text):
        return float(text)
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on'):
        return True
    if lowered in ('false', 'no', 'off'):
        return False
    if lowered in ('none', 'null', ''):
        return None
    return text


def parse_plain(lines):
    """Parse `key = value' lines into a dict.

    @raise ConfigError: on a malformed line (the line text is used as the key)
    """
    cfg = {}
    for line in lines:
        line = _COMMENT_RE.sub('', line).strip()
        if not line:
            continue
        match = _LINE_RE.match(line)
        if not match:
            raise ConfigError(line, 'malformed configuration line: ' + line)
        cfg[match.group('key')] = parse_value(match.group('value'))
    return cfg


def recursive_update(orig, update):
    """Merge `update' into `orig' in place, descending into nested dictionaries.

    @rtype: dict
    @return: orig
    """
    if not isinstance(orig, dict) or not isinstance(update, dict):
        raise TypeError('recursive_update merges dictionaries only')
    for key, val in update.items():
        sub = orig.get(key)
        orig[key] = recursive_update(sub, val) if isinstance(sub, dict) and isinstance(val, dict) else val
    return orig


def _coerce(key, kind, value):
    if value is None:
        return None
    try:
        if kind == 'int':
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == 'float':
            return float(value)
        if kind == 'bool':
            if isinstance(value, str):
                value = parse_value(value)
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if kind == 'str':
            return str(value)
        if kind == 'floats':
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [float(v) for v in _flatten(value)]
        if kind == 'matrix':
            if not isinstance(value, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in value):
                raise ValueError(value)
            rows = [[float(v) for v in row] for row in value]
            if any(len(row) != len(rows) for row in rows):
                raise ValueError('matrix must be square')
            return rows
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, 'invalid value for configuration key %s: %r (%s expected)'
                          % (key, value, kind)) from exc
    raise ConfigError(key, 'unknown type for key ' + key)


def _flatten(values):
    for val in values:
        if isinstance(val, (list, tuple)):
            for sub in _flatten(val):
                yield sub
        else:
            yield val


class Config(object):
    """
    Configuration data of one experiment, implemented as a dictionary so that any
    component can read its options with C{cfg.get(key, default)}.
    """

    def __init__(self, file_name=None, config=None):
        self.config = dict(config) if config else {}

        if file_name:
            self.load(file_name)

    def get(self, i, default=None):
        val = self.config.get(i)
        return default if val is None else val

    def __len__(self):
        return len(self.config)

    def __getitem__(self, i):
        return self.config[i]

    def __setitem__(self, key, val):
        self.config[key] = val

    def __iter__(self):
        for i in self.config:
            yield i

    def contains(self, *path):
        """Check if configuration contains given keys (= path in config tree)."""
        curr = self.config
        for path_part in path:
            if isinstance(curr, dict) and path_part in curr:
                curr = curr[path_part]
            else:
                return False

        return True

    def as_dict(self):
        return dict(self.config)

    def load(self, file_name):
        """Load a configuration file (YAML, Python module or plain key = value text)."""
        if file_name.endswith('.yaml') or file_name.endswith('.yml'):
            with file_stream(file_name) as fh:
                loaded = yaml.safe_load(fh) or {}
        elif file_name.endswith('.py'):
            loaded = load_as_module(file_name).config
        else:
            with file_stream(file_name) as fh:
                loaded = parse_plain(fh)
        if not isinstance(loaded, dict):
            raise ConfigError(file_name, 'configuration file does not contain a dictionary: ' + file_name)
        recursive_update(self.config, loaded)

    def update(self, overrides):
        """Apply overrides (e.g. command-line flags); None values are ignored."""
        recursive_update(self.config, {k: v for k, v in overrides.items() if v is not None})
        return self

    def resolve(self):
        """Check all keys against the schema, coerce types and fill in defaults.

        @rtype: Config
        @raise ConfigError: unknown key or invalid value (the key is named)
        """
        resolved = {}
        for key, value in self.config.items():
            if key not in SCHEMA:
                raise ConfigError(key)
            resolved[key] = _coerce(key, SCHEMA[key][0], value)
        for key, (_, default, _) in SCHEMA.items():
            if resolved.get(key) is None:
                resolved[key] = default
        if resolved['seed'] is None:
            resolved['seed'] = 0
        return Config(config=resolved)


def describe_schema():
    """The configuration reference page (one line per key)."""
    lines = ['Configuration keys (plain text: key = value; matrices as row-major comma lists, rows',
             'separated by ";"):', '']
    for key in sorted(SCHEMA, key=str.lower):
        kind, default, desc = SCHEMA[key]
        lines.append('  %-16s %-7s default %-22s %s' % (key, kind, repr(default)[:22], desc))
    return '\n'.join(lines)
