#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
File utilities: streams, JSON/CSV report writers and pickled objects.
"""

import gzip
import json
import math
import pickle
from io import IOBase
from codecs import StreamReader, StreamWriter

import numpy as np
import unicodecsv

from cocyclelab import __version__

SCHEMA_VERSION = 1


def file_stream(filename, mode='r', encoding='UTF-8'):
    """Given a file stream or a file name, return the corresponding stream,
    handling GZip. Depending on mode, open an input or output stream.
    """
    if isinstance(filename, (IOBase, StreamReader, StreamWriter)):
        fh = filename
    elif filename.endswith('.gz'):
        if 'b' in mode:
            fh = gzip.open(filename, mode)
        else:
            fh = gzip.open(filename, mode.replace('t', '') + 't', encoding=encoding)
    elif 'b' in mode:
        fh = open(filename, mode)
    else:
        fh = open(filename, mode, encoding=encoding)
    return fh


def to_plain(obj):
    """Convert numpy values and containers into JSON-serializable Python objects.
    Non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if hasattr(obj, 'to_dict'):
        return to_plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(key): to_plain(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(val) for val in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        if math.isfinite(val):
            return val
        return 'nan' if math.isnan(val) else ('inf' if val > 0 else '-inf')
    return obj


def report_header(command, config):
    """The common header embedded in every output file."""
    return {'schema': SCHEMA_VERSION, 'version': __version__, 'command': command,
            'config': to_plain(config)}


def write_json(filename, command, config, payload):
    """Write a JSON report (sorted keys, UTF-8) with the common header."""
    data = report_header(command, config)
    data['result'] = to_plain(payload)
    with file_stream(filename, mode='w') as fh:
        json.dump(data, fh, sort_keys=True, indent=1, ensure_ascii=False)
        fh.write('\n')


def read_json(filename):
    with file_stream(filename) as fh:
        return json.load(fh)


def write_csv(filename, command, config, columns, rows):
    """Write a CSV table preceded by '#'-comment lines carrying the report header.

    @param columns: list of column names
    @param rows: iterable of row sequences
    """
    header = json.dumps(report_header(command, config), sort_keys=True, ensure_ascii=False)
    with file_stream(filename, mode='wb') as fh:
        fh.write(('# ' + header + '\r\n').encode('UTF-8'))
        writer = unicodecsv.writer(fh, encoding='UTF-8')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(val) for val in row])


def _csv_cell(val):
    val = to_plain(val)
    if isinstance(val, float):
        return repr(val)
    return val


def save_to_file(obj, fname):
    """Pickle an object (gzip-aware)."""
    with file_stream(fname, mode='wb', encoding=None) as fh:
        pickle.dump(obj, fh, pickle.HIGHEST_PROTOCOL)


def load_from_file(fname):
    with file_stream(fname, mode='rb', encoding=None) as fh:
        return pickle.load(fh)
