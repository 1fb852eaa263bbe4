#!/usr/bin/env python3
# coding=utf-8


"""
Logging functions: timestamped INFO/WARN lines on stderr and an optional debug log
(usually a gzipped file) for per-step detail of the constructions.
"""

import sys
from time import asctime

import numpy as np


debug_stream = None
log_stream = sys.stderr


def _emit(stream, level, text):
    if level:
        print(asctime(), level + ':', text, file=stream)
    else:
        print(asctime(), text, file=stream)
    stream.flush()


def format_arg(arg, digits=6):
    """Single-line rendering of a debug argument; arrays are printed compactly."""
    if isinstance(arg, np.ndarray):
        return np.array2string(arg, precision=digits, max_line_width=10 ** 6, separator=',').replace('\n', '')
    if isinstance(arg, float):
        return '%.*g' % (digits, arg)
    return str(arg)


def log_info(message):
    "Print an information message"
    _emit(log_stream, 'INFO', message)


def log_warn(message):
    "Print a warning message"
    _emit(log_stream, 'WARN', message)


def log_debug(*args):
    """Print debug message(s) into the debug stream, if one is set."""
    if debug_stream is None:
        return
    _emit(debug_stream, None, ' '.join(format_arg(arg) for arg in args))


def set_debug_stream(stream):
    global debug_stream
    debug_stream = stream


def close_debug_stream():
    """Close the debug stream (gzipped logs are complete only after this)."""
    global debug_stream
    if debug_stream is not None and debug_stream not in (sys.stdout, sys.stderr):
        debug_stream.close()
    debug_stream = None


def set_log_stream(stream):
    """Redirect info/warning output."""
    global log_stream
    log_stream = stream


def is_debug_stream():
    """Return True if there is a debug stream (debug logfile) set up."""
    return debug_stream is not None
