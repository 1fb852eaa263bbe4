#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Running pure per-sample computations on a thread pool.
"""

import os
from multiprocessing.pool import ThreadPool

from cocyclelab.logf import log_debug

THREADS_ENV = 'COCYCLE_LAB_THREADS'


def worker_count(threads=None):
    """Number of workers: the environment override wins, then the argument, then CPU count."""
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    if threads:
        return max(1, int(threads))
    return os.cpu_count() or 1


def parallel_map(func, items, threads=None):
    """Apply `func' to all items, results in input order.

    @param func: a pure function of one argument
    @param items: iterable of arguments
    @param threads: worker count (None = default, see L{worker_count})
    @rtype: list
    """
    items = list(items)
    workers = min(worker_count(threads), max(1, len(items)))
    if workers == 1:
        return [func(item) for item in items]
    log_debug('parallel_map: %d items on %d threads' % (len(items), workers))
    with ThreadPool(processes=workers) as pool:
        return pool.map(func, items)
