#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Random number generators. Every randomized operation takes an explicit seed and builds
its own generator, so concurrent workers never share state.
"""

import numpy as np

DEFAULT_SEED = 1206

rnd = np.random.default_rng(DEFAULT_SEED)


def generator(seed=None):
    """Return a fresh generator for the given seed (the module default if None)."""
    return np.random.default_rng(DEFAULT_SEED if seed is None else seed)

