#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Numerical laboratory for linear cocycles: Lyapunov spectra, dominated splittings and
explicit perturbations lowering the exponents along orbits where domination fails.
"""

__version__ = '0.1.0'
