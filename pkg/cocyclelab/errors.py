#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Exceptions raised by the library.

Numerical failures derive from L{NumericalError} (exit code 1 in the command-line tool),
configuration problems from L{ConfigError} (exit code 2).
"""


class CocycleLabError(Exception):
    """Base class of all library errors."""
    pass


class NumericalError(CocycleLabError, ArithmeticError):
    """A computation could not be carried out or its result violates a checked contract."""
    pass


class NonInvertibleError(NumericalError):
    def __init__(self, what='matrix'):
        super(NonInvertibleError, self).__init__('non-invertible ' + what)


class DegenerateError(NumericalError):
    pass


class NotLagrangianError(NumericalError):
    def __init__(self, residual):
        super(NotLagrangianError, self).__init__('not Lagrangian (form residual %g)' % residual)
        self.residual = residual


class GroupViolationError(NumericalError):
    def __init__(self, step, group, residual):
        super(GroupViolationError, self).__init__(
            'group violation at step %d (%s residual %g)' % (step, group, residual))
        self.step = step


class CadenceError(NumericalError):
    def __init__(self, cadence):
        super(CadenceError, self).__init__(
            'cadence too large: overflow before re-orthonormalization (cadence %d)' % cadence)


class UnresolvedMultiplicityError(NumericalError):
    pass


class SplittingCollapseError(NumericalError):
    def __init__(self, step, sigma):
        super(SplittingCollapseError, self).__init__(
            'splitting collapse at step %d (transversality %g)' % (step, sigma))
        self.step = step


class MarginError(NumericalError):
    def __init__(self, ratio, margin):
        super(MarginError, self).__init__(
            'domination margin insufficient: ratio %g, required < %g' % (ratio, margin))


class AngleBudgetError(NumericalError):
    def __init__(self, angle, alpha):
        super(AngleBudgetError, self).__init__(
            'angle exceeds budget: %g >= %g' % (angle, alpha))


class HorizonError(NumericalError):
    def __init__(self, m, m_min):
        super(HorizonError, self).__init__('horizon below budget minimum: m = %d, m_min = %d' % (m, m_min))
        self.m = m
        self.m_min = m_min


class DominatedError(NumericalError):
    def __init__(self, ratio, detail=''):
        msg = 'dominated: interchange not guaranteed (ratio %g < 1/2)' % ratio
        if detail:
            msg += '; ' + detail
        super(DominatedError, self).__init__(msg)
        self.ratio = ratio


class SegmentMismatchError(NumericalError):
    def __init__(self):
        super(SegmentMismatchError, self).__init__('orbit segments not adjacent')


class EllipseError(NumericalError):
    def __init__(self, step, residual):
        super(EllipseError, self).__init__(
            'ellipse not invariant at step %d (residual %g)' % (step, residual))


class HypothesisError(NumericalError):
    def __init__(self, detail):
        super(HypothesisError, self).__init__('hypotheses not met: ' + detail)


class WitnessError(NumericalError):
    def __init__(self, ratio):
        super(WitnessError, self).__init__(
            'no interchange witness near midpoint (ratio %g < 1/2)' % ratio)


class ThinnessError(NumericalError):
    def __init__(self, a, tau, b):
        super(ThinnessError, self).__init__(
            'cylinder not thin enough: a = %g <= tau * b = %g' % (a, tau * b))


class MixedSignError(NumericalError):
    def __init__(self):
        super(MixedSignError, self).__init__(
            'eigenvalue arguments of mixed sign: use composite kernel')


class FlowIntegrationError(NumericalError):
    def __init__(self, message):
        super(FlowIntegrationError, self).__init__('flow integration failed: ' + message)


class InvariantViolation(NumericalError):
    pass


class ConfigError(CocycleLabError, ValueError):
    """Invalid configuration; carries the offending key."""

    def __init__(self, key, message=None):
        super(ConfigError, self).__init__(message or ('invalid configuration key: ' + key))
        self.key = key
