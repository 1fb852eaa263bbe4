#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Post-mortem debugging of failed runs.

See http://stackoverflow.com/questions/242485/starting-python-debugger-automatically-on-error
"""

import sys
import traceback


def exc_info_hook(exc_type, value, tb):
    """Exception hook: opens a PuDB post-mortem session for uncaught exceptions when
    running non-interactively on a terminal; falls back to the default hook otherwise."""
    interactive = hasattr(sys, 'ps1')
    if interactive or not sys.stderr.isatty() or issubclass(exc_type, KeyboardInterrupt):
        sys.__excepthook__(exc_type, value, tb)
        return
    import pudb
    traceback.print_exception(exc_type, value, tb)
    print('\n%s in an experiment run, press Enter to start the debugger...' % exc_type.__name__)
    input()
    pudb.post_mortem(tb)
