#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SVG 1.1 line/scatter plots for experiment reports, rendered by matplotlib without a
display (the Figure API, no pyplot state).
"""

import io

import numpy as np
from matplotlib import rc_context
from matplotlib.figure import Figure

from cocyclelab.futil import file_stream

FIGSIZE = (6.4, 4.0)

# text stays text and element ids are stable between runs
SVG_RC = {'svg.fonttype': 'none', 'svg.hashsalt': 'cocyclelab'}


def line_plot(series, title='', xlabel='', ylabel='', scatter=False):
    """Render named (x, y) series into an SVG document string.

    @param series: dict name -> (xs, ys); non-finite points are skipped
    @param scatter: draw markers instead of lines
    @rtype: str
    """
    with rc_context(SVG_RC):
        fig = Figure(figsize=FIGSIZE)
        ax = fig.subplots()
        for name in sorted(series):
            xs, ys = (np.asarray(v, dtype=float) for v in series[name])
            keep = np.isfinite(xs) & np.isfinite(ys)
            if scatter:
                ax.scatter(xs[keep], ys[keep], s=8, label=name)
            else:
                ax.plot(xs[keep], ys[keep], lw=1, label=name)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if series:
            ax.legend(loc='best', fontsize='small')
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format='svg', metadata={'Date': None})
    return buf.getvalue()


def write_svg(filename, series, title='', xlabel='', ylabel='', scatter=False):
    with file_stream(filename, mode='w') as fh:
        fh.write(line_plot(series, title, xlabel, ylabel, scatter))
