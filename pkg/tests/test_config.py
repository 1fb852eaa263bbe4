#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for configuration loading, coercion and the output writers.
"""

import io
import json
import sys

import numpy as np
import pytest

from cocyclelab.config import Config, parse_plain, parse_value, describe_schema, SCHEMA
from cocyclelab.errors import ConfigError
from cocyclelab.futil import write_json, read_json, write_csv, to_plain, save_to_file, load_from_file
from cocyclelab.parallel import parallel_map, worker_count, THREADS_ENV
from cocyclelab.logf import format_arg, log_info, set_log_stream
from cocyclelab.rnd import generator
from cocyclelab.svg import line_plot


def test_parse_value_kinds():
    assert parse_value('3') == 3
    assert parse_value('2.5e-1') == 0.25
    assert parse_value('1, 2') == [1, 2]
    assert parse_value('2, 0; 0, 0.5') == [[2, 0], [0, 0.5]]
    assert parse_value('yes') is True
    assert parse_value('none') is None
    assert parse_value('circle-rotation') == 'circle-rotation'


def test_parse_plain_comments():
    cfg = parse_plain(['# header', 'system = cat-map   # trailing', '', 'eps = 0.2'])
    assert cfg == {'system': 'cat-map', 'eps': 0.2}
    with pytest.raises(ConfigError):
        parse_plain(['this is not a pair'])


def test_plain_file_and_overrides(tmp_path):
    path = tmp_path / 'exp.cfg'
    path.write_text('cocycle = constant\nmatrix = 2, 0; 0, 0.5\nn = 500\nseed = 7\n')
    cfg = Config(str(path)).update({'n': 1000, 'eps': None}).resolve()
    assert cfg['matrix'] == [[2.0, 0.0], [0.0, 0.5]]
    assert cfg['n'] == 1000
    assert cfg['seed'] == 7
    assert cfg['eps'] == SCHEMA['eps'][1]


def test_yaml_and_python_files(tmp_path):
    yml = tmp_path / 'exp.yaml'
    yml.write_text('cocycle: schrodinger\nE: 3.0\nV: zero\n')
    assert Config(str(yml)).resolve()['E'] == 3.0
    mod = tmp_path / 'exp_module.py'
    mod.write_text("config = {'cocycle': 'winding', 'winding': 2}\n")
    cfg = Config(str(mod)).resolve()
    assert cfg['cocycle'] == 'winding' and cfg['winding'] == 2


def test_unknown_key_named():
    with pytest.raises(ConfigError, match='bogus') as err:
        Config(config={'bogus': 1}).resolve()
    assert err.value.key == 'bogus'


def test_invalid_value_named():
    with pytest.raises(ConfigError, match='n'):
        Config(config={'n': 'many'}).resolve()
    with pytest.raises(ConfigError, match='matrix'):
        Config(config={'matrix': [[1.0, 2.0]]}).resolve()


def test_seed_always_present():
    assert Config().resolve()['seed'] == 0


def test_describe_schema_lists_keys():
    page = describe_schema()
    for key in ('system', 'cocycle', 'eps', 'kernel', 'E_grid'):
        assert key in page


def test_json_is_deterministic(tmp_path):
    payload = {'b': np.float64(0.1), 'a': np.arange(3), 'c': float('inf')}
    first, second = tmp_path / 'one.json', tmp_path / 'two.json'
    write_json(str(first), 'spectrum', {'seed': 0}, payload)
    write_json(str(second), 'spectrum', {'seed': 0}, payload)
    assert first.read_bytes() == second.read_bytes()
    data = read_json(str(first))
    assert data['schema'] == 1
    assert data['result'] == {'a': [0, 1, 2], 'b': 0.1, 'c': 'inf'}


def test_csv_header_and_quoting(tmp_path):
    path = tmp_path / 'table.csv'
    write_csv(str(path), 'jump', {'seed': 0}, ['name', 'value'], [['a, b', 0.5], ['c', None]])
    lines = path.read_text(encoding='UTF-8').splitlines()
    assert lines[0].startswith('# ')
    assert json.loads(lines[0][2:])['command'] == 'jump'
    assert lines[1] == 'name,value'
    assert lines[2] == '"a, b",0.5'
    assert lines[3] == 'c,'


def test_to_plain_uses_to_dict():
    class Report(object):
        def to_dict(self):
            return {'x': np.int64(3)}

    assert to_plain([Report()]) == [{'x': 3}]


def test_pickle_round_trip_gzip(tmp_path):
    path = str(tmp_path / 'obj.pickle.gz')
    save_to_file({'m': np.eye(2)}, path)
    np.testing.assert_array_equal(load_from_file(path)['m'], np.eye(2))


def test_parallel_map_keeps_order(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert parallel_map(lambda x: x * x, range(20), threads=4) == [x * x for x in range(20)]
    monkeypatch.setenv(THREADS_ENV, '3')
    assert worker_count(8) == 3


def test_generators_reproducible():
    assert generator(5).random() == generator(5).random()
    assert generator(5).random() != generator(6).random()


def test_svg_document():
    doc = line_plot({'lambda_1': ([0, 1, 2], [0.1, float('nan'), 0.3])}, 'title', 'x', 'y')
    assert doc.startswith('<?xml')
    assert 'version="1.1"' in doc
    assert 'lambda_1' in doc and 'title' in doc
    scatter = line_plot({'gap': ([0, 1], [0.2, 0.1])}, 'gaps', 'sample', 'gap', scatter=True)
    assert '<svg' in scatter and 'gap' in scatter


def test_log_lines():
    buf = io.StringIO()
    set_log_stream(buf)
    try:
        log_info('spectrum started')
    finally:
        set_log_stream(sys.stderr)
    assert buf.getvalue().rstrip().endswith('INFO: spectrum started')
    assert '\n' not in format_arg(np.eye(3))
    assert format_arg(1.0 / 3.0) == '0.333333'
