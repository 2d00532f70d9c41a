#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for the `cce` command line and its reports."""


import io
import json
import math
import os
import runpy
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout

import jsonschema

import cce

from cce.artifacts.checkpoint.checkpoint import read_checkpoint
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.cli.bench import median_seconds, predicted_cost_ratio
from cce.cli.commands import checkpoint_labels
from cce.cli.main import main
from cce.cli.report import ANALOGUES, dumps, format_report, load_schema, make_table, validate_report
from cce.exceptions import NumericalError
from tests.fixtures import config_text, small_pipeline_config


def run_cli(*argv):
    """Runs the command line, returning its exit code and standard output."""
    out = io.StringIO()
    with redirect_stdout(out), redirect_stderr(io.StringIO()):
        code = main([str(arg) for arg in argv])
    return code, out.getvalue()


def read_json(path):
    with open(path, encoding='utf-8') as handle:
        return json.load(handle)


class TestCommands(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.directory = tempfile.TemporaryDirectory()
        cls.root = cls.directory.name
        cls.config = os.path.join(cls.root, 'pipeline.ini')
        with open(cls.config, 'w', encoding='utf-8') as handle:
            handle.write(config_text(small_pipeline_config()))
        cls.model = os.path.join(cls.root, 'model.cce')
        cls.train_code, cls.train_output = run_cli('train', '--config', cls.config, '--out', cls.model, '--seed', 0)
        cls.compressed = os.path.join(cls.root, 'compressed.cce')
        cls.compress_code, cls.compress_output = run_cli('compress', cls.model, '--config', cls.config, '--out', cls.compressed,
                                                         '--baseline', 'magnitude', '--seed', 0)

    @classmethod
    def tearDownClass(cls):
        cls.directory.cleanup()

    def assertValidReport(self, report, command):
        jsonschema.validate(report, load_schema())
        self.assertEqual(report['command'], command)
        for table in report['tables'].values():
            self.assertIn(table['analogue'], ANALOGUES.values())

    def test_000_train(self):
        self.assertEqual(self.train_code, 0)
        self.assertIn('training', self.train_output)
        report = read_json(self.model + '.json')
        self.assertValidReport(report, 'train')
        row = report['tables']['training']['rows'][0]
        self.assertLess(row['perplexity'], 0.8 * row['vocab'])
        self.assertEqual(row['checkpoint_bytes'], os.path.getsize(self.model))
        self.assertEqual(report['checkpoints'], {'model': 'model.cce'})

    def test_001_compress(self):
        self.assertEqual(self.compress_code, 0)
        report = read_json(self.compressed + '.json')
        self.assertValidReport(report, 'compress')
        for name in ('layer_compression', 'matrix_compression', 'fidelity', 'activation_stability',
                     'attention_variability', 'noise_robustness'):
            self.assertIn(name, report['tables'])
            self.assertIn(name, self.compress_output)
        models = [row['model'] for row in report['tables']['fidelity']['rows']]
        self.assertEqual(models, ['uncompressed', 'cce', 'magnitude'])
        self.assertEqual(report['checkpoints'], {'input': 'model.cce', 'cce': 'compressed.cce'})
        self.assertLessEqual(report['plan']['planned_ratio'], 0.75 + 1e-12)
        self.assertEqual(len(report['schedule']), 2)
        self.assertIsInstance(read_checkpoint(self.compressed), CompressedModel)

    def test_002_compress_is_deterministic(self):
        with tempfile.TemporaryDirectory() as other:
            again = os.path.join(other, 'compressed.cce')
            code, _ = run_cli('compress', self.model, '--config', self.config, '--out', again, '--baseline', 'magnitude', '--seed', 0)
            self.assertEqual(code, 0)
            for suffix in ('', '.json'):
                with open(self.compressed + suffix, 'rb') as first, open(again + suffix, 'rb') as second:
                    self.assertEqual(first.read(), second.read())

    def test_003_analyze(self):
        out = os.path.join(self.root, 'analysis.json')
        code, output = run_cli('analyze', self.model, '--config', self.config, '--out', out)
        self.assertEqual(code, 0)
        report = read_json(out)
        self.assertValidReport(report, 'analyze')
        self.assertEqual(sorted(report['tables']),
                         ['covariance_spectrum', 'head_redundancy', 'layer_similarity', 'singular_value_profiles'])
        similarity = report['analysis']['similarity']
        self.assertEqual(len(similarity), 4)
        self.assertTrue(all(similarity[i][i] == 0.0 for i in range(4)))
        self.assertIn('layer_similarity', output)

    def test_004_evaluate(self):
        out = os.path.join(self.root, 'evaluation.json')
        code, _ = run_cli('evaluate', self.model, self.compressed, '--config', self.config, '--out', out, '--baseline', 'quantize')
        self.assertEqual(code, 0)
        report = read_json(out)
        self.assertValidReport(report, 'evaluate')
        self.assertEqual([row['model'] for row in report['tables']['fidelity']['rows']], ['model', 'compressed', 'quantize'])
        self.assertEqual(report['tables']['noise_robustness']['columns'], ['noise_level', 'model', 'compressed', 'quantize'])
        self.assertEqual([row['noise_level'] for row in report['tables']['noise_robustness']['rows']], [0.0, 0.5])

    def test_005_bench(self):
        out = os.path.join(self.root, 'bench.json')
        code, _ = run_cli('bench', self.compressed, '--config', self.config, '--out', out, '--repeats', 1)
        self.assertEqual(code, 0)
        report = read_json(out)
        self.assertValidReport(report, 'bench')
        memory = {row['model']: row for row in report['tables']['memory_footprint']['rows']}
        self.assertLess(memory['compressed']['stored_parameters'], memory['dense']['stored_parameters'])
        self.assertEqual(memory['compressed']['checkpoint_bytes'], os.path.getsize(self.compressed))
        self.assertEqual([row['rank'] for row in report['tables']['factored_layer_cost']['rows']], [4, 8])
        self.assertEqual(report['tables']['inference_efficiency']['rows'][0]['relative'], 1.0)

    def test_006_bench_dense_checkpoint(self):
        code, output = run_cli('bench', self.model, '--config', self.config, '--repeats', 1)
        self.assertEqual(code, 0)
        self.assertIn('memory_footprint', output)


class TestExitCodes(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.directory = tempfile.TemporaryDirectory()
        cls.root = cls.directory.name
        cls.config = os.path.join(cls.root, 'pipeline.ini')
        with open(cls.config, 'w', encoding='utf-8') as handle:
            handle.write(config_text(small_pipeline_config()))
        cls.model = os.path.join(cls.root, 'model.cce')
        code, _ = run_cli('train', '--config', cls.config, '--out', cls.model)
        if code != 0:
            raise RuntimeError(f'Training the test checkpoint failed with exit code {code}')

    @classmethod
    def tearDownClass(cls):
        cls.directory.cleanup()

    def write(self, name, text):
        path = os.path.join(self.root, name)
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(text)
        return path

    def test_000_usage(self):
        self.assertEqual(run_cli()[0], 1)
        self.assertEqual(run_cli('shrink', self.model)[0], 1)
        self.assertEqual(run_cli('train', '--config', self.config)[0], 1)
        self.assertEqual(run_cli('analyze', os.path.join(self.root, 'absent.cce'))[0], 1)
        self.assertEqual(run_cli('analyze', self.model, '--seed', -1)[0], 1)
        self.assertEqual(run_cli('analyze', self.model, '--seed', 2 ** 64)[0], 1)
        self.assertEqual(run_cli('bench', self.model, '--repeats', 0)[0], 1)
        self.assertEqual(run_cli('compress', self.model, '--baseline', 'pruning', '--out', 'x.cce')[0], 1)

    def test_001_validation(self):
        bad = self.write('bad.ini', '[plan]\nglobal_budget = 2\n')
        self.assertEqual(run_cli('analyze', self.model, '--config', bad)[0], 2)
        unknown = self.write('unknown.ini', '[model]\ndepth = 3\n')
        self.assertEqual(run_cli('analyze', self.model, '--config', unknown)[0], 2)
        self.assertEqual(run_cli('analyze', self.model, '--config', os.path.join(self.root, 'absent.ini'))[0], 2)
        tight = self.write('tight.ini', config_text(small_pipeline_config()).replace('global_budget = 0.75', 'global_budget = 0.01'))
        self.assertEqual(run_cli('compress', self.model, '--config', tight, '--out', os.path.join(self.root, 'tight.cce'))[0], 2)

    def test_002_corrupt_checkpoint(self):
        with open(self.model, 'rb') as handle:
            data = bytearray(handle.read())
        data[len(data) // 2] ^= 0x01
        corrupt = os.path.join(self.root, 'corrupt.cce')
        with open(corrupt, 'wb') as handle:
            handle.write(bytes(data))
        self.assertEqual(run_cli('analyze', corrupt, '--config', self.config)[0], 4)
        self.assertEqual(run_cli('evaluate', self.model, corrupt, '--config', self.config)[0], 4)
        not_a_checkpoint = self.write('notes.cce', 'plain text')
        self.assertEqual(run_cli('bench', not_a_checkpoint)[0], 4)


class TestReports(unittest.TestCase):

    def test_000_predicted_cost_ratio(self):
        self.assertEqual(predicted_cost_ratio((64, 64), 4), 0.125)
        self.assertEqual(predicted_cost_ratio((16, 32), 1), 48 / 512)

    def test_001_non_finite_numbers_are_rejected(self):
        report = {'tool': 'cce', 'version': '0', 'command': 'bench', 'seed': 0,
                  'config': small_pipeline_config().to_dict(), 'tables': {}}
        validate_report(report)
        report['tables']['memory_footprint'] = {'analogue': ANALOGUES['memory_footprint'], 'columns': ['ratio'],
                                                'rows': [{'ratio': math.nan}]}
        with self.assertRaises(NumericalError):
            validate_report(report)
        with self.assertRaises(NumericalError):
            dumps(report)

    def test_002_schema_violations(self):
        with self.assertRaises(jsonschema.ValidationError):
            validate_report({'tool': 'other'})

    def test_003_dumps_is_canonical(self):
        report = {'tool': 'cce', 'version': '0', 'command': 'evaluate', 'seed': 1,
                  'config': small_pipeline_config().to_dict(),
                  'tables': {'fidelity': {'analogue': ANALOGUES['fidelity'], 'columns': ['model', 'perplexity'],
                                          'rows': [{'perplexity': 3.5, 'model': 'cce'}]}}}
        text = dumps(report)
        self.assertEqual(text, dumps(json.loads(text)))
        self.assertIn('fidelity', format_report(report))

    def test_004_median_seconds(self):
        self.assertGreaterEqual(median_seconds(lambda: None, repeats=3), 0.0)
        with self.assertRaises(ValueError):
            median_seconds(lambda: None, repeats=0)

    def test_005_checkpoint_labels(self):
        self.assertEqual(checkpoint_labels(['a/model.cce', 'b/small.cce']), ['model', 'small'])
        self.assertEqual(checkpoint_labels(['a/model.cce', 'b/model.cce']), ['a/model.cce', 'b/model.cce'])

    def test_006_analogues_name_their_tables(self):
        self.assertTrue(make_table('layer_compression', ['layer'], [])['analogue'].startswith('Table 2'))
        self.assertTrue(ANALOGUES['fidelity'].startswith('Table 3'))
        self.assertTrue(ANALOGUES['inference_efficiency'].startswith('Table 4'))
        self.assertTrue(ANALOGUES['attention_variability'].startswith('Table 5'))
        self.assertTrue(ANALOGUES['activation_stability'].startswith('Table 7'))
        self.assertTrue(ANALOGUES['noise_robustness'].startswith('Fig. 1'))


class TestDocs(unittest.TestCase):

    def test_000_sphinx_configuration(self):
        path = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'docs', 'conf.py')
        namespace = runpy.run_path(path)
        self.assertEqual(namespace['project'], 'cce')
        self.assertEqual(namespace['release'], cce.__version__)
        self.assertNotIn('html_static_path', namespace)
        self.assertNotIn('templates_path', namespace)


if __name__ == '__main__':
    unittest.main()
