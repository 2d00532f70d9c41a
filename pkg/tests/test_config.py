#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `cce.config`."""


import os
import tempfile
import unittest
from dataclasses import replace

from cce.algorithms.redundancy.thresholding import FIXED
from cce.config import CCEConfig, EvaluationSection, LossSection, ScheduleSection, load_config, parse_config
from cce.exceptions import ConfigError
from tests.fixtures import config_text, small_pipeline_config


class TestDefaults(unittest.TestCase):

    def test_000_defaults(self):
        config = load_config(None)
        self.assertEqual(config, CCEConfig())
        self.assertEqual(config.model.layers, 6)
        self.assertEqual(config.plan.global_budget, 0.6)
        self.assertEqual(config.plan.energy_budget, 0.95)
        self.assertEqual(config.loss.lam, 1.0)
        self.assertEqual(config.schedule.steps, 3)
        self.assertEqual(config.evaluation.noise_levels, (0.0, 0.1, 0.2, 0.3, 0.4, 0.5))
        self.assertFalse(config.analysis.hessian_diagnostic)

    def test_001_empty_text(self):
        self.assertEqual(parse_config(''), CCEConfig())

    def test_002_to_dict_uses_ini_names(self):
        data = CCEConfig().to_dict()
        self.assertIn('lambda', data['loss'])
        self.assertNotIn('lam', data['loss'])
        self.assertIsInstance(data['evaluation']['noise_levels'], list)
        self.assertEqual(sorted(data), ['analysis', 'evaluation', 'loss', 'model', 'plan', 'schedule'])


class TestParsing(unittest.TestCase):

    def test_000_types(self):
        config = parse_config('\n'.join([
            '[model]', 'layers = 4', 'learning_rate = 0.01',
            '[analysis]', 'hessian_diagnostic = yes',
            '[plan]', 'threshold_mode = fixed', 'fixed_tau = 0.5',
            '[loss]', 'lambda = 0.25',
            '[evaluation]', 'noise_levels = 0.0, 0.2, 0.4', 'noise_kind = reorder',
        ]))
        self.assertEqual(config.model.layers, 4)
        self.assertEqual(config.model.learning_rate, 0.01)
        self.assertTrue(config.analysis.hessian_diagnostic)
        self.assertEqual(config.plan.threshold_mode, FIXED)
        self.assertEqual(config.plan.policy().fixed_tau, 0.5)
        self.assertEqual(config.loss.lam, 0.25)
        self.assertEqual(config.evaluation.noise_levels, (0.0, 0.2, 0.4))
        self.assertEqual(config.evaluation.noise_kind, 'reorder')
        self.assertEqual(config.model.hidden, 64)

    def test_001_round_trip_through_text(self):
        for config in (CCEConfig(), small_pipeline_config(), small_pipeline_config(loss=LossSection(lam=0.5, tau=0.1))):
            self.assertEqual(parse_config(config_text(config)), config)

    def test_002_unknown_names(self):
        for text in ('[modle]\nlayers = 4', '[model]\ndepth = 4', '[loss]\nlam = 0.5'):
            with self.assertRaises(ConfigError):
                parse_config(text)

    def test_003_bad_types(self):
        for text in ('[model]\nlayers = 4.5', '[model]\nlearning_rate = fast', '[analysis]\nhessian_diagnostic = maybe',
                     '[evaluation]\nnoise_levels = 0.1, low'):
            with self.assertRaises(ConfigError) as context:
                parse_config(text, 'pipeline.ini')
            self.assertEqual(context.exception.exit_code, 2)

    def test_004_bad_ranges(self):
        for text in ('[model]\nlayers = 1', '[model]\nhidden = 10\nheads = 4', '[plan]\nglobal_budget = 0',
                     '[plan]\nglobal_budget = 1.5', '[plan]\nthreshold_mode = adaptive', '[plan]\nenergy_budget = 0',
                     '[loss]\nbeta = -1', '[loss]\nstep_size = 0', '[schedule]\nsteps = 0',
                     '[schedule]\ndivergence_ceiling = 1', '[evaluation]\nnoise_levels = 0.2, 0.1',
                     '[evaluation]\nnoise_levels = 0.0, 0.0', '[evaluation]\nnoise_kind = blur',
                     '[model]\nobservation_noise = 1.5', '[loss]\ncalibrate = maybe'):
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    parse_config(text)

    def test_005_syntax_error(self):
        with self.assertRaises(ConfigError):
            parse_config('layers = 4')

    def test_006_direct_construction_is_validated(self):
        with self.assertRaises(ConfigError):
            replace(CCEConfig(), schedule=ScheduleSection(workers=0))
        with self.assertRaises(ConfigError):
            CCEConfig(evaluation=EvaluationSection(quantize_bits=0))


class TestLoadConfig(unittest.TestCase):

    def test_000_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'pipeline.ini')
            with open(path, 'w', encoding='utf-8') as handle:
                handle.write('[schedule]\nsteps = 5\n')
            self.assertEqual(load_config(path).schedule.steps, 5)

    def test_001_missing_file(self):
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(ConfigError):
                load_config(os.path.join(directory, 'absent.ini'))


if __name__ == '__main__':
    unittest.main()
