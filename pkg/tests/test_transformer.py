#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for the toy transformer, its synthetic corpus, training and the fidelity and layer statistics."""


import math
import unittest

import numpy as np
import torch

from cce.algorithms.compression.encoder import encode_model
from cce.algorithms.compression.planner import plan_compression
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelConfig, ModelParameters
from cce.exceptions import ShapeError, TrainingError
from cce.metrics.fidelity_metrics import classification_accuracy, perplexity, predictions, sequence_nll
from cce.metrics.layer_statistics import activation_stats, attention_stats, attention_variability, capture
from cce.model.corpus import STREAM_EVAL, STREAM_TRAIN, CorpusSpec, MarkovChain, classification_task, synthetic_corpus
from cce.model.training import init_parameters, middle_layers, plant_redundancy, train_toy
from cce.model.transformer import forward, forward_tensors, weights_as_tensors
from tests.fixtures import SMALL, TINY, random_model, random_probe, uniform_plan


def memorizing_model(config: ModelConfig, confidence: float) -> ModelParameters:
    """A model whose only nonzero path maps token 0 to a logit of about confidence x hidden for token 0."""
    model = ModelParameters.zeros(config)
    pattern = np.resize([1.0, -1.0], config.hidden)
    embedding = model['embedding'].copy()
    embedding[0] = pattern
    output = model['output'].copy()
    output[0] = confidence * pattern
    return model.replace({'embedding': embedding, 'output': output})


class TestModelParameters(unittest.TestCase):

    def test_000_shapes(self):
        shapes = TINY.parameter_shapes()
        self.assertEqual(shapes['blocks.0.ffn.w1'], (TINY.ffn_dim, TINY.hidden))
        self.assertEqual(shapes['blocks.1.ffn.b2'], (TINY.hidden,))
        model = ModelParameters.zeros(TINY)
        self.assertEqual(len(model.compressible_names()), 6 * TINY.layers)
        self.assertEqual(model.parameter_count(), sum(int(np.prod(s)) for s in shapes.values()))

    def test_001_validation(self):
        with self.assertRaises(ValueError):
            ModelConfig(layers=1)
        with self.assertRaises(ValueError):
            ModelConfig(hidden=10, heads=4)
        weights = dict(ModelParameters.zeros(TINY))
        weights['blocks.0.attn.q'] = np.zeros((3, 3))
        with self.assertRaises(ShapeError):
            ModelParameters(TINY, weights)
        del weights['blocks.0.attn.q']
        with self.assertRaises(ShapeError):
            ModelParameters(TINY, weights)

    def test_002_init_is_seeded(self):
        first, second = init_parameters(TINY, 3), init_parameters(TINY, 3)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])
        np.testing.assert_array_equal(first['blocks.0.ffn.b1'], 0.0)


class TestForward(unittest.TestCase):

    def setUp(self):
        self.model = random_model(TINY, seed=1)
        self.tokens = np.array([1, 5, 2, 7, 0, 3])

    def test_000_shapes(self):
        result = forward(self.model, self.tokens)
        self.assertEqual(result.logits.shape, (6, TINY.vocab))
        self.assertEqual(len(result.activations), TINY.layers)
        self.assertEqual(result.activations[0].shape, (6, TINY.hidden))
        self.assertEqual(result.attention[0].shape, (TINY.heads, 6, 6))
        batch = forward(self.model, np.stack([self.tokens, self.tokens]), capture=False)
        self.assertEqual(batch.logits.shape, (2, 6, TINY.vocab))
        self.assertEqual(batch.activations, [])

    def test_001_attention_is_causal_and_normalized(self):
        result = forward(self.model, self.tokens)
        for probabilities in result.attention:
            np.testing.assert_allclose(probabilities.sum(axis=-1), 1.0, atol=1e-6)
            np.testing.assert_array_equal(np.triu(probabilities, k=1), 0.0)

    def test_002_zero_model_attends_uniformly(self):
        result = forward(ModelParameters.zeros(TINY), self.tokens)
        np.testing.assert_array_equal(result.logits, 0.0)
        expected = np.tril(np.ones((6, 6))) / np.arange(1, 7)[:, None]
        for probabilities in result.attention:
            for head in probabilities:
                np.testing.assert_allclose(head, expected, atol=1e-15)

    def test_003_deterministic(self):
        first = forward(self.model, self.tokens)
        second = forward(self.model, self.tokens)
        np.testing.assert_array_equal(first.logits, second.logits)
        for before, after in zip(first.attention, second.attention):
            np.testing.assert_array_equal(before, after)

    def test_004_causal_prefix(self):
        full = forward(self.model, self.tokens).logits
        prefix = forward(self.model, self.tokens[:3]).logits
        np.testing.assert_allclose(full[:3], prefix, atol=1e-12)

    def test_005_rejects_bad_tokens(self):
        with self.assertRaises(ValueError):
            forward(self.model, np.array([0, TINY.vocab]))
        with self.assertRaises(ValueError):
            forward(self.model, np.zeros(TINY.max_sequence_length + 1, dtype=int))
        with self.assertRaises(ValueError):
            forward(self.model, np.array([], dtype=int))
        with self.assertRaises(ValueError):
            forward(self.model, np.array([0.5, 1.0]))

    def test_006_factored_execution_matches_reconstruction(self):
        compressed = encode_model(self.model, uniform_plan(self.model, 2, sparsity_budget=3))
        dense = forward(compressed, self.tokens, capture=False).logits
        factored = forward(compressed, self.tokens, capture=False, weights=weights_as_tensors(compressed, factored=True)).logits
        np.testing.assert_allclose(factored, dense, atol=1e-10)

    def test_007_observer_sees_every_compressible_input(self):
        seen = []
        tensors = weights_as_tensors(self.model)
        with torch.no_grad():
            forward_tensors(tensors, TINY, torch.from_numpy(self.tokens[None, :]),
                            observe=lambda name, inputs: seen.append((name, inputs.shape)))
        self.assertEqual([name for name, _ in seen], self.model.compressible_names())
        for name, shape in seen:
            self.assertEqual(shape[-1], self.model[name].shape[1])
            self.assertEqual(tuple(shape[:-1]), (1, len(self.tokens)))


class TestPerplexity(unittest.TestCase):

    def test_000_uniform_logits(self):
        corpus = np.random.default_rng(0).integers(0, TINY.vocab, size=(5, 8))
        self.assertAlmostEqual(perplexity(ModelParameters.zeros(TINY), corpus), TINY.vocab, places=9)

    def test_001_straight_line_oracle(self):
        model = random_model(TINY, seed=2)
        corpus = np.random.default_rng(1).integers(0, TINY.vocab, size=(3, 5))
        total = 0.0
        for sequence in corpus:
            logits = forward(model, sequence, capture=False).logits
            for t in range(len(sequence) - 1):
                row = logits[t]
                log_normalizer = math.log(sum(math.exp(v - row.max()) for v in row)) + row.max()
                total += log_normalizer - row[sequence[t + 1]]
        expected = math.exp(total / (3 * 4))
        self.assertAlmostEqual(perplexity(model, corpus), expected, places=10)
        self.assertEqual(len(sequence_nll(model, corpus)), 3)

    def test_002_memorizing_model_approaches_one(self):
        corpus = np.zeros((4, 8), dtype=int)
        loose, sharp = perplexity(memorizing_model(TINY, 0.5), corpus), perplexity(memorizing_model(TINY, 2.0), corpus)
        self.assertGreater(sharp, 1.0)
        self.assertLess(sharp, loose)
        self.assertLess(sharp, 1.0 + 1e-3)

    def test_003_at_least_one(self):
        corpus = np.random.default_rng(2).integers(0, TINY.vocab, size=(4, 8))
        for seed in range(3):
            self.assertGreaterEqual(perplexity(random_model(TINY, seed=seed, std=1.0), corpus), 1.0)

    def test_004_needs_two_tokens(self):
        with self.assertRaises(ValueError):
            perplexity(random_model(TINY), np.zeros((2, 1), dtype=int))


class TestClassification(unittest.TestCase):

    def test_000_task_labels_are_planted_successors(self):
        spec = CorpusSpec(sequences=1, length=6, vocab=TINY.vocab, observation_noise=0.0)
        task = classification_task(4, 20, spec)
        self.assertEqual(task.inputs.shape, (20, 6))
        noiseless = CorpusSpec(sequences=200, length=6, vocab=TINY.vocab, successor_probability=1.0, observation_noise=0.0)
        corpus = synthetic_corpus(4, noiseless)
        successors = dict(zip(corpus[:, 0].tolist(), corpus[:, 1].tolist()))
        for sequence, label in zip(task.inputs, task.labels):
            if int(sequence[-1]) in successors:
                self.assertEqual(int(label), successors[int(sequence[-1])])

    def test_001_accuracy_range(self):
        spec = CorpusSpec(sequences=1, length=6, vocab=TINY.vocab)
        task = classification_task(5, 16, spec)
        accuracy = classification_accuracy(random_model(TINY), task)
        self.assertTrue(0.0 <= accuracy <= 1.0)
        self.assertEqual(predictions(random_model(TINY), task.inputs).shape, (16,))

    def test_002_labels_depend_on_the_whole_sequence(self):
        spec = CorpusSpec(sequences=1, length=6, vocab=TINY.vocab, successor_probability=1.0, observation_noise=0.3)
        task = classification_task(3, 200, spec)
        successors = MarkovChain.from_spec(3, spec).successors
        agreeing = 0
        for sequence, label in zip(task.inputs, task.labels):
            candidates = []
            for t, token in enumerate(sequence):
                for _ in range(len(sequence) - t):
                    token = successors[token]
                candidates.append(int(token))
            agreeing += int(np.argmax(np.bincount(candidates, minlength=TINY.vocab)) == label)
        self.assertGreaterEqual(agreeing, 0.9 * len(task.labels))
        self.assertTrue(np.any(task.labels != successors[task.inputs[:, -1]]))


class TestCorpus(unittest.TestCase):

    def test_000_deterministic_streams(self):
        spec = CorpusSpec(sequences=8, length=10, vocab=16)
        np.testing.assert_array_equal(synthetic_corpus(1, spec), synthetic_corpus(1, spec))
        self.assertFalse(np.array_equal(synthetic_corpus(1, spec, STREAM_TRAIN), synthetic_corpus(1, spec, STREAM_EVAL)))
        corpus = synthetic_corpus(1, spec)
        self.assertEqual(corpus.shape, (8, 10))
        self.assertTrue(corpus.min() >= 0 and corpus.max() < 16)

    def test_001_validation(self):
        with self.assertRaises(ValueError):
            CorpusSpec(successor_probability=1.5)
        with self.assertRaises(ValueError):
            CorpusSpec(length=1)
        with self.assertRaises(ValueError):
            CorpusSpec(observation_noise=-0.1)


class TestTraining(unittest.TestCase):

    def setUp(self):
        self.config = ModelConfig(layers=2, hidden=16, heads=2, vocab=16, max_sequence_length=16, ffn_multiplier=2)
        self.spec = CorpusSpec(sequences=64, length=16, vocab=16)

    def test_000_reaches_target_deterministically(self):
        first = train_toy(0, self.spec, self.config, steps=150, batch_size=16, learning_rate=0.01, eval_sequences=16)
        second = train_toy(0, self.spec, self.config, steps=150, batch_size=16, learning_rate=0.01, eval_sequences=16)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])
        held_out = synthetic_corpus(0, CorpusSpec(16, 16, 16), stream=STREAM_EVAL)
        self.assertLess(perplexity(first, held_out), 0.8 * self.config.vocab)

    def test_001_untrained_model_misses_target(self):
        with self.assertRaises(TrainingError) as context:
            train_toy(0, self.spec, self.config, steps=0, eval_sequences=8)
        self.assertGreaterEqual(context.exception.perplexity, 0.8 * self.config.vocab)

    def test_002_rejects_mismatched_corpus(self):
        with self.assertRaises(ValueError):
            train_toy(0, CorpusSpec(sequences=4, length=8, vocab=32), self.config, steps=1)

    def test_003_plant_redundancy(self):
        config = ModelConfig(layers=6, hidden=8, heads=2, vocab=16, max_sequence_length=8, ffn_multiplier=2)
        self.assertEqual(middle_layers(config), (2, 3))
        model = random_model(config)
        planted = plant_redundancy(model, rank=2, noise=0.0)
        self.assertEqual(np.linalg.matrix_rank(planted['blocks.2.attn.q']), 2)
        self.assertEqual(np.linalg.matrix_rank(planted['blocks.3.ffn.w1']), 2)
        np.testing.assert_array_equal(planted['blocks.0.attn.q'], model['blocks.0.attn.q'])
        with self.assertRaises(ValueError):
            plant_redundancy(model, rank=0)


class TestLayerStatistics(unittest.TestCase):

    def setUp(self):
        self.model = random_model(TINY, seed=3)
        self.inputs = random_probe(TINY, count=5, seed=3).inputs

    def test_000_zero_model(self):
        stats = activation_stats(ModelParameters.zeros(TINY), self.inputs)
        self.assertEqual(stats.means, (0.0,) * TINY.layers)
        self.assertEqual(stats.stds, (0.0,) * TINY.layers)

    def test_001_straight_line_activation_stats(self):
        stats = activation_stats(self.model, self.inputs)
        stacked = [np.stack([forward(self.model, sequence).activations[layer] for sequence in self.inputs]) for layer in range(TINY.layers)]
        for layer in range(TINY.layers):
            self.assertAlmostEqual(stats.means[layer], float(np.mean(np.abs(stacked[layer]))), places=12)
            self.assertAlmostEqual(stats.stds[layer], float(np.std(stacked[layer])), places=12)

    def test_002_attention_stats(self):
        stats = attention_stats(self.model, self.inputs)
        self.assertEqual(len(stats.variability), TINY.layers)
        self.assertTrue(all(v >= 0 for v in stats.variability + stats.dispersion))
        _, attention = capture(self.model, self.inputs)
        self.assertEqual(attention[0].shape, (5, TINY.heads, TINY.max_sequence_length, TINY.max_sequence_length))

    def test_003_unnormalized_attention(self):
        with self.assertRaises(ArithmeticError):
            attention_variability(np.full((1, 1, 2, 2), 0.3))

    def test_004_repeatable(self):
        self.assertEqual(activation_stats(self.model, self.inputs), activation_stats(self.model, self.inputs))
        self.assertEqual(attention_stats(self.model, self.inputs), attention_stats(self.model, self.inputs))


class TestLosslessCompression(unittest.TestCase):

    def test_000_metrics_are_bit_identical(self):
        model = random_model(SMALL, seed=4)
        plan = plan_compression(model, 1.0)
        compressed = encode_model(model, plan)
        inputs = random_probe(SMALL, count=4, seed=4).inputs
        corpus = synthetic_corpus(4, CorpusSpec(sequences=4, length=8, vocab=SMALL.vocab))
        self.assertEqual(perplexity(model, corpus), perplexity(compressed, corpus))
        self.assertEqual(activation_stats(model, inputs), activation_stats(compressed, inputs))
        self.assertEqual(attention_stats(model, inputs), attention_stats(compressed, inputs))
        self.assertIsInstance(compressed, CompressedModel)
        self.assertEqual(compressed.encodings, {})


if __name__ == '__main__':
    unittest.main()
