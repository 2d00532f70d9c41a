# -*- coding: utf-8 -*-

"""Shared builders and straight-line oracles for the cce tests."""

import itertools
import math
from dataclasses import replace

import numpy as np

from cce.algorithms.compression.planner import CompressionPlan, PlanEntry
from cce.algorithms.loss.loss_config import ProbeSet
from cce.artifacts.model_parameters.model_parameters import ModelConfig, ModelParameters
from cce.config import AnalysisSection, CCEConfig, EvaluationSection, LossSection, ModelSection, PlanSection, ScheduleSection
from cce.model.training import init_parameters

TINY = ModelConfig(layers=2, hidden=8, heads=2, vocab=16, max_sequence_length=8, ffn_multiplier=2)
SMALL = ModelConfig(layers=4, hidden=16, heads=2, vocab=16, max_sequence_length=8, ffn_multiplier=2)
PLANTED = ModelConfig(layers=6, hidden=16, heads=2, vocab=32, max_sequence_length=8, ffn_multiplier=2)


def random_model(config: ModelConfig = TINY, seed: int = 0, std: float = 0.3) -> ModelParameters:
    return init_parameters(config, seed, std)


def random_probe(config: ModelConfig = TINY, count: int = 4, length: int = None, seed: int = 0) -> ProbeSet:
    rng = np.random.default_rng(seed)
    length = config.max_sequence_length if length is None else length
    return ProbeSet.uniform(rng.integers(0, config.vocab, size=(count, length)))


def uniform_plan(model: ModelParameters, rank: int, sparsity_budget: int = 0, schedule_steps: int = 1) -> CompressionPlan:
    """A plan encoding every compressible matrix at the same rank, bypassing the budget search."""
    entries = []
    for layer_index, name, matrix in model.compressible_layers():
        m, n = matrix.shape
        entries.append(PlanEntry(name, layer_index, (m, n), min(rank, m, n), min(sparsity_budget, m * n), 0.0))
    return CompressionPlan(tuple(entries), 0.5, 0.95, schedule_steps)


def small_pipeline_config(**sections) -> CCEConfig:
    """A configuration sized for the SMALL architecture, fast enough for unit tests."""
    config = CCEConfig(
        model=ModelSection(layers=SMALL.layers, hidden=SMALL.hidden, heads=SMALL.heads, vocab=SMALL.vocab,
                           max_sequence_length=SMALL.max_sequence_length, ffn_multiplier=SMALL.ffn_multiplier,
                           train_steps=120, batch_size=8, learning_rate=0.01, corpus_sequences=64),
        analysis=AnalysisSection(projection_dim=8, transform_count=2),
        plan=PlanSection(global_budget=0.75),
        loss=LossSection(fine_tune_steps=2, step_size=1e-5),
        schedule=ScheduleSection(steps=2, divergence_ceiling=1e6),
        evaluation=EvaluationSection(probe_count=4, eval_sequences=8, classification_examples=16, noise_levels=(0.0, 0.5)))
    return replace(config, **sections)


def config_text(config: CCEConfig) -> str:
    """Renders a configuration as INI text."""
    lines = []
    for section, values in config.to_dict().items():
        lines.append(f'[{section}]')
        for key, value in values.items():
            if isinstance(value, list):
                value = ', '.join(repr(v) for v in value)
            lines.append(f'{key} = {value}')
        lines.append('')
    return '\n'.join(lines)


def jacobi_eigenvalues(a, sweeps: int = 100, tolerance: float = 1e-15) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, non-increasing."""
    a = np.array(a, dtype=np.float64)
    n = len(a)
    for _ in range(sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tolerance * max(1.0, np.abs(a).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rotation = np.eye(n)
                rotation[p, p] = rotation[q, q] = c
                rotation[p, q], rotation[q, p] = s, -s
                a = rotation.T @ a @ rotation
    return np.sort(np.diag(a))[::-1]


def jacobi_singular_values(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    return np.sqrt(np.maximum(jacobi_eigenvalues(gram), 0.0))


def brute_force_covariance(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    count, dim = samples.shape
    mean = [sum(samples[s, i] for s in range(count)) / count for i in range(dim)]
    covariance = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(dim):
            covariance[i, j] = sum((samples[s, i] - mean[i]) * (samples[s, j] - mean[j]) for s in range(count)) / count
    return covariance


def best_sparse_error(w, k: int) -> float:
    """Smallest squared Frobenius error of any matrix with at most k nonzeros, by exhaustive support search."""
    flat = np.asarray(w, dtype=np.float64).reshape(-1)
    best = math.inf
    for support in itertools.combinations(range(flat.size), k):
        kept = np.zeros_like(flat)
        kept[list(support)] = flat[list(support)]
        best = min(best, float(np.sum((flat - kept) ** 2)))
    return best
