"""
Module: Commands

The five subcommands of the command-line interface. Every command builds a report, writes it as JSON when an
output path is known and returns it; the caller prints the tables. Reports name checkpoints by file name only.

Functions:
- cmd_train: Trains the toy transformer and writes its checkpoint.
- cmd_analyze: Redundancy analysis of a checkpoint.
- cmd_compress: The four compression stages, writing the compressed checkpoint and its report.
- cmd_evaluate: Side-by-side fidelity and robustness of checkpoints and an optional baseline.
- cmd_bench: Relative inference latency and memory footprint of a checkpoint.
"""

import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from cce.algorithms.compression.baselines import NONE, apply_baseline
from cce.algorithms.redundancy.thresholding import retained_count
from cce.artifacts.checkpoint.checkpoint import read_checkpoint, write_checkpoint
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.cce import RedundancyAssessment, compress, corpus_spec, evaluate_model, probe_set, redundancy_assessment, training_corpus_spec
from cce.cli import bench
from cce.cli.report import base_report, compression_tables, evaluation_tables, make_table, write_report
from cce.config import CCEConfig
from cce.exceptions import UsageError
from cce.metrics.fidelity_metrics import perplexity
from cce.model.corpus import STREAM_EVAL, synthetic_corpus
from cce.model.training import train_toy

logger = logging.getLogger(__name__)

Model = Union[ModelParameters, CompressedModel]

CHECKPOINT_REPORT_SUFFIX = '.json'


def load_model(path) -> Model:
    """Reads a checkpoint; an unreadable file is a usage error, a malformed one a CheckpointError."""
    try:
        return read_checkpoint(path)
    except OSError as error:
        raise UsageError(f'Cannot read checkpoint {path}: {error}') from error


def _require_out(out: Optional[str], command: str) -> str:
    if not out:
        raise UsageError(f'{command} needs --out <path> for the checkpoint it writes')
    return out


def _report_path(out: str, report: Optional[str]) -> str:
    return report if report else out + CHECKPOINT_REPORT_SUFFIX


def _finish(report: Dict, path: Optional[str]) -> Dict:
    if path:
        write_report(report, path)
        logger.info('Report written to %s', path)
    return report


def cmd_train(config: CCEConfig, seed: int, out: Optional[str], report_path: Optional[str] = None) -> Dict:
    """
    Trains the toy transformer of the configuration and writes its checkpoint to ``out``.

    :raises TrainingError: if the perplexity target is not reached.
    """
    out = _require_out(out, 'train')
    settings = config.model
    architecture, corpus = training_corpus_spec(config)
    model = train_toy(seed, corpus, architecture, settings.train_steps, settings.batch_size, settings.learning_rate,
                      settings.weight_decay, config.evaluation.eval_sequences, settings.planted_redundancy_rank)
    size = write_checkpoint(model, out)
    held_out_spec = corpus_spec(architecture, config.evaluation.eval_sequences, settings.successor_probability,
                                settings.observation_noise)
    held_out = synthetic_corpus(seed, held_out_spec, stream=STREAM_EVAL)

    report = base_report('train', seed, config)
    report['tables']['training'] = make_table('training', ['steps', 'perplexity', 'vocab', 'parameters', 'checkpoint_bytes'],
                                              [{'steps': settings.train_steps, 'perplexity': perplexity(model, held_out),
                                                'vocab': architecture.vocab, 'parameters': model.parameter_count(),
                                                'checkpoint_bytes': size}])
    report['checkpoints'] = {'model': Path(out).name}
    return _finish(report, _report_path(out, report_path))


def analysis_tables(assessment: RedundancyAssessment, energy_budget: float) -> Dict[str, Dict]:
    """Returns the similarity, covariance, singular-value and head-redundancy tables of an assessment."""
    layers = len(assessment.similarity)
    similarity_rows = [OrderedDict([('layer', i)] + [(f'block_{j}', float(assessment.similarity[i, j])) for j in range(layers)])
                       for i in range(layers)]
    redundant = set(assessment.redundant_directions)
    spectrum_rows = [{'index': index, 'eigenvalue': float(value), 'redundant': index in redundant}
                     for index, value in enumerate(assessment.covariance.eigen.eigenvalues)]
    profile_rows = [{'name': name, 'sigma_max': float(values[0]), 'sigma_min': float(values[-1]),
                     'nuclear_norm': float(values.sum()), 'energy_rank': retained_count(values, energy_budget)}
                    for name, values in assessment.singular_values.items()]
    head_rows = [{'layer': head.layer_index, 'head_a': head.most_similar_pair()[0], 'head_b': head.most_similar_pair()[1],
                  'similarity': float(head.similarity[head.most_similar_pair()])} for head in assessment.heads]
    return {'layer_similarity': make_table('layer_similarity', ['layer'] + [f'block_{j}' for j in range(layers)], similarity_rows),
            'covariance_spectrum': make_table('covariance_spectrum', ['index', 'eigenvalue', 'redundant'], spectrum_rows),
            'singular_value_profiles': make_table('singular_value_profiles',
                                                  ['name', 'sigma_max', 'sigma_min', 'nuclear_norm', 'energy_rank'], profile_rows),
            'head_redundancy': make_table('head_redundancy', ['layer', 'head_a', 'head_b', 'similarity'], head_rows)}


def cmd_analyze(config: CCEConfig, seed: int, checkpoint, out: Optional[str] = None) -> Dict:
    """Reports contextual similarity between blocks, the covariance spectrum and per-matrix singular values."""
    model = load_model(checkpoint).materialize()
    probe = probe_set(seed, model.config, config.evaluation.probe_count, config.model.successor_probability,
                      config.model.observation_noise)
    assessment = redundancy_assessment(model, config.analysis, seed, probe)
    report = base_report('analyze', seed, config)
    report['tables'].update(analysis_tables(assessment, config.plan.energy_budget))
    report['analysis'] = assessment.to_dict()
    return _finish(report, out)


def _evaluations(models: Dict[str, Model], config: CCEConfig, seed: int) -> Dict:
    evaluations = OrderedDict()
    for label, model in models.items():
        logger.info('Evaluating %s', label)
        evaluations[label] = evaluate_model(model, config, seed)
    return evaluations


def cmd_compress(config: CCEConfig, seed: int, checkpoint, out: Optional[str], baseline: str = NONE,
                 report_path: Optional[str] = None) -> Dict:
    """
    Runs redundancy assessment, pruning, structured encoding and loss-aware fine-tuning on a checkpoint, writes
    the compressed checkpoint to ``out`` and the report next to it.

    :raises PlanningError: if the budget cannot be met.
    :raises ScheduleDivergenceError: if the encoding schedule diverges.
    :raises ChecksumError: if the input checkpoint is corrupt.
    """
    out = _require_out(out, 'compress')
    model = load_model(checkpoint).materialize()
    result = compress(model, config, seed)
    write_checkpoint(result.model, out)

    models = OrderedDict([('uncompressed', model), ('cce', result.model)])
    if baseline != NONE:
        models[baseline] = apply_baseline(model, baseline, config.plan.global_budget, config.evaluation.quantize_bits)
    report = base_report('compress', seed, config)
    report['tables'].update(compression_tables(result.records, result.plan))
    report['tables'].update(evaluation_tables(_evaluations(models, config, seed)))
    report['plan'] = result.plan.to_dict()
    report['analysis'] = result.assessment.to_dict()
    report['schedule'] = [step.to_dict() for step in result.schedule.steps]
    report['loss_trajectory'] = [breakdown.to_dict() for breakdown in result.fine_tuning.trajectory]
    report['checkpoints'] = {'input': Path(checkpoint).name, 'cce': Path(out).name}
    return _finish(report, _report_path(out, report_path))


def checkpoint_labels(paths: Sequence) -> List[str]:
    """Labels checkpoints by file stem, falling back to the full path when stems collide."""
    stems = [Path(path).stem for path in paths]
    return [stem if stems.count(stem) == 1 else str(path) for stem, path in zip(stems, paths)]


def cmd_evaluate(config: CCEConfig, seed: int, checkpoints: Sequence, out: Optional[str] = None, baseline: str = NONE) -> Dict:
    """
    Evaluates checkpoints side by side; the baseline, if any, is applied to the dense reconstruction of the first.
    """
    if not checkpoints:
        raise UsageError('evaluate needs at least one checkpoint')
    labels = checkpoint_labels(checkpoints)
    if len(set(labels)) != len(labels):
        raise UsageError('evaluate was given the same checkpoint twice')
    models = OrderedDict((label, load_model(path)) for label, path in zip(labels, checkpoints))
    if baseline != NONE:
        first = next(iter(models.values())).materialize()
        models[baseline] = apply_baseline(first, baseline, config.plan.global_budget, config.evaluation.quantize_bits)
    report = base_report('evaluate', seed, config)
    report['tables'].update(evaluation_tables(_evaluations(models, config, seed)))
    report['checkpoints'] = {label: Path(path).name for label, path in zip(labels, checkpoints)}
    return _finish(report, out)


def cmd_bench(config: CCEConfig, seed: int, checkpoint, out: Optional[str] = None, repeats: int = bench.DEFAULT_REPEATS) -> Dict:
    """
    Measures the per-token latency of a checkpoint run through its factors against its dense reconstruction, the
    cost of factored products at small ranks, and the memory footprint of both representations.
    """
    model = load_model(checkpoint)
    compressed = model if isinstance(model, CompressedModel) else CompressedModel(model)
    dense = compressed.materialize()
    tokens = probe_set(seed, dense.config, config.evaluation.probe_count, config.model.successor_probability,
                       config.model.observation_noise).inputs

    latency = bench.latency_ratio(compressed, tokens, repeats)
    efficiency_rows = [{'model': 'dense', 'seconds_per_token': latency['dense_seconds_per_token'], 'relative': 1.0},
                       {'model': 'compressed', 'seconds_per_token': latency['compressed_seconds_per_token'], 'relative': latency['ratio']}]
    cost_rows = bench.factored_layer_cost(dense.config.hidden, seed=seed, repeats=repeats)
    memory_rows = [dict(bench.memory_footprint(dense), model='dense'), dict(bench.memory_footprint(compressed), model='compressed')]

    report = base_report('bench', seed, config)
    tables = report['tables']
    tables['inference_efficiency'] = make_table('inference_efficiency', ['model', 'seconds_per_token', 'relative'], efficiency_rows)
    cost_columns = ['rank', 'predicted_ratio', 'measured_ratio', 'within_bound']
    tables['factored_layer_cost'] = make_table('factored_layer_cost', cost_columns, cost_rows)
    memory_columns = ['model', 'stored_parameters', 'checkpoint_bytes', 'memory_bytes']
    tables['memory_footprint'] = make_table('memory_footprint', memory_columns, memory_rows)
    report['checkpoints'] = {'input': Path(checkpoint).name}
    return _finish(report, out)
