"""
Module: Reports

Reports are JSON documents validated against ``report_schema.json`` and written with sorted keys, a fixed
indentation and no timestamps, so that identical runs give identical bytes. Every table carries the name of the
measurement it reproduces (its analogue), its column names and its rows; tables are also rendered as plain text
for standard output.
"""

import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

import jsonschema
import numpy as np

from cce import __version__
from cce.algorithms.compression.accounting import CompressionRecord, aggregate_by_layer
from cce.algorithms.compression.planner import CompressionPlan
from cce.cce import ModelEvaluation
from cce.config import CCEConfig
from cce.exceptions import NumericalError

SCHEMA_PATH = Path(__file__).with_name('report_schema.json')

ANALOGUES = {
    'layer_compression': 'Table 2: layer-wise compression performance',
    'matrix_compression': 'Table 2: layer-wise compression performance, per matrix',
    'fidelity': 'Table 3: perplexity and task accuracy before and after compression',
    'attention_variability': 'Table 5: variability in attention weight distributions',
    'activation_stability': 'Table 7: layer-wise stability of activation distributions',
    'noise_robustness': 'Fig. 1: impact of input noise on model accuracy',
    'inference_efficiency': 'Table 4: inference time per token, relative to the dense model',
    'factored_layer_cost': 'Table 4: computational cost of factored layers',
    'memory_footprint': 'Table 4: model size and memory usage',
    'layer_similarity': 'contextual similarity between layers',
    'covariance_spectrum': 'eigenvalues of the layer covariance',
    'singular_value_profiles': 'singular values of the weight matrices',
    'head_redundancy': 'redundancy between attention heads',
    'training': 'toy model training outcome',
}


def load_schema() -> Dict:
    return json.loads(SCHEMA_PATH.read_text(encoding='utf-8'))


def make_table(name: str, columns: Sequence[str], rows: Iterable[Mapping]) -> Dict:
    return {'analogue': ANALOGUES[name], 'columns': list(columns), 'rows': [dict(row) for row in rows]}


def base_report(command: str, seed: int, config: CCEConfig) -> Dict:
    return {'tool': 'cce', 'version': __version__, 'command': command, 'seed': seed, 'config': config.to_dict(), 'tables': {}}


def compression_tables(records: Sequence[CompressionRecord], plan: CompressionPlan) -> Dict[str, Dict]:
    """Returns the per-block and per-matrix compression tables, with planned and achieved ratios."""
    planned_by_layer = plan.layer_ratios()
    layer_rows = [dict(record.to_dict(), planned_ratio=planned_by_layer[record.layer_index]) for record in aggregate_by_layer(records)]
    matrix_rows = [dict(record.to_dict(), planned_ratio=plan.entry(record.name).planned_ratio) for record in records]
    columns = ['layer_index', 'name', 'pre_params', 'post_params', 'planned_ratio', 'ratio', 'frobenius_error']
    return {'layer_compression': make_table('layer_compression', columns, layer_rows),
            'matrix_compression': make_table('matrix_compression', columns, matrix_rows)}


def evaluation_tables(evaluations: Mapping[str, ModelEvaluation]) -> Dict[str, Dict]:
    """
    Returns the fidelity, stability and robustness tables of several evaluated models, in the given model order.

    :param evaluations: Mapping from model label to its ModelEvaluation.
    """
    labels = list(evaluations)
    fidelity = [{'model': label, 'perplexity': e.perplexity, 'accuracy': e.accuracy} for label, e in evaluations.items()]
    activation_rows, attention_rows = [], []
    for label, e in evaluations.items():
        for layer, (mean, std) in enumerate(zip(e.activations.means, e.activations.stds)):
            activation_rows.append({'model': label, 'layer': layer, 'mean': mean, 'std': std})
        for layer, (variability, dispersion) in enumerate(zip(e.attention.variability, e.attention.dispersion)):
            attention_rows.append({'model': label, 'layer': layer, 'variability': variability, 'dispersion': dispersion})
    levels = [level for level, _ in next(iter(evaluations.values())).robustness]
    robustness_rows = []
    for index, level in enumerate(levels):
        row = {'noise_level': level}
        row.update({label: e.robustness[index][1] for label, e in evaluations.items()})
        robustness_rows.append(row)
    return {'fidelity': make_table('fidelity', ['model', 'perplexity', 'accuracy'], fidelity),
            'activation_stability': make_table('activation_stability', ['model', 'layer', 'mean', 'std'], activation_rows),
            'attention_variability': make_table('attention_variability', ['model', 'layer', 'variability', 'dispersion'], attention_rows),
            'noise_robustness': make_table('noise_robustness', ['noise_level'] + labels, robustness_rows)}


def plain(value):
    """Converts numpy scalars and arrays and tuples of a report into plain JSON values."""
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Mapping):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    return value


def _check_finite(value, path='report'):
    if isinstance(value, float) and not math.isfinite(value):
        raise NumericalError(f'{path} is not finite ({value})')
    if isinstance(value, Mapping):
        for key, item in value.items():
            _check_finite(item, f'{path}.{key}')
    elif isinstance(value, (list, tuple)):
        for index, item in enumerate(value):
            _check_finite(item, f'{path}[{index}]')


def validate_report(report: Dict):
    """
    Checks that every number of a report is finite and that the report matches the shipped schema.

    :raises NumericalError: for a non-finite number.
    :raises jsonschema.ValidationError: if the report does not match the schema.
    """
    _check_finite(report)
    jsonschema.validate(report, load_schema())


def dumps(report: Dict) -> str:
    report = plain(report)
    validate_report(report)
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + '\n'


def write_report(report: Dict, path) -> None:
    Path(path).write_text(dumps(report), encoding='utf-8')


def _cell(value) -> str:
    if isinstance(value, float):
        return f'{value:.4g}'
    return str(value)


def format_table(name: str, table: Mapping) -> str:
    """Renders a report table as aligned plain text, headed by its analogue."""
    columns = table['columns']
    cells: List[List[str]] = [list(columns)] + [[_cell(row.get(column, '')) for column in columns] for row in table['rows']]
    widths = [max(len(line[i]) for line in cells) for i in range(len(columns))]
    lines = [f'{name} ({table["analogue"]})']
    for index, line in enumerate(cells):
        lines.append('  '.join(cell.rjust(width) for cell, width in zip(line, widths)))
        if index == 0:
            lines.append('  '.join('-' * width for width in widths))
    return '\n'.join(lines)


def format_report(report: Mapping) -> str:
    return '\n\n'.join(format_table(name, table) for name, table in sorted(report['tables'].items())) + '\n'
