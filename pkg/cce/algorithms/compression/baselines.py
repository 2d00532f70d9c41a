"""
Module: Comparison baselines

Every baseline compresses the compressible matrices of a model independently and returns dense parameters
for evaluation:
- magnitude pruning keeps the floor(budget x m x n) largest-magnitude entries of every matrix;
- uniform quantization rounds every matrix to 2^bits evenly spaced levels over its [min, max] range;
- low-rank truncation keeps the largest uniform rank whose factor pair fits the budget.
"""

import logging
import math

import numpy as np

from cce.algorithms.compression.low_rank import truncated_approximation
from cce.algorithms.compression.sparsity import sparsify_top_k
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.linalg import Matrix, as_matrix

logger = logging.getLogger(__name__)

MAGNITUDE = 'magnitude'
QUANTIZE = 'quantize'
LOWRANK = 'lowrank'
NONE = 'none'
BASELINES = (MAGNITUDE, QUANTIZE, LOWRANK, NONE)

DEFAULT_QUANTIZE_BITS = 8


def _check_budget(budget: float):
    if not 0 < budget <= 1:
        raise ValueError('budget must be in (0, 1].')


def baseline_magnitude_prune(model: ModelParameters, budget: float) -> ModelParameters:
    """
    Returns the model with every compressible matrix pruned to its floor(budget x size) largest-magnitude entries.

    :param model: The model.
    :param budget: Fraction of the entries kept, in (0, 1].
    """
    _check_budget(budget)
    return model.replace({name: sparsify_top_k(matrix, int(math.floor(budget * matrix.size)))
                          for _, name, matrix in model.compressible_layers()})


def quantize_uniform(w: Matrix, bits: int) -> Matrix:
    """
    Rounds every entry to the nearest of 2^bits evenly spaced levels over [min(w), max(w)]; a constant matrix is
    returned unchanged.
    """
    if bits < 1:
        raise ValueError('bits must be at least 1.')
    w = as_matrix(w)
    low, high = float(w.min()), float(w.max())
    if high == low:
        return w.copy()
    step = (high - low) / (2 ** bits - 1)
    return low + np.round((w - low) / step) * step


def baseline_uniform_quantize(model: ModelParameters, bits: int = DEFAULT_QUANTIZE_BITS) -> ModelParameters:
    """Returns the model with every compressible matrix uniformly quantized to ``bits`` bits and dequantized."""
    return model.replace({name: quantize_uniform(matrix, bits) for _, name, matrix in model.compressible_layers()})


def uniform_rank(shape, budget: float) -> int:
    """Returns the largest rank r >= 1 with r (m + n) <= budget x m x n."""
    m, n = shape
    return max(1, min(int(math.floor(budget * m * n / (m + n))), min(m, n)))


def baseline_low_rank(model: ModelParameters, budget: float) -> ModelParameters:
    """Returns the model with every compressible matrix truncated to the largest rank fitting the budget."""
    _check_budget(budget)
    return model.replace({name: truncated_approximation(matrix, uniform_rank(matrix.shape, budget))
                          for _, name, matrix in model.compressible_layers()})


def apply_baseline(model: ModelParameters, baseline: str, budget: float, bits: int = DEFAULT_QUANTIZE_BITS) -> ModelParameters:
    """
    Applies a baseline by name.

    :param model: The model.
    :param baseline: One of 'magnitude', 'quantize', 'lowrank', 'none'.
    :param budget: Budget of the pruning and low-rank baselines.
    :param bits: Bits of the quantization baseline.
    """
    if baseline not in BASELINES:
        raise ValueError(f'Unknown baseline {baseline!r}, expected one of {BASELINES}')
    logger.info('Applying the %s baseline', baseline)
    if baseline == MAGNITUDE:
        return baseline_magnitude_prune(model, budget)
    if baseline == QUANTIZE:
        return baseline_uniform_quantize(model, bits)
    if baseline == LOWRANK:
        return baseline_low_rank(model, budget)
    return model
