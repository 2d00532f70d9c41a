"""
Module: Inference benchmarks

Relative costs of compressed and dense inference. Times are medians of repeated runs measured with
``time.perf_counter`` on a single torch thread; only ratios are reported, since absolute times depend on the
machine.

Functions:
- median_seconds: Median wall time of a callable.
- forward_latency: Seconds per token of the forward pass.
- latency_ratio: Per-token latency of a compressed model over its dense counterpart.
- factored_layer_cost: Measured and predicted cost of factored matrix products.
- memory_footprint: Stored parameters, checkpoint bytes and in-memory size of a model.
"""

import logging
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Union

import numpy as np
import torch
from pympler import asizeof

from cce.artifacts.checkpoint.checkpoint import checkpoint_bytes
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.model.transformer import check_tokens, forward_tensors, torch_threads, weights_as_tensors

logger = logging.getLogger(__name__)

DEFAULT_REPEATS = 7
DEFAULT_BENCH_RANKS = (4, 8)
DEFAULT_BENCH_TOKENS = 8192
# measured/predicted must lie in [1 / bound, bound]
PREDICTION_BOUND = 2.0

Model = Union[ModelParameters, CompressedModel]


def median_seconds(function: Callable[[], object], repeats: int = DEFAULT_REPEATS, warmup: int = 1) -> float:
    """
    Returns the median wall time of ``repeats`` calls of a function, after ``warmup`` untimed calls.
    """
    if repeats < 1:
        raise ValueError('repeats must be positive.')
    for _ in range(warmup):
        function()
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        function()
        timings.append(time.perf_counter() - start)
    return statistics.median(timings)


def forward_latency(model: Model, tokens, factored: bool = True, repeats: int = DEFAULT_REPEATS) -> float:
    """
    Returns the median seconds per token of the forward pass on a batch of sequences.

    :param model: A dense or compressed model.
    :param tokens: Token ids of shape (B, T).
    :param factored: Execute encoded matrices through their factors (compressed models only).
    :param repeats: Timed repetitions.
    """
    array = check_tokens(tokens, model.config)
    batch = torch.from_numpy(array.reshape(-1, array.shape[-1]))
    weights = weights_as_tensors(model, factored=factored)

    def run():
        with torch.no_grad():
            forward_tensors(weights, model.config, batch)

    return median_seconds(run, repeats) / batch.numel()


def latency_ratio(compressed: CompressedModel, tokens, repeats: int = DEFAULT_REPEATS) -> Dict[str, float]:
    """
    Compares the per-token latency of a compressed model run through its factors with the dense model it
    reconstructs.

    :return: A dict with keys 'dense_seconds_per_token', 'compressed_seconds_per_token' and 'ratio'.
    """
    with torch_threads(1):
        dense = forward_latency(compressed.materialize(), tokens, factored=False, repeats=repeats)
        factored = forward_latency(compressed, tokens, factored=True, repeats=repeats)
    logger.info('Per-token latency: dense %.3g s, compressed %.3g s', dense, factored)
    return {'dense_seconds_per_token': dense, 'compressed_seconds_per_token': factored, 'ratio': factored / dense}


def predicted_cost_ratio(shape, rank: int) -> float:
    """Arithmetic cost of a rank-r factored product relative to the dense product: r (m + n) / (m n)."""
    m, n = shape
    return rank * (m + n) / (m * n)


def factored_layer_cost(hidden: int,
                        ranks: Sequence[int] = DEFAULT_BENCH_RANKS,
                        tokens: int = DEFAULT_BENCH_TOKENS,
                        seed: int = 0,
                        repeats: int = DEFAULT_REPEATS) -> List[Dict]:
    """
    Times the product of ``tokens`` activations with a hidden x hidden matrix, dense and through rank-r factors.

    :param hidden: Matrix side.
    :param ranks: Factor ranks to time.
    :param tokens: Number of activation rows.
    :param seed: Seed of the random operands.
    :param repeats: Timed repetitions.
    :return: One row per rank: rank, predicted and measured cost ratios, and whether the measurement lies within
        a factor PREDICTION_BOUND of the prediction.
    """
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.standard_normal((tokens, hidden)))
    dense = torch.from_numpy(rng.standard_normal((hidden, hidden)))
    with torch_threads(1):
        dense_time = median_seconds(lambda: x @ dense.T, repeats)
        rows = []
        for rank in ranks:
            if not 1 <= rank <= hidden:
                raise ValueError(f'rank {rank} is out of range for hidden size {hidden}')
            left = torch.from_numpy(rng.standard_normal((hidden, rank)))
            right = torch.from_numpy(rng.standard_normal((rank, hidden)))
            factored_time = median_seconds(lambda: (x @ right.T) @ left.T, repeats)
            predicted = predicted_cost_ratio((hidden, hidden), rank)
            measured = factored_time / dense_time
            rows.append({'rank': rank, 'predicted_ratio': predicted, 'measured_ratio': measured,
                         'within_bound': bool(1 / PREDICTION_BOUND <= measured / predicted <= PREDICTION_BOUND)})
    return rows


def stored_parameters(model: Model) -> int:
    if isinstance(model, CompressedModel):
        return int(sum(model.stored_parameter_count(name) if name in model.encodings else array.size
                       for name, array in model.parameters.items()))
    return model.parameter_count()


def memory_footprint(model: Model) -> Dict[str, int]:
    """
    Returns the stored parameter count, the checkpoint size and the in-memory size (Pympler) of the stored
    representation: dense arrays, plus the encodings of a compressed model instead of their reconstruction.
    """
    if isinstance(model, CompressedModel):
        stored = ({name: array for name, array in model.parameters.items() if name not in model.encodings}, model.encodings)
    else:
        stored = dict(model)
    return {'stored_parameters': stored_parameters(model),
            'checkpoint_bytes': len(checkpoint_bytes(model)),
            'memory_bytes': int(asizeof.asizeof(stored))}
