"""
Module: Layer-wise activation and attention statistics

Statistics are taken over a fixed probe set, processed in fixed chunks and in index order, so repeated
runs (and the lossless compression of a model) give bit-identical values.
"""

from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np
import torch

from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.metrics.fidelity_metrics import EVALUATION_CHUNK
from cce.model.transformer import check_tokens, forward_tensors, weights_as_tensors

SOFTMAX_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ActivationStats:
    """Per layer: mean magnitude and standard deviation of the feed-forward outputs."""
    means: Tuple[float, ...]
    stds: Tuple[float, ...]

    def to_dict(self):
        return {'mean': list(self.means), 'std': list(self.stds)}


@dataclass(frozen=True)
class AttentionStats:
    """Per layer: mean over probes of the attention-probability standard deviation, and its dispersion across probes."""
    variability: Tuple[float, ...]
    dispersion: Tuple[float, ...]

    def to_dict(self):
        return {'variability': list(self.variability), 'dispersion': list(self.dispersion)}


def capture(model: Union[ModelParameters, CompressedModel], inputs) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    Runs the probe inputs through the model and returns the stacked captures.

    :return: A 2-tuple (activations, attention): per layer, arrays of shape (N, T, hidden) and (N, heads, T, T).
    """
    tokens = check_tokens(inputs, model.config)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    weights = weights_as_tensors(model)
    activations = [[] for _ in range(model.config.layers)]
    attention = [[] for _ in range(model.config.layers)]
    with torch.no_grad():
        for start in range(0, len(tokens), EVALUATION_CHUNK):
            chunk = torch.from_numpy(tokens[start:start + EVALUATION_CHUNK])
            _, layer_activations, layer_attention = forward_tensors(weights, model.config, chunk, capture=True)
            for layer_index in range(model.config.layers):
                activations[layer_index].append(layer_activations[layer_index].numpy())
                attention[layer_index].append(layer_attention[layer_index].numpy())
    return [np.concatenate(a) for a in activations], [np.concatenate(p) for p in attention]


def activation_stats(model: Union[ModelParameters, CompressedModel], inputs) -> ActivationStats:
    """
    Returns the mean absolute value and the standard deviation of the post-FFN activations of every layer over the
    probe inputs.
    """
    activations, _ = capture(model, inputs)
    return ActivationStats(means=tuple(float(np.mean(np.abs(a))) for a in activations), stds=tuple(float(np.std(a)) for a in activations))


def attention_variability(probabilities: np.ndarray) -> np.ndarray:
    """
    Returns, for every probe, the standard deviation of its attention probabilities across heads and the causal
    (query, key) positions.

    :param probabilities: Attention probabilities of one layer, shape (N, heads, T, T).
    """
    rows = probabilities.sum(axis=-1)
    if np.max(np.abs(rows - 1.0)) > SOFTMAX_TOLERANCE:
        raise ArithmeticError('Attention rows do not sum to 1.')
    length = probabilities.shape[-1]
    causal = np.tril(np.ones((length, length), dtype=bool))
    return np.std(probabilities[:, :, causal], axis=(1, 2))


def attention_stats(model: Union[ModelParameters, CompressedModel], inputs) -> AttentionStats:
    _, attention = capture(model, inputs)
    per_probe = [attention_variability(p) for p in attention]
    return AttentionStats(variability=tuple(float(np.mean(v)) for v in per_probe), dispersion=tuple(float(np.std(v)) for v in per_probe))
