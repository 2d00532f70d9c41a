"""
Module: Composite loss terms

Functions:
- model_outputs: The flattened logits f(W, x) of every probe input.
- weighted_squared_distance: sum_x P(x) ||a_x - b_x||^2 with compensated summation.
- reconstruction_loss: Probe-weighted squared output distance between two models.
- similarity_loss: Sum of the singular values below tau over all layers.
- regularization_loss: sum_i lambda_i (||W_i||_* - r_i)^2.
- total_loss: The three terms and their weighted total.
"""

import math
from typing import List, Optional, Sequence, Union

import numpy as np
import torch

from cce.algorithms.loss.loss_config import LossBreakdown, LossConfig, ProbeSet
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.exceptions import ShapeError
from cce.linalg import Matrix, nuclear_norm, svd
from cce.model.transformer import forward_tensors, weights_as_tensors

Model = Union[ModelParameters, CompressedModel]


def model_outputs(model: Model, probe: ProbeSet) -> List[np.ndarray]:
    """
    Returns the flattened logits (positions x vocab) of every probe input.

    Every input runs through its own forward pass, so an output never depends on which other inputs are evaluated.
    """
    probe.check(model.config)
    weights = weights_as_tensors(model)
    outputs = []
    with torch.no_grad():
        for sequence in probe.inputs:
            logits, _, _ = forward_tensors(weights, model.config, torch.from_numpy(sequence[None, :]))
            outputs.append(logits[0].reshape(-1).numpy())
    return outputs


def weighted_squared_distance(outputs_a: Sequence[np.ndarray], outputs_b: Sequence[np.ndarray], weights: Sequence[float]) -> float:
    """
    Returns sum_x weight(x) ||a_x - b_x||^2. Every squared distance and the weighted total are summed exactly
    rounded, so the result does not depend on the order of the inputs.
    """
    if len(outputs_a) != len(outputs_b) or len(outputs_a) != len(weights):
        raise ShapeError(f'{len(outputs_a)} and {len(outputs_b)} outputs given for {len(weights)} weights')
    terms = []
    for a, b, weight in zip(outputs_a, outputs_b, weights):
        a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f'Output shapes {a.shape} and {b.shape} differ')
        terms.append(weight * math.fsum(np.square(a - b).ravel()))
    return math.fsum(terms)


def reconstruction_loss(original: Model, compressed: Model, probe: ProbeSet, original_outputs: Optional[List[np.ndarray]] = None) -> float:
    """
    Returns sum_x P(x) ||f(W, x) - f(W*, x)||^2 over the probe set, where f is the full logit output.

    :param original: The uncompressed model.
    :param compressed: The compressed model (or any model with the same output dimensions).
    :param probe: The probe set.
    :param original_outputs: The outputs of the original model on the probe set, if already computed.
    """
    if original.config.vocab != compressed.config.vocab:
        raise ShapeError(f'Output dimensions differ: vocab {original.config.vocab} and {compressed.config.vocab}')
    if original_outputs is None:
        original_outputs = model_outputs(original, probe)
    return weighted_squared_distance(original_outputs, model_outputs(compressed, probe), probe.weights)


def similarity_loss(layers: Sequence[Matrix], tau: float) -> float:
    """
    Returns the sum over layers of their singular values strictly below tau.

    :param layers: The layers.
    :param tau: Non-negative threshold.
    """
    if tau < 0:
        raise ValueError('tau must be non-negative.')
    terms = []
    for layer in layers:
        singular_values = svd(layer).singular_values
        terms.extend(singular_values[singular_values < tau])
    return math.fsum(terms)


def regularization_loss(layers: Sequence[Matrix], lambdas: Sequence[float], targets: Sequence[float]) -> float:
    """
    Returns sum_i lambda_i (||W_i||_* - r_i)^2.

    :param layers: The layers W_i.
    :param lambdas: One non-negative weight per layer.
    :param targets: One nuclear-norm target per layer.
    """
    if not len(layers) == len(lambdas) == len(targets):
        raise ShapeError(f'{len(lambdas)} lambdas and {len(targets)} targets given for {len(layers)} layers')
    return math.fsum(lam * (nuclear_norm(layer) - target) ** 2 for layer, lam, target in zip(layers, lambdas, targets))


def compressible_matrices(model: Model) -> List[Matrix]:
    dense = model.materialize()
    return [dense[name] for name in dense.compressible_names()]


def total_loss(original: Model, compressed: Model, probe: ProbeSet, config: LossConfig,
               original_outputs: Optional[List[np.ndarray]] = None) -> LossBreakdown:
    """
    Evaluates the composite loss on the compressed model's layers.

    A configuration without lambdas carries no regularizer: its reg term is 0.

    :param original: The uncompressed model.
    :param compressed: The compressed model.
    :param probe: The probe set.
    :param config: The loss coefficients; its lambdas and rank targets must match the compressible matrices.
    :param original_outputs: The outputs of the original model on the probe set, if already computed.
    :return: The LossBreakdown, total = alpha * rec + beta * sim + gamma * reg.
    """
    layers = compressible_matrices(compressed)
    if config.lambdas and len(config.lambdas) != len(layers):
        raise ShapeError(f'{len(config.lambdas)} lambdas given for {len(layers)} compressible matrices')
    rec = reconstruction_loss(original, compressed, probe, original_outputs)
    sim = similarity_loss(layers, config.tau)
    reg = regularization_loss(layers, config.lambdas, config.rank_targets) if config.lambdas else 0.0
    return LossBreakdown(rec=rec, sim=sim, reg=reg, total=config.alpha * rec + config.beta * sim + config.gamma * reg)
