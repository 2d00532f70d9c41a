"""
Module: Gradient of the composite loss

The gradient is taken with respect to the dense reconstruction of every compressible matrix of the compressed
model:
- the reconstruction term is differentiated through the toy transformer with torch autograd;
- the similarity term uses the subgradient U diag(1{sigma < tau}) V^T, with the strict inequality at sigma = tau;
- the regularization term uses the subgradient 2 lambda_i (||W_i||_* - r_i) U V^T.

Functions:
- reconstruction_gradient: Gradient of the reconstruction loss.
- similarity_gradient: Subgradient of the similarity loss of one matrix.
- regularization_gradient: Subgradient of one regularization term.
- loss_gradient: Gradient of alpha * rec + beta * sim + gamma * reg.
- check_gradient: Central finite-difference check of loss_gradient.
"""

from collections import OrderedDict
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import torch

from cce.algorithms.loss.loss_config import LossConfig, ProbeSet
from cce.algorithms.loss.loss_terms import Model, total_loss
from cce.exceptions import GradientCheckError, ShapeError
from cce.linalg import Matrix, nuclear_norm, svd
from cce.metrics.fidelity_metrics import EVALUATION_CHUNK
from cce.model.transformer import forward_tensors, weights_as_tensors

FINITE_DIFFERENCE_STEP = 1e-5
GRADIENT_TOLERANCE = 1e-4
RELATIVE_ERROR_FLOOR = 1e-6


def reconstruction_gradient(original: Model, compressed: Model, probe: ProbeSet) -> Dict[str, Matrix]:
    """Returns the gradient of sum_x P(x) ||f(W, x) - f(W*, x)||^2 with respect to every compressible matrix of W*."""
    probe.check(compressed.config)
    config = compressed.config
    reference = weights_as_tensors(original)
    weights = dict(weights_as_tensors(compressed))
    names = compressed.materialize().compressible_names()
    for name in names:
        weights[name] = weights[name].clone().requires_grad_(True)

    probe_weights = torch.from_numpy(probe.weights)
    for start in range(0, len(probe), EVALUATION_CHUNK):
        tokens = torch.from_numpy(probe.inputs[start:start + EVALUATION_CHUNK])
        with torch.no_grad():
            target, _, _ = forward_tensors(reference, config, tokens)
        logits, _, _ = forward_tensors(weights, config, tokens)
        squared = torch.square(logits - target).sum(dim=(1, 2))
        (probe_weights[start:start + EVALUATION_CHUNK] * squared).sum().backward()
    return OrderedDict((name, weights[name].grad.numpy().copy()) for name in names)


def similarity_gradient(w: Matrix, tau: float) -> Matrix:
    decomposition = svd(w)
    below = (decomposition.singular_values < tau).astype(np.float64)
    return (decomposition.u * below) @ decomposition.v.T


def regularization_gradient(w: Matrix, lam: float, target: float) -> Matrix:
    decomposition = svd(w)
    return 2.0 * lam * (nuclear_norm(w) - target) * (decomposition.u @ decomposition.v.T)


def loss_gradient(original: Model, compressed: Model, probe: ProbeSet, config: LossConfig) -> Dict[str, Matrix]:
    """
    Returns the gradient of the composite loss with respect to the dense reconstruction of every compressible
    matrix, in canonical order. The result is linear in (alpha, beta, gamma).

    :param original: The uncompressed model.
    :param compressed: The compressed model.
    :param probe: The probe set.
    :param config: The loss coefficients.
    """
    dense = compressed.materialize()
    names = dense.compressible_names()
    if config.lambdas and len(config.lambdas) != len(names):
        raise ShapeError(f'{len(config.lambdas)} lambdas given for {len(names)} compressible matrices')
    gradient = OrderedDict((name, np.zeros_like(dense[name])) for name in names)

    if config.alpha > 0:
        for name, rec in reconstruction_gradient(original, compressed, probe).items():
            gradient[name] += config.alpha * rec
    if config.beta > 0:
        for name in names:
            gradient[name] += config.beta * similarity_gradient(dense[name], config.tau)
    if config.gamma > 0 and config.lambdas:
        for name, lam, target in zip(names, config.lambdas, config.rank_targets):
            gradient[name] += config.gamma * regularization_gradient(dense[name], lam, target)
    return gradient


def _sample_entries(shape, count: int, rng: np.random.Generator) -> Iterable[Tuple[int, int]]:
    flat = rng.choice(shape[0] * shape[1], size=min(count, shape[0] * shape[1]), replace=False)
    return [tuple(int(i) for i in divmod(index, shape[1])) for index in np.sort(flat)]


def check_gradient(original: Model,
                   compressed: Model,
                   probe: ProbeSet,
                   config: LossConfig,
                   entries_per_matrix: int = 3,
                   names: Optional[Iterable[str]] = None,
                   step: float = FINITE_DIFFERENCE_STEP,
                   tolerance: float = GRADIENT_TOLERANCE,
                   seed: int = 0) -> float:
    """
    Compares loss_gradient with central finite differences of total_loss on sampled entries.

    The relative error of an entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).

    :param original: The uncompressed model.
    :param compressed: The compressed model.
    :param probe: The probe set.
    :param config: The loss coefficients.
    :param entries_per_matrix: Entries sampled from every checked matrix.
    :param names: Matrices to check; all compressible matrices by default.
    :param step: Finite-difference step.
    :param tolerance: Largest admissible relative error.
    :param seed: Seed of the entry sampling.
    :raises GradientCheckError: if an entry exceeds the tolerance; the error names the worst entry.
    :return: The largest relative error found.
    """
    dense = compressed.materialize()
    analytic = loss_gradient(original, compressed, probe, config)
    names = list(analytic) if names is None else list(names)
    rng = np.random.default_rng(seed)
    worst = (0.0, None)

    for name in names:
        for row, col in _sample_entries(dense[name].shape, entries_per_matrix, rng):
            values = []
            for sign in (1.0, -1.0):
                perturbed = dense[name].copy()
                perturbed[row, col] += sign * step
                values.append(total_loss(original, dense.replace({name: perturbed}), probe, config).total)
            numeric = (values[0] - values[1]) / (2.0 * step)
            exact = float(analytic[name][row, col])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_ERROR_FLOOR)
            if error > worst[0] or worst[1] is None:
                worst = (error, (name, row, col, exact, numeric))

    if worst[0] > tolerance:
        name, row, col, exact, numeric = worst[1]
        raise GradientCheckError(f'Gradient of {name}[{row}, {col}] is {exact:.6e}, finite differences give {numeric:.6e} '
                                 f'(relative error {worst[0]:.3e} > {tolerance})', worst[1])
    return worst[0]
