"""
Module: Activation calibration of the rescale vectors

A truncated encoding loses output energy unevenly across its rows. Calibration measures the inputs each
compressible matrix receives in the original model on the probe set, and sets the rescale vector of every
encoding so that each output row carries the same probe-weighted energy as the original row:

    g_i = sqrt((w_i C w_i^T) / (x_i C x_i^T))

where C is the second-moment matrix of the inputs, w_i the original row and x_i the unscaled row of L R + S.
"""

import logging
from typing import Dict, Optional

import numpy as np
import torch

from cce.algorithms.loss.loss_config import ProbeSet
from cce.algorithms.loss.loss_terms import Model
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel, EncodedLayer
from cce.exceptions import ShapeError
from cce.model.transformer import forward_tensors, weights_as_tensors

logger = logging.getLogger(__name__)

UNIT_GAIN_TOLERANCE = 1e-12


def input_moments(model: Model, probe: ProbeSet) -> Dict[str, np.ndarray]:
    """
    Returns, for every compressible matrix, the probe-weighted second moment sum_x P(x) X_x^T X_x of its inputs,
    where X_x stacks the input vectors of all positions of probe x.
    """
    probe.check(model.config)
    weights = weights_as_tensors(model)
    moments: Dict[str, np.ndarray] = {}
    for sequence, weight in zip(probe.inputs, probe.weights):
        def observe(name, inputs):
            flat = inputs.reshape(-1, inputs.shape[-1])
            moment = weight * (flat.T @ flat).numpy()
            moments[name] = moments[name] + moment if name in moments else moment

        with torch.no_grad():
            forward_tensors(weights, model.config, torch.from_numpy(sequence[None, :]), observe=observe)
    return moments


def row_energies(matrix: np.ndarray, moment: np.ndarray) -> np.ndarray:
    """Returns m_i C m_i^T for every row m_i of the matrix."""
    return np.einsum('ij,jk,ik->i', matrix, moment, matrix)


def calibrated_encoding(encoded: EncodedLayer, original: np.ndarray, moment: np.ndarray) -> EncodedLayer:
    """
    Returns the encoding with its rescale vector matched to the row energies of the original matrix. Rows whose
    unscaled energy is zero keep their gain.
    """
    if original.shape != encoded.shape or moment.shape != (encoded.shape[1], encoded.shape[1]):
        raise ShapeError(f'Cannot calibrate an encoding of shape {encoded.shape} against {original.shape} and moment {moment.shape}')
    unscaled = encoded.left @ encoded.right + encoded.residual_matrix()
    target, current = row_energies(original, moment), row_energies(unscaled, moment)
    positive = current > 0
    gains = encoded.rescale.copy()
    gains[positive] = np.sqrt(np.maximum(target[positive], 0.0) / current[positive])
    gains[np.abs(gains - 1.0) <= UNIT_GAIN_TOLERANCE] = 1.0
    return encoded.with_parameters(left=encoded.left, right=encoded.right, residual_values=encoded.residual_values, rescale=gains)


def calibrate_rescale(compressed: CompressedModel, original: Model, probe: ProbeSet,
                      moments: Optional[Dict[str, np.ndarray]] = None) -> CompressedModel:
    """
    Recomputes the rescale vector of every encoding from the input moments of the original model.

    :param compressed: The compressed model; factors and residuals are kept.
    :param original: The uncompressed model.
    :param probe: The probe set.
    :param moments: The input moments of the original model, if already computed.
    :return: A new CompressedModel; a model without encodings is returned unchanged.
    """
    if not compressed.encodings:
        return compressed
    if moments is None:
        moments = input_moments(original, probe)
    dense = original.materialize()
    encodings = {name: calibrated_encoding(encoded, dense[name], moments[name]) for name, encoded in compressed.encodings.items()}
    spread = max(float(np.max(np.abs(e.rescale - 1.0))) for e in encodings.values())
    logger.debug('Calibrated %d rescale vectors, largest gain deviation %.3e', len(encodings), spread)
    return CompressedModel(compressed.parameters, encodings)
