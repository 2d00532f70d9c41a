"""
Module: Structured encoding

A planned matrix is stored as a factor pair (its truncated SVD), a sparse residual keeping the largest
truncation errors, and a per-row gain vector. The gain of row i starts from the ratio of the original and
reconstructed row norms and is clipped to the interval on which the row error does not exceed the error of
gain 1, so the encoding is never worse than the plain truncation.

Functions:
- encode_layer: Encodes one matrix according to its plan entry.
- decode_layer: Reconstructs the dense matrix of an encoding.
- rescale_rows: The per-row gain vector.
- encode_model: Encodes every compressible matrix of a model, optionally in parallel.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from cce.algorithms.compression.low_rank import low_rank_factors
from cce.algorithms.compression.planner import CompressionPlan, PlanEntry
from cce.algorithms.compression.sparsity import top_k_support
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel, EncodedLayer
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.exceptions import ShapeError
from cce.linalg import Matrix, SvdResult, as_matrix

logger = logging.getLogger(__name__)

ZERO_TOLERANCE = 1e-12


def rescale_rows(original: Matrix, approximation: Matrix) -> np.ndarray:
    """
    Returns the gain of every row: the norm ratio ||w_i|| / ||x_i||, clipped to the interval between 1 and
    2 g*_i - 1, where g*_i = <w_i, x_i> / ||x_i||^2 is the error-minimizing gain. Gains within 1e-12 of 1, and the
    gains of zero rows, are exactly 1.

    :param original: The original matrix w.
    :param approximation: The reconstruction x before rescaling.
    """
    approximation_norms = np.linalg.norm(approximation, axis=1)
    original_norms = np.linalg.norm(original, axis=1)
    rescale = np.ones(len(original))
    nonzero = approximation_norms > 0
    optimal = np.einsum('ij,ij->i', original[nonzero], approximation[nonzero]) / approximation_norms[nonzero] ** 2
    norm_matching = original_norms[nonzero] / approximation_norms[nonzero]
    low = np.minimum(1.0, 2.0 * optimal - 1.0)
    high = np.maximum(1.0, 2.0 * optimal - 1.0)
    rescale[nonzero] = np.clip(norm_matching, low, high)
    rescale[np.abs(rescale - 1.0) <= ZERO_TOLERANCE] = 1.0
    return rescale


def encode_layer(w: Matrix, entry: PlanEntry, decomposition: Optional[SvdResult] = None) -> EncodedLayer:
    """
    Encodes a matrix as rescale * (left @ right + residual).

    :param w: The matrix.
    :param entry: Its plan entry; gives the rank r and the residual budget k.
    :param decomposition: The SVD of ``w``, if already computed.
    :return: The EncodedLayer; its residual holds at most k triplets, all above the zero tolerance.
    """
    w = as_matrix(w, entry.name)
    if tuple(w.shape) != tuple(entry.shape):
        raise ShapeError(f'{entry.name}: matrix of shape {w.shape} does not match the plan shape {tuple(entry.shape)}')
    left, right = low_rank_factors(w, entry.target_rank, decomposition, entry.name)
    low_rank = left @ right
    errors = w - low_rank

    rows, cols = top_k_support(errors, min(entry.sparsity_budget, w.size))
    values = errors[rows, cols]
    scale = max(1.0, float(np.max(np.abs(w))))
    significant = np.abs(values) > ZERO_TOLERANCE * scale
    rows, cols, values = rows[significant], cols[significant], values[significant]

    approximation = low_rank.copy()
    approximation[rows, cols] += values
    rescale = rescale_rows(w, approximation)
    logger.debug('%s: rank %d, %d residual triplets', entry.name, entry.target_rank, len(values))
    return EncodedLayer(left=left, right=right, residual_rows=rows, residual_cols=cols, residual_values=values, rescale=rescale)


def decode_layer(encoded: EncodedLayer) -> Matrix:
    """Returns rescale * (left @ right + residual)."""
    return encoded.decode()


def encode_model(model: ModelParameters, plan: CompressionPlan, workers: int = 1) -> CompressedModel:
    """
    Encodes every compressible matrix of a model that the plan does not keep dense.

    Encodings are independent; with more than one worker they are computed by a thread pool and collected in plan
    order, so the result does not depend on the number of workers.

    :param model: The model to compress.
    :param plan: A plan for this model.
    :param workers: Number of threads.
    """
    entries = [entry for entry in plan.entries if not entry.dense]

    def encode(entry):
        return encode_layer(model[entry.name], entry)

    if workers > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            encodings = list(executor.map(encode, entries))
    else:
        encodings = [encode(entry) for entry in entries]
    return CompressedModel(model, {entry.name: encoded for entry, encoded in zip(entries, encodings)})
