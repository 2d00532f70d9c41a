import math
from typing import Sequence

import numpy as np

from cce.algorithms.redundancy.transform_bank import TransformBank, TransformFamily
from cce.exceptions import ShapeError
from cce.linalg import Matrix, as_matrix


def contextual_similarity(wi: Matrix, wj: Matrix, bank: TransformBank) -> float:
    """
    Returns the contextual similarity (1/m) * sum_k ||f_k(wi) - f_k(wj)||^2 of two weight matrices: the mean
    squared distance of their latent projections. Zero means the projections coincide.

    :param wi: A weight matrix.
    :param wj: A weight matrix of the same shape.
    :param bank: The transform bank; its input dimension must equal the number of entries of the matrices.
    :return: The non-negative similarity distance.
    """
    wi, wj = as_matrix(wi, 'wi'), as_matrix(wj, 'wj')
    if wi.shape != wj.shape:
        raise ShapeError(f'Cannot compare matrices of shapes {wi.shape} and {wj.shape}')
    difference = bank.project(wi) - bank.project(wj)
    # Exactly rounded sum of per-transform distances: independent of the bank order and of the argument order
    return math.fsum(float(np.dot(d, d)) for d in difference) / bank.transform_count


def similarity_matrix(layers: Sequence[Sequence[Matrix]], family: TransformFamily) -> np.ndarray:
    """
    Returns the pairwise contextual similarity of transformer blocks.

    Each block is given as its list of compressible matrices in canonical order; the similarity of two blocks is
    the sum over matrix kinds of the similarity of their same-kind matrices, each kind using the bank of its size.

    :param layers: Per block, the list of its matrices.
    :param family: The transform family providing one bank per matrix size.
    :return: A symmetric (d, d) matrix with zero diagonal.
    """
    count = len(layers)
    result = np.zeros((count, count))
    for i in range(count):
        for j in range(i + 1, count):
            if len(layers[i]) != len(layers[j]):
                raise ShapeError(f'Blocks {i} and {j} hold different numbers of matrices')
            value = math.fsum(contextual_similarity(a, b, family.bank_for(a)) for a, b in zip(layers[i], layers[j]))
            result[i, j] = result[j, i] = value
    return result
