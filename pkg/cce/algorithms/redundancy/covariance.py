"""
Module: Layer covariance eigenanalysis

Layers are turned into vector representations (raw flattened entries, or their projections through a
transform family when shapes differ), the covariance C = 1/N sum (w_i - w_mean)(w_i - w_mean)^T of the
representations is decomposed, and eigen-directions whose eigenvalue falls below epsilon are reported as
redundant structure.

Functions:
- layer_representations: Stacks the vector representations of a sequence of layers.
- layer_covariance: Covariance of the representations and its eigendecomposition.
- redundant_subspace: Indices of the eigen-directions below the epsilon cutoff.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from cce.algorithms.redundancy.transform_bank import TransformFamily
from cce.exceptions import ShapeError
from cce.linalg import EigResult, Matrix, as_matrix, sym_eig

DEFAULT_EPSILON_SCALE = 1e-6


@dataclass(frozen=True)
class CovarianceSummary:
    """
    :param mean_representation: The mean layer representation.
    :param covariance: The symmetric positive semi-definite covariance of the representations.
    :param eigen: Eigendecomposition of the covariance, eigenvalues non-increasing and clipped at zero.
    :param epsilon: Positive cutoff under which an eigenvalue marks a redundant direction.
    """
    mean_representation: NDArray[np.float64]
    covariance: Matrix
    eigen: EigResult
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError('epsilon must be positive.')


def layer_representations(layers: Sequence[Matrix], family: Optional[TransformFamily] = None) -> Matrix:
    """
    Returns one representation per layer, stacked as rows.

    :param layers: The layers.
    :param family: If given, layers are represented by their scaled projections (see ``TransformBank.representation``),
        which share the same length whatever the layer shapes; otherwise the layers must share one shape and are flattened.
    """
    if len(layers) == 0:
        raise ValueError('At least one layer is needed.')
    matrices = [as_matrix(layer, f'layer {i}') for i, layer in enumerate(layers)]
    if family is not None:
        return np.stack([family.representation(matrix) for matrix in matrices])
    shapes = sorted({matrix.shape for matrix in matrices})
    if len(shapes) != 1:
        raise ShapeError(f'Layers must share one shape to be compared without projection, got shapes {shapes}')
    return np.stack([matrix.reshape(-1) for matrix in matrices])


def layer_covariance(layers: Sequence[Matrix],
                     family: Optional[TransformFamily] = None,
                     epsilon_scale: float = DEFAULT_EPSILON_SCALE) -> CovarianceSummary:
    """
    Returns the covariance of the layer representations with its eigendecomposition.

    :param layers: At least one layer.
    :param family: Optional transform family used to project heterogeneous layers to a common dimension.
    :param epsilon_scale: The epsilon cutoff is epsilon_scale x the largest eigenvalue (floored at the smallest positive float).
    :return: A CovarianceSummary.
    """
    samples = layer_representations(layers, family)
    mean = samples.mean(axis=0)
    centered = samples - mean
    covariance = centered.T @ centered / len(samples)
    covariance = (covariance + covariance.T) / 2.0
    eigen = sym_eig(covariance, 'layer covariance')
    # Round-off may leave PSD eigenvalues slightly negative
    eigen = EigResult(eigenvalues=np.maximum(eigen.eigenvalues, 0.0), eigenvectors=eigen.eigenvectors)
    epsilon = max(epsilon_scale * float(eigen.eigenvalues[0]), np.finfo(np.float64).tiny)
    return CovarianceSummary(mean_representation=mean, covariance=covariance, eigen=eigen, epsilon=epsilon)


def redundant_subspace(summary: CovarianceSummary) -> Tuple[int, ...]:
    """
    Returns the indices k (into the summary eigenvalues) with eigenvalue below epsilon, ordered ascending by eigenvalue.
    """
    eigenvalues = summary.eigen.eigenvalues
    order = np.argsort(eigenvalues, kind='stable')
    return tuple(int(k) for k in order if eigenvalues[k] < summary.epsilon)
