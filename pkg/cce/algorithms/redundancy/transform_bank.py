"""
Module: Transform bank

The transformations that map a flattened weight matrix into the latent space where contextual similarity is
measured are fixed random projections: every row is drawn from a standard normal distribution and scaled to
unit Euclidean norm. A bank is generated from a recorded seed and is immutable afterwards.

Matrices of different sizes need projections with different input dimensions. A TransformFamily derives the
bank of every input dimension from one shared seed, so all layers of a model are compared under one
reproducible set of transformations with a common latent dimension.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from cce.exceptions import ShapeError
from cce.linalg import Matrix, as_matrix

DEFAULT_PROJECTION_DIM = 64
DEFAULT_TRANSFORM_COUNT = 4
ROW_NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TransformBank:
    """
    An ordered collection of m linear maps f_k, each a (p, n) matrix with unit-norm rows.

    :param transforms: The projection matrices, all of shape (p, n).
    :param seed: The seed the projections were generated from (None for hand-built banks).
    """
    transforms: Tuple[Matrix, ...]
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.transforms) < 1:
            raise ValueError('A transform bank needs at least one transform.')
        transforms = tuple(as_matrix(t, 'transform') for t in self.transforms)
        shapes = {t.shape for t in transforms}
        if len(shapes) != 1:
            raise ShapeError(f'All transforms must share one shape, got {sorted(shapes)}')
        for transform in transforms:
            if np.max(np.abs(np.linalg.norm(transform, axis=1) - 1.0)) > ROW_NORM_TOLERANCE:
                raise ValueError('Transform rows must have unit Euclidean norm.')
            transform.setflags(write=False)
        object.__setattr__(self, 'transforms', transforms)

    @classmethod
    def from_seed(cls, input_dim: int, projection_dim: int = DEFAULT_PROJECTION_DIM,
                  transform_count: int = DEFAULT_TRANSFORM_COUNT, seed: int = 0) -> 'TransformBank':
        """
        Generates ``transform_count`` row-normalized Gaussian projections from ``input_dim`` to ``projection_dim``.
        The bank depends only on (seed, input_dim, projection_dim, transform_count).
        """
        if min(input_dim, projection_dim, transform_count) < 1:
            raise ValueError('Bank dimensions and transform count must be positive.')
        rng = np.random.default_rng(np.random.SeedSequence([seed, input_dim]))
        transforms = []
        for _ in range(transform_count):
            gaussian = rng.standard_normal((projection_dim, input_dim))
            transforms.append(gaussian / np.linalg.norm(gaussian, axis=1, keepdims=True))
        return cls(tuple(transforms), seed)

    @property
    def transform_count(self) -> int:
        return len(self.transforms)

    @property
    def projection_dim(self) -> int:
        return self.transforms[0].shape[0]

    @property
    def input_dim(self) -> int:
        return self.transforms[0].shape[1]

    def project(self, w) -> NDArray[np.float64]:
        """
        Returns the m projections f_k(w) of a matrix, shape (m, p).

        :param w: A matrix whose flattened (row-major) length equals the bank input dimension.
        """
        flat = as_matrix(w).reshape(-1)
        if flat.size != self.input_dim:
            raise ShapeError(f'Matrix of shape {np.shape(w)} flattens to {flat.size} entries, the bank expects {self.input_dim}')
        return np.stack([t @ flat for t in self.transforms])

    def representation(self, w) -> NDArray[np.float64]:
        """
        Returns the concatenated projections scaled by 1/sqrt(m): the squared distance of two representations
        equals the contextual similarity of the two matrices.
        """
        return self.project(w).reshape(-1) / np.sqrt(self.transform_count)


class TransformFamily:
    """
    Class deriving one TransformBank per input dimension from a shared seed.

    :param projection_dim: Latent dimension p shared by every bank.
    :param transform_count: Number m of transforms of every bank.
    :param seed: The shared seed.
    """

    def __init__(self, projection_dim: int = DEFAULT_PROJECTION_DIM, transform_count: int = DEFAULT_TRANSFORM_COUNT, seed: int = 0):
        self.projection_dim = projection_dim
        self.transform_count = transform_count
        self.seed = seed
        self.__bank = lru_cache(maxsize=None)(self.__build)

    def __build(self, input_dim: int) -> TransformBank:
        return TransformBank.from_seed(input_dim, self.projection_dim, self.transform_count, self.seed)

    def bank(self, input_dim: int) -> TransformBank:
        return self.__bank(input_dim)

    def bank_for(self, w) -> TransformBank:
        return self.bank(int(np.size(w)))

    def representation(self, w) -> NDArray[np.float64]:
        return self.bank_for(w).representation(w)
