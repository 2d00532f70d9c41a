from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.exceptions import ShapeError
from cce.linalg import Matrix


@dataclass(frozen=True)
class EncodedLayer:
    """
    Compressed representation of one weight matrix: a factor pair, a sparse residual given as
    (row, col, value) triplets and a per-output-unit gain vector. The matrix it stands for is
    ``rescale[:, None] * (left @ right + residual)``.

    :param left: Left factor, shape (m, r).
    :param right: Right factor, shape (r, n).
    :param residual_rows: Row indices of the residual triplets.
    :param residual_cols: Column indices of the residual triplets.
    :param residual_values: Values of the residual triplets.
    :param rescale: Gain of every output unit (row), length m.
    """
    left: Matrix
    right: Matrix
    residual_rows: NDArray[np.int64]
    residual_cols: NDArray[np.int64]
    residual_values: NDArray[np.float64]
    rescale: NDArray[np.float64]

    def __post_init__(self):
        m, r = self.left.shape
        if self.right.shape[0] != r:
            raise ShapeError(f'Factor shapes {self.left.shape} and {self.right.shape} do not chain')
        n = self.right.shape[1]
        if not (len(self.residual_rows) == len(self.residual_cols) == len(self.residual_values)):
            raise ShapeError('Residual triplet arrays must have equal lengths')
        if len(self.residual_rows) and (self.residual_rows.max() >= m or self.residual_cols.max() >= n
                                        or min(self.residual_rows.min(), self.residual_cols.min()) < 0):
            raise ShapeError(f'Residual triplets fall outside a ({m}, {n}) matrix')
        if self.rescale.shape != (m,):
            raise ShapeError(f'Rescale vector has shape {self.rescale.shape}, expected ({m},)')

    @property
    def shape(self) -> Tuple[int, int]:
        return self.left.shape[0], self.right.shape[1]

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    @property
    def residual_count(self) -> int:
        return len(self.residual_values)

    @property
    def stored_parameter_count(self) -> int:
        """Factor entries, plus one per residual triplet, plus the rescale vector."""
        return int(self.left.size + self.right.size + self.residual_count + self.rescale.size)

    def residual_matrix(self) -> Matrix:
        residual = np.zeros(self.shape)
        residual[self.residual_rows, self.residual_cols] = self.residual_values
        return residual

    def decode(self) -> Matrix:
        return self.rescale[:, None] * (self.left @ self.right + self.residual_matrix())

    def with_parameters(self, left: Matrix, right: Matrix, residual_values: NDArray[np.float64],
                        rescale: NDArray[np.float64]) -> 'EncodedLayer':
        """Returns a copy with new parameter values on the same rank and residual support."""
        return EncodedLayer(left, right, self.residual_rows, self.residual_cols, residual_values, rescale)


class CompressedModel:
    """
    Class representing a compressed toy transformer: the parameters stored dense, plus the encoded
    representation of the compressed matrices. Dense values of encoded matrices are reconstructed on
    demand by ``materialize``.

    :param parameters: Parameters of the model; entries of encoded matrices are ignored by ``materialize``.
    :param encodings: Mapping from parameter name to its EncodedLayer.
    """

    def __init__(self, parameters: ModelParameters, encodings: Optional[Mapping[str, EncodedLayer]] = None):
        self.parameters = parameters
        self.encodings: Dict[str, EncodedLayer] = dict(encodings or {})
        for name, encoded in self.encodings.items():
            if name not in parameters.compressible_names():
                raise ShapeError(f'{name} is not a compressible matrix')
            if encoded.shape != parameters[name].shape:
                raise ShapeError(f'Encoding of {name} has shape {encoded.shape}, expected {parameters[name].shape}')
        self.__materialized = None

    @property
    def config(self):
        return self.parameters.config

    def materialize(self) -> ModelParameters:
        if self.__materialized is None:
            self.__materialized = self.parameters.replace({name: encoded.decode() for name, encoded in self.encodings.items()})
        return self.__materialized

    def stored_parameter_count(self, name: str) -> int:
        if name in self.encodings:
            return self.encodings[name].stored_parameter_count
        return int(self.parameters[name].size)

    def compressible_names(self):
        return self.parameters.compressible_names()
