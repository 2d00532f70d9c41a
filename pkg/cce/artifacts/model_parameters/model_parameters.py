from collections import OrderedDict
from dataclasses import dataclass, asdict
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

import cce.keys as keys
from cce.exceptions import ShapeError
from cce.linalg import Matrix


@dataclass(frozen=True)
class ModelConfig:
    '''Architecture of the decoder-only toy transformer.'''

    layers: int = 6
    hidden: int = 64
    heads: int = 4
    vocab: int = 256
    max_sequence_length: int = 64
    ffn_multiplier: int = 4

    def __post_init__(self):
        if self.layers < 2:
            raise ValueError(f'The model needs at least 2 layers, got {self.layers}.')
        if min(self.hidden, self.heads, self.vocab, self.max_sequence_length, self.ffn_multiplier) < 1:
            raise ValueError('All model dimensions must be positive.')
        if self.hidden % self.heads != 0:
            raise ValueError(f'hidden ({self.hidden}) must be divisible by heads ({self.heads}).')

    @property
    def ffn_dim(self) -> int:
        return self.hidden * self.ffn_multiplier

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    def parameter_shapes(self) -> 'OrderedDict[str, Tuple[int, ...]]':
        """
        Returns the canonical (name, shape) list of every parameter of a model with this architecture.

        Matrices are stored as (outputs, inputs): a linear map applies as ``x @ w.T``.
        """
        h, f = self.hidden, self.ffn_dim
        shapes = OrderedDict()
        shapes[keys.DEFAULT_EMBEDDING_KEY] = (self.vocab, h)
        shapes[keys.DEFAULT_POSITION_KEY] = (self.max_sequence_length, h)
        block_shapes = {
            keys.DEFAULT_Q_KEY: (h, h),
            keys.DEFAULT_K_KEY: (h, h),
            keys.DEFAULT_V_KEY: (h, h),
            keys.DEFAULT_O_KEY: (h, h),
            keys.DEFAULT_FFN_IN_KEY: (f, h),
            keys.DEFAULT_FFN_OUT_KEY: (h, f),
            keys.DEFAULT_FFN_IN_BIAS_KEY: (f,),
            keys.DEFAULT_FFN_OUT_BIAS_KEY: (h,),
        }
        for layer_index in range(self.layers):
            for key in keys.BLOCK_MATRIX_KEYS + keys.BLOCK_BIAS_KEYS:
                shapes[keys.block_key(layer_index, key)] = block_shapes[key]
        shapes[keys.DEFAULT_OUTPUT_KEY] = (self.vocab, h)
        return shapes


class ModelParameters(OrderedDict):
    """
    Class representing the full weight collection of a toy transformer: an ordered mapping from canonical
    parameter names to float64 arrays, plus the architecture they belong to.

    Only the attention and feed-forward matrices of the blocks are compressible; embeddings, the output
    projection and biases are kept as they are.

    :param config: The architecture of the model.
    :param weights: Mapping from parameter name to array; must hold exactly the names of the architecture.
    """

    def __init__(self, config: ModelConfig, weights: Mapping[str, np.ndarray]):
        super().__init__()
        self.config = config
        expected = config.parameter_shapes()
        missing = set(expected) - set(weights)
        unknown = set(weights) - set(expected)
        if missing or unknown:
            raise ShapeError(f'Parameter names do not match the architecture (missing: {sorted(missing)}, unknown: {sorted(unknown)})')
        for name, shape in expected.items():
            array = np.asarray(weights[name], dtype=np.float64)
            if array.shape != shape:
                raise ShapeError(f'Parameter {name} has shape {array.shape}, expected {shape}')
            self[name] = array

    @classmethod
    def zeros(cls, config: ModelConfig) -> 'ModelParameters':
        return cls(config, {name: np.zeros(shape) for name, shape in config.parameter_shapes().items()})

    def compressible_names(self) -> List[str]:
        return [keys.block_key(i, key) for i in range(self.config.layers) for key in keys.BLOCK_MATRIX_KEYS]

    def compressible_layers(self) -> Iterator[Tuple[int, str, Matrix]]:
        """Yields (layer_index, name, matrix) for every compressible matrix, in canonical order."""
        for name in self.compressible_names():
            layer_index, _ = keys.split_block_key(name)
            yield layer_index, name, self[name]

    def block_matrices(self, layer_index: int) -> List[Matrix]:
        return [self[keys.block_key(layer_index, key)] for key in keys.BLOCK_MATRIX_KEYS]

    def replace(self, updates: Mapping[str, np.ndarray]) -> 'ModelParameters':
        """Returns a new model with the given parameters replaced; the arrays of untouched parameters are shared."""
        weights = OrderedDict(self)
        weights.update(updates)
        return ModelParameters(self.config, weights)

    def copy(self) -> 'ModelParameters':
        return ModelParameters(self.config, {name: array.copy() for name, array in self.items()})

    def parameter_count(self, compressible_only: bool = False) -> int:
        names = self.compressible_names() if compressible_only else self.keys()
        return int(sum(self[name].size for name in names))

    def materialize(self) -> 'ModelParameters':
        return self
