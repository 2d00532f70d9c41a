"""
Module: Toy decoder-only transformer

A pre-norm decoder built from the parameters of a ModelParameters collection: learned token and
position embeddings, ``layers`` blocks of causal multi-head self-attention and a GELU feed-forward
pair, a final layer norm and a separate output projection. Layer norms carry no learned parameters,
so every learned quantity is a matrix or a bias of the collection.

The forward pass runs in float64 with torch. It optionally captures the output of the feed-forward pair
of every block (post-FFN activations, before the residual addition) and the attention probabilities of
every head.
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from numpy.typing import NDArray

import cce.keys as keys
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel, EncodedLayer
from cce.artifacts.model_parameters.model_parameters import ModelConfig, ModelParameters

LAYER_NORM_EPSILON = 1e-5

torch_dtype = torch.float64


@contextmanager
def torch_threads(count: int = 1) -> Iterator[None]:
    """Runs the enclosed torch operations on ``count`` intra-op threads, restoring the previous count on exit."""
    previous = torch.get_num_threads()
    torch.set_num_threads(count)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


@dataclass
class ForwardResult:
    """
    :param logits: Logits per position, shape (T, vocab) or (B, T, vocab).
    :param activations: Feed-forward output of every block, each (T, hidden) or (B, T, hidden).
    :param attention: Attention probabilities of every block, each (heads, T, T) or (B, heads, T, T).
    """
    logits: NDArray[np.float64]
    activations: List[NDArray[np.float64]]
    attention: List[NDArray[np.float64]]


class FactoredLinear:
    """
    Linear map executed from its encoding: ``x -> rescale * ((x @ right.T) @ left.T + x @ residual.T)``.
    Used to time factored inference against dense matrix products.
    """

    def __init__(self, encoded: EncodedLayer):
        self.left = torch.from_numpy(encoded.left)
        self.right = torch.from_numpy(encoded.right)
        self.rescale = torch.from_numpy(encoded.rescale)
        self.residual = None
        if encoded.residual_count:
            indices = torch.from_numpy(np.stack([encoded.residual_rows, encoded.residual_cols]))
            self.residual = torch.sparse_coo_tensor(indices, torch.from_numpy(encoded.residual_values), encoded.shape).coalesce()

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        flat = x.reshape(-1, x.shape[-1])
        y = (flat @ self.right.T) @ self.left.T
        if self.residual is not None:
            y = y + torch.sparse.mm(self.residual, flat.T).T
        return (y * self.rescale).reshape(*x.shape[:-1], -1)


Weight = Union[torch.Tensor, FactoredLinear]


def weights_as_tensors(model: Union[ModelParameters, CompressedModel], factored: bool = False) -> Dict[str, Weight]:
    """
    Returns the parameters of a model as float64 tensors sharing memory with the numpy arrays.

    :param model: A dense or compressed model.
    :param factored: For a compressed model, execute encoded matrices through their factors instead of their reconstruction.
    """
    if factored and isinstance(model, CompressedModel):
        weights = {name: torch.from_numpy(array) for name, array in model.parameters.items()}
        weights.update({name: FactoredLinear(encoded) for name, encoded in model.encodings.items()})
        return weights
    return {name: torch.from_numpy(array) for name, array in model.materialize().items()}


def _linear(x: torch.Tensor, weight: Weight) -> torch.Tensor:
    if isinstance(weight, FactoredLinear):
        return weight(x)
    return x @ weight.T


def _layer_norm(x: torch.Tensor) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], eps=LAYER_NORM_EPSILON)


def forward_tensors(weights: Mapping[str, Weight], config: ModelConfig, tokens: torch.Tensor, capture: bool = False,
                    observe: Optional[Callable[[str, torch.Tensor], None]] = None):
    """
    Runs the forward pass on a batch of token sequences.

    :param weights: Mapping from parameter name to tensor (or FactoredLinear for compressible matrices).
    :param config: The architecture.
    :param tokens: Long tensor of shape (B, T).
    :param capture: Whether to return feed-forward outputs and attention probabilities.
    :param observe: Called with the name and the input of every compressible matrix, before its product.
    :return: A 3-tuple (logits (B, T, vocab), activations, attention); the lists are empty without capture.
    """
    batch, length = tokens.shape
    heads, head_dim = config.heads, config.head_dim
    x = weights[keys.DEFAULT_EMBEDDING_KEY][tokens] + weights[keys.DEFAULT_POSITION_KEY][:length]
    mask = torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)
    activations, attention = [], []

    for layer_index in range(config.layers):
        def linear(inputs, key):
            name = keys.block_key(layer_index, key)
            if observe is not None:
                observe(name, inputs)
            return _linear(inputs, weights[name])

        a = _layer_norm(x)
        q = linear(a, keys.DEFAULT_Q_KEY).reshape(batch, length, heads, head_dim).transpose(1, 2)
        k = linear(a, keys.DEFAULT_K_KEY).reshape(batch, length, heads, head_dim).transpose(1, 2)
        v = linear(a, keys.DEFAULT_V_KEY).reshape(batch, length, heads, head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(head_dim)
        probabilities = torch.softmax(scores.masked_fill(mask, float('-inf')), dim=-1)
        context = (probabilities @ v).transpose(1, 2).reshape(batch, length, config.hidden)
        x = x + linear(context, keys.DEFAULT_O_KEY)

        b = _layer_norm(x)
        hidden = F.gelu(linear(b, keys.DEFAULT_FFN_IN_KEY) + weights[keys.block_key(layer_index, keys.DEFAULT_FFN_IN_BIAS_KEY)])
        feed_forward = linear(hidden, keys.DEFAULT_FFN_OUT_KEY) + weights[keys.block_key(layer_index, keys.DEFAULT_FFN_OUT_BIAS_KEY)]
        x = x + feed_forward

        if capture:
            activations.append(feed_forward)
            attention.append(probabilities)

    logits = _linear(_layer_norm(x), weights[keys.DEFAULT_OUTPUT_KEY])
    return logits, activations, attention


def check_tokens(tokens, config: ModelConfig) -> NDArray[np.int64]:
    array = np.asarray(tokens)
    if array.ndim not in (1, 2) or array.shape[-1] == 0:
        raise ValueError(f'Tokens must be a non-empty sequence or batch of sequences, got shape {array.shape}')
    if not np.issubdtype(array.dtype, np.integer):
        raise ValueError('Token ids must be integers.')
    if array.shape[-1] > config.max_sequence_length:
        raise ValueError(f'Sequence length {array.shape[-1]} exceeds max_sequence_length {config.max_sequence_length}')
    if array.min() < 0 or array.max() >= config.vocab:
        raise ValueError(f'Token ids must be in [0, {config.vocab}), got range [{array.min()}, {array.max()}]')
    return array.astype(np.int64)


def forward(model: Union[ModelParameters, CompressedModel], tokens, capture: bool = True,
            weights: Optional[Mapping[str, Weight]] = None) -> ForwardResult:
    """
    Runs the model on one sequence (shape (T,)) or a batch of sequences (shape (B, T)).

    :param model: A dense or compressed model.
    :param tokens: Token ids, each below the vocabulary size; at most max_sequence_length per sequence.
    :param capture: Whether to capture activations and attention probabilities.
    :param weights: Pre-built tensors of the model (see ``weights_as_tensors``), to skip the conversion.
    :return: The logits and captures as numpy arrays.
    """
    config = model.config
    array = check_tokens(tokens, config)
    single = array.ndim == 1
    batch = torch.from_numpy(array[None, :] if single else array)
    if weights is None:
        weights = weights_as_tensors(model)

    with torch.no_grad():
        logits, activations, attention = forward_tensors(weights, config, batch, capture)

    def unpack(tensor):
        result = tensor.numpy()
        return result[0] if single else result

    return ForwardResult(logits=unpack(logits), activations=[unpack(a) for a in activations], attention=[unpack(p) for p in attention])
