"""
Module: Compression accounting

Stored parameters of an encoded matrix are its factor entries, one per residual triplet and its rescale
vector; a matrix kept dense stores all of its entries. The compression ratio of a matrix is its stored count
over its original count.

Functions:
- compression_ratio: Ratio of two parameter counts.
- encoded_parameter_count: Stored parameters of an encoding with given rank and residual size.
- compression_records: One CompressionRecord per compressible matrix of a compressed model.
- aggregate_by_layer: Per-block sums of CompressionRecords.
"""

import math
from dataclasses import dataclass, asdict
from typing import Dict, Iterable, List

import numpy as np

import cce.keys as keys
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters


@dataclass(frozen=True)
class CompressionRecord:
    """
    Compression outcome of one matrix (or, aggregated, of one block).

    :param name: Parameter name (the block name for aggregated records).
    :param layer_index: Block index.
    :param pre_params: Original parameter count.
    :param post_params: Stored parameter count after compression.
    :param ratio: post_params / pre_params.
    :param frobenius_error: Frobenius distance between the original and the reconstructed matrix.
    """
    name: str
    layer_index: int
    pre_params: int
    post_params: int
    ratio: float
    frobenius_error: float

    def to_dict(self) -> Dict:
        return asdict(self)


def compression_ratio(compressed_count: int, original_count: int) -> float:
    """
    Returns compressed_count / original_count.

    :raises ValueError: if original_count is not positive or compressed_count is negative.
    """
    if original_count <= 0:
        raise ValueError('The original parameter count must be positive.')
    if compressed_count < 0:
        raise ValueError('The compressed parameter count must be non-negative.')
    return compressed_count / original_count


def encoded_parameter_count(shape, rank: int, residual_count: int) -> int:
    m, n = shape
    return rank * (m + n) + residual_count + m


def compression_records(original: ModelParameters, compressed: CompressedModel) -> List[CompressionRecord]:
    """Returns one record per compressible matrix, in canonical order."""
    reconstructed = compressed.materialize()
    records = []
    for layer_index, name, matrix in original.compressible_layers():
        post = compressed.stored_parameter_count(name)
        records.append(CompressionRecord(name=name,
                                         layer_index=layer_index,
                                         pre_params=int(matrix.size),
                                         post_params=post,
                                         ratio=compression_ratio(post, matrix.size),
                                         frobenius_error=float(np.linalg.norm(matrix - reconstructed[name]))))
    return records


def aggregate_by_layer(records: Iterable[CompressionRecord]) -> List[CompressionRecord]:
    """
    Sums the records of the matrices of every block; the block error is the Frobenius norm over all its matrices.
    """
    grouped: Dict[int, List[CompressionRecord]] = {}
    for record in records:
        grouped.setdefault(record.layer_index, []).append(record)
    aggregated = []
    for layer_index in sorted(grouped):
        group = grouped[layer_index]
        pre = sum(record.pre_params for record in group)
        post = sum(record.post_params for record in group)
        aggregated.append(CompressionRecord(name=f'{keys.DEFAULT_BLOCK_PREFIX}.{layer_index}',
                                            layer_index=layer_index,
                                            pre_params=pre,
                                            post_params=post,
                                            ratio=compression_ratio(post, pre),
                                            frobenius_error=math.sqrt(math.fsum(record.frobenius_error ** 2 for record in group))))
    return aggregated
