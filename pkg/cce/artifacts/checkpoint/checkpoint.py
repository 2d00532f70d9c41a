"""
Module: Binary checkpoints

Layout (all integers unsigned little-endian, all reals IEEE-754 float64 little-endian):

- magic ``CCE1`` (4 bytes), format version (u16);
- architecture header: vocab, hidden, heads, layers, max_sequence_length, ffn_multiplier (6 x u32);
- entry count (u32), then one entry per parameter in canonical order:
  name length (u16), UTF-8 name, kind (u8), and by kind:
  0 dense matrix: rows (u32), cols (u32), rows x cols reals row-major;
  1 encoded matrix: rows, cols, rank (u32 each), left factor rows x rank reals, right factor rank x cols reals,
  residual count (u32), per triplet row (u32), col (u32), value (real), rescale vector of rows reals;
  2 vector: length (u32), reals;
- checksum (u64): the first 8 bytes of the BLAKE2b digest of every preceding byte, read as little-endian.

The byte layout is documented in ``docs/checkpoint.rst``.
"""

import hashlib
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from cce.artifacts.encoded_layer.encoded_layer import CompressedModel, EncodedLayer
from cce.artifacts.model_parameters.model_parameters import ModelConfig, ModelParameters
from cce.exceptions import CCEError, CheckpointError, ChecksumError

MAGIC = b'CCE1'
FORMAT_VERSION = 1
CHECKSUM_SIZE = 8

KIND_DENSE = 0
KIND_ENCODED = 1
KIND_VECTOR = 2

ARCHITECTURE_FIELDS = ('vocab', 'hidden', 'heads', 'layers', 'max_sequence_length', 'ffn_multiplier')


def checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=CHECKSUM_SIZE).digest(), 'little')


def _reals(array) -> bytes:
    return np.ascontiguousarray(array, dtype='<f8').tobytes()


def checkpoint_bytes(model: Union[ModelParameters, CompressedModel]) -> bytes:
    """Serializes a dense or compressed model."""
    if isinstance(model, CompressedModel):
        parameters, encodings = model.parameters, model.encodings
    else:
        parameters, encodings = model, {}
    config = parameters.config

    chunks = [MAGIC, struct.pack('<H', FORMAT_VERSION)]
    chunks.append(struct.pack('<6I', *(getattr(config, field) for field in ARCHITECTURE_FIELDS)))
    chunks.append(struct.pack('<I', len(parameters)))
    for name, array in parameters.items():
        encoded_name = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded_name)) + encoded_name)
        if name in encodings:
            encoded = encodings[name]
            rows, cols = encoded.shape
            chunks.append(struct.pack('<B3I', KIND_ENCODED, rows, cols, encoded.rank))
            chunks.append(_reals(encoded.left) + _reals(encoded.right))
            chunks.append(struct.pack('<I', encoded.residual_count))
            triplets = np.zeros(encoded.residual_count, dtype=np.dtype([('row', '<u4'), ('col', '<u4'), ('value', '<f8')]))
            triplets['row'], triplets['col'], triplets['value'] = encoded.residual_rows, encoded.residual_cols, encoded.residual_values
            chunks.append(triplets.tobytes())
            chunks.append(_reals(encoded.rescale))
        elif array.ndim == 2:
            chunks.append(struct.pack('<B2I', KIND_DENSE, *array.shape) + _reals(array))
        else:
            chunks.append(struct.pack('<BI', KIND_VECTOR, array.shape[0]) + _reals(array))

    payload = b''.join(chunks)
    return payload + struct.pack('<Q', checksum(payload))


class _Reader:
    """Bounds-checked cursor over a checkpoint payload."""

    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.payload):
            raise CheckpointError(f'Checkpoint is truncated at byte {self.offset} (needs {size} more bytes)')
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def reals(self, count: int, shape) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype='<f8').astype(np.float64).reshape(shape)


def read_checkpoint_bytes(data: bytes) -> Union[ModelParameters, CompressedModel]:
    """
    Deserializes a checkpoint.

    :raises ChecksumError: if the checksum does not match the payload.
    :raises CheckpointError: if the payload is malformed.
    :return: A ModelParameters, or a CompressedModel if any matrix is encoded.
    """
    if len(data) < len(MAGIC) + CHECKSUM_SIZE:
        raise CheckpointError('Checkpoint is too short.')
    payload, (stored,) = data[:-CHECKSUM_SIZE], struct.unpack('<Q', data[-CHECKSUM_SIZE:])
    if checksum(payload) != stored:
        raise ChecksumError('Checkpoint checksum does not match its payload.')

    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError('Not a cce checkpoint (bad magic).')
    (version,) = reader.unpack('<H')
    if version != FORMAT_VERSION:
        raise CheckpointError(f'Unsupported checkpoint version {version}')
    try:
        config = ModelConfig(**dict(zip(ARCHITECTURE_FIELDS, reader.unpack('<6I'))))
    except ValueError as error:
        raise CheckpointError(f'Invalid architecture header: {error}') from error
    expected = config.parameter_shapes()

    (count,) = reader.unpack('<I')
    weights, encodings = {}, {}
    for _ in range(count):
        (name_length,) = reader.unpack('<H')
        try:
            name = reader.take(name_length).decode('utf-8')
        except UnicodeDecodeError as error:
            raise CheckpointError('Invalid parameter name.') from error
        if name not in expected or name in weights:
            raise CheckpointError(f'Unexpected or repeated parameter {name!r}')
        shape = expected[name]
        (kind,) = reader.unpack('<B')
        if kind == KIND_DENSE or kind == KIND_ENCODED:
            rows, cols = reader.unpack('<2I')
            if (rows, cols) != shape:
                raise CheckpointError(f'{name}: header shape {(rows, cols)} does not match the architecture shape {shape}')
            if kind == KIND_DENSE:
                weights[name] = reader.reals(rows * cols, (rows, cols))
                continue
            (rank,) = reader.unpack('<I')
            if not 1 <= rank <= min(rows, cols):
                raise CheckpointError(f'{name}: invalid rank {rank}')
            left = reader.reals(rows * rank, (rows, rank))
            right = reader.reals(rank * cols, (rank, cols))
            (residual_count,) = reader.unpack('<I')
            triplets = np.frombuffer(reader.take(16 * residual_count), dtype=np.dtype([('row', '<u4'), ('col', '<u4'), ('value', '<f8')]))
            rescale = reader.reals(rows, (rows,))
            try:
                encoded = EncodedLayer(left, right, triplets['row'].astype(np.int64), triplets['col'].astype(np.int64),
                                       triplets['value'].astype(np.float64), rescale)
            except CCEError as error:
                raise CheckpointError(f'{name}: {error}') from error
            encodings[name] = encoded
            weights[name] = encoded.decode()
        elif kind == KIND_VECTOR:
            (length,) = reader.unpack('<I')
            if (length,) != shape:
                raise CheckpointError(f'{name}: header length {length} does not match the architecture shape {shape}')
            weights[name] = reader.reals(length, (length,))
        else:
            raise CheckpointError(f'{name}: unknown entry kind {kind}')

    if reader.offset != len(payload):
        raise CheckpointError(f'{len(payload) - reader.offset} unexpected trailing bytes')
    if set(weights) != set(expected):
        raise CheckpointError(f'Checkpoint misses parameters {sorted(set(expected) - set(weights))}')
    for name, array in weights.items():
        if not np.all(np.isfinite(array)):
            raise CheckpointError(f'{name} holds non-finite values')

    parameters = ModelParameters(config, weights)
    return CompressedModel(parameters, encodings) if encodings else parameters


def write_checkpoint(model: Union[ModelParameters, CompressedModel], path) -> int:
    """Writes a checkpoint file and returns its size in bytes."""
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return len(data)


def read_checkpoint(path) -> Union[ModelParameters, CompressedModel]:
    return read_checkpoint_bytes(Path(path).read_bytes())
