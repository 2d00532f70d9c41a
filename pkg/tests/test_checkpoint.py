#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `cce.artifacts.checkpoint`."""


import os
import struct
import tempfile
import unittest

import numpy as np

from cce.algorithms.compression.encoder import encode_model
from cce.artifacts.checkpoint.checkpoint import (FORMAT_VERSION, KIND_ENCODED, MAGIC, checkpoint_bytes, checksum, read_checkpoint,
                                                 read_checkpoint_bytes, write_checkpoint)
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.exceptions import CheckpointError, ChecksumError
from tests.fixtures import TINY, random_model, uniform_plan


def resealed(payload: bytes) -> bytes:
    """Appends a valid checksum to a (possibly malformed) payload."""
    return payload + struct.pack('<Q', checksum(payload))


class TestCheckpointRoundTrip(unittest.TestCase):

    def setUp(self):
        self.model = random_model(TINY, seed=8)
        self.compressed = encode_model(self.model, uniform_plan(self.model, 2, sparsity_budget=4))

    def test_000_dense(self):
        data = checkpoint_bytes(self.model)
        restored = read_checkpoint_bytes(data)
        self.assertIsInstance(restored, ModelParameters)
        self.assertEqual(restored.config, TINY)
        self.assertEqual(list(restored), list(self.model))
        for name in self.model:
            np.testing.assert_array_equal(restored[name], self.model[name])
        self.assertEqual(checkpoint_bytes(restored), data)

    def test_001_compressed(self):
        data = checkpoint_bytes(self.compressed)
        restored = read_checkpoint_bytes(data)
        self.assertIsInstance(restored, CompressedModel)
        self.assertEqual(sorted(restored.encodings), sorted(self.compressed.encodings))
        for name, encoded in self.compressed.encodings.items():
            np.testing.assert_array_equal(restored.encodings[name].left, encoded.left)
            np.testing.assert_array_equal(restored.encodings[name].residual_rows, encoded.residual_rows)
            np.testing.assert_array_equal(restored.materialize()[name], self.compressed.materialize()[name])
        self.assertEqual(checkpoint_bytes(restored), data)

    def test_002_compressed_is_smaller(self):
        self.assertLess(len(checkpoint_bytes(self.compressed)), len(checkpoint_bytes(self.model)))

    def test_003_header(self):
        data = checkpoint_bytes(self.compressed)
        self.assertEqual(data[:4], MAGIC)
        self.assertEqual(struct.unpack('<H', data[4:6])[0], FORMAT_VERSION)
        self.assertEqual(struct.unpack('<6I', data[6:30]), (TINY.vocab, TINY.hidden, TINY.heads, TINY.layers,
                                                            TINY.max_sequence_length, TINY.ffn_multiplier))
        self.assertEqual(struct.unpack('<I', data[30:34])[0], len(self.model))
        self.assertEqual(struct.unpack('<Q', data[-8:])[0], checksum(data[:-8]))
        self.assertIn(struct.pack('<H', len('blocks.0.attn.q')) + b'blocks.0.attn.q' + struct.pack('<B', KIND_ENCODED), data)

    def test_004_files(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'model.cce')
            size = write_checkpoint(self.compressed, path)
            self.assertEqual(size, os.path.getsize(path))
            restored = read_checkpoint(path)
        np.testing.assert_array_equal(restored.materialize()['blocks.1.ffn.w2'], self.compressed.materialize()['blocks.1.ffn.w2'])


class TestCorruptCheckpoint(unittest.TestCase):

    def setUp(self):
        model = random_model(TINY, seed=9)
        self.data = checkpoint_bytes(encode_model(model, uniform_plan(model, 1, sparsity_budget=2)))

    def test_000_every_flipped_byte_is_detected(self):
        for position in range(len(self.data)):
            corrupt = bytearray(self.data)
            corrupt[position] ^= 0xFF
            with self.assertRaises(CheckpointError):
                read_checkpoint_bytes(bytes(corrupt))

    def test_001_truncation(self):
        for size in (0, 3, 11, len(self.data) // 2, len(self.data) - 1):
            with self.assertRaises(CheckpointError):
                read_checkpoint_bytes(self.data[:size])
        with self.assertRaises(ChecksumError):
            read_checkpoint_bytes(self.data + b'\x00')

    def test_002_malformed_payload_with_valid_checksum(self):
        payload = self.data[:-8]
        cases = {
            'magic': b'XXXX' + payload[4:],
            'version': payload[:4] + struct.pack('<H', FORMAT_VERSION + 1) + payload[6:],
            'architecture': payload[:6] + struct.pack('<I', 0) + payload[10:],
            'truncated': payload[:len(payload) // 2],
            'trailing': payload + b'\x00',
        }
        for case, broken in cases.items():
            with self.subTest(case=case):
                with self.assertRaises(CheckpointError) as context:
                    read_checkpoint_bytes(resealed(broken))
                self.assertNotIsInstance(context.exception, ChecksumError)

    def test_003_unknown_kind(self):
        payload = bytearray(self.data[:-8])
        name = b'embedding'
        kind_offset = payload.index(struct.pack('<H', len(name)) + name) + 2 + len(name)
        payload[kind_offset] = 7
        with self.assertRaisesRegex(CheckpointError, 'unknown entry kind'):
            read_checkpoint_bytes(resealed(bytes(payload)))

    def test_004_exit_code(self):
        self.assertEqual(CheckpointError('x').exit_code, 4)
        self.assertEqual(ChecksumError('x').exit_code, 4)


if __name__ == '__main__':
    unittest.main()
