#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""Tests for `cce.linalg`."""


import unittest
import warnings
from unittest import mock

import numpy as np
import scipy.linalg

from cce.exceptions import DecompositionError, ShapeError
from cce.linalg import as_matrix, frobenius_norm, l0_norm, nuclear_norm, spectral_norm, svd, sym_eig
from tests.fixtures import jacobi_eigenvalues, jacobi_singular_values


class TestSvd(unittest.TestCase):

    def test_000_identity(self):
        result = svd(np.eye(2))
        np.testing.assert_allclose(result.singular_values, [1.0, 1.0])

    def test_001_diagonal(self):
        result = svd(np.diag([1.0, 3.0]))
        np.testing.assert_allclose(result.singular_values, [3.0, 1.0])
        np.testing.assert_allclose(result.reconstruct(), np.diag([1.0, 3.0]), atol=1e-12)

    def test_002_random_matches_oracle(self):
        rng = np.random.default_rng(0)
        for shape in [(5, 3), (3, 5), (4, 4), (1, 6)]:
            a = rng.standard_normal(shape)
            result = svd(a)
            r = min(shape)
            self.assertEqual(result.u.shape, (shape[0], r))
            self.assertEqual(result.v.shape, (shape[1], r))
            self.assertLessEqual(np.linalg.norm(result.reconstruct() - a), 1e-8)
            np.testing.assert_allclose(result.singular_values, jacobi_singular_values(a)[:r], atol=1e-8)
            np.testing.assert_allclose(result.u.T @ result.u, np.eye(r), atol=1e-10)
            np.testing.assert_allclose(result.v.T @ result.v, np.eye(r), atol=1e-10)

    def test_003_singular_values_ordered_and_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s = svd(rng.standard_normal((6, 4))).singular_values
            self.assertTrue(np.all(s >= 0))
            self.assertTrue(np.all(np.diff(s) <= 0))

    def test_004_deterministic(self):
        a = np.random.default_rng(2).standard_normal((6, 6))
        first, second = svd(a), svd(a.copy())
        np.testing.assert_array_equal(first.u, second.u)
        np.testing.assert_array_equal(first.singular_values, second.singular_values)
        np.testing.assert_array_equal(first.v, second.v)

    def test_005_truncated_reconstruction(self):
        a = np.random.default_rng(3).standard_normal((5, 4))
        result = svd(a)
        error = np.linalg.norm(a - result.reconstruct(2))
        self.assertAlmostEqual(error, np.sqrt(np.sum(result.singular_values[2:] ** 2)), places=10)

    def test_006_fallback_driver(self):
        a = np.random.default_rng(4).standard_normal((4, 3))
        expected = scipy.linalg.svd(a, full_matrices=False)
        with mock.patch('scipy.linalg.svd', side_effect=[np.linalg.LinAlgError('no convergence'), expected]):
            with self.assertWarns(UserWarning):
                result = svd(a, 'blocks.0.attn.q')
        np.testing.assert_allclose(result.reconstruct(), a, atol=1e-10)

    def test_007_non_convergence_names_matrix(self):
        with mock.patch('scipy.linalg.svd', side_effect=np.linalg.LinAlgError('no convergence')):
            with warnings.catch_warnings():
                warnings.simplefilter('ignore')
                with self.assertRaises(DecompositionError) as context:
                    svd(np.eye(3), 'blocks.1.ffn.w1')
        self.assertIn('blocks.1.ffn.w1', str(context.exception))
        self.assertEqual(context.exception.exit_code, 3)

    def test_008_rejects_bad_input(self):
        with self.assertRaises(ShapeError):
            svd(np.ones(3))
        with self.assertRaises(ValueError):
            svd(np.array([[1.0, np.nan]]))
        with self.assertRaises(ShapeError):
            as_matrix(np.zeros((0, 3)))

    def test_009_sign_convention(self):
        a = np.random.default_rng(7).standard_normal((5, 4))
        result, negated = svd(a), svd(-a)
        pivots = np.argmax(np.abs(result.u), axis=0)
        self.assertTrue(np.all(result.u[pivots, np.arange(4)] > 0))
        np.testing.assert_allclose(negated.u, result.u, atol=1e-10)
        np.testing.assert_allclose(negated.v, -result.v, atol=1e-10)


class TestSymEig(unittest.TestCase):

    def test_000_diagonal(self):
        np.testing.assert_allclose(sym_eig(np.diag([1.0, 4.0])).eigenvalues, [4.0, 1.0])

    def test_001_off_diagonal(self):
        np.testing.assert_allclose(sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]])).eigenvalues, [1.0, -1.0], atol=1e-12)

    def test_002_matches_jacobi(self):
        rng = np.random.default_rng(5)
        for n in (2, 4, 6):
            b = rng.standard_normal((n, n))
            a = (b + b.T) / 2
            result = sym_eig(a)
            np.testing.assert_allclose(result.eigenvalues, jacobi_eigenvalues(a), atol=1e-8)
            for k in range(n):
                vector = result.eigenvectors[:, k]
                np.testing.assert_allclose(a @ vector, result.eigenvalues[k] * vector, atol=1e-9)

    def test_003_positive_semidefinite(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            b = rng.standard_normal((5, 3))
            self.assertGreaterEqual(sym_eig(b @ b.T).eigenvalues.min(), -1e-10)

    def test_004_rejects_non_square_and_non_symmetric(self):
        with self.assertRaises(ShapeError):
            sym_eig(np.ones((2, 3)))
        with self.assertRaises(ValueError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_005_sign_convention(self):
        b = np.random.default_rng(8).standard_normal((4, 4))
        vectors = sym_eig(b + b.T).eigenvectors
        pivots = np.argmax(np.abs(vectors), axis=0)
        self.assertTrue(np.all(vectors[pivots, np.arange(4)] > 0))


class TestNorms(unittest.TestCase):

    def test_000_examples(self):
        self.assertAlmostEqual(frobenius_norm(np.array([[3.0, 4.0]])), 5.0)
        self.assertAlmostEqual(nuclear_norm(np.diag([2.0, 3.0])), 5.0)
        self.assertAlmostEqual(spectral_norm(np.diag([2.0, 3.0])), 3.0)
        self.assertEqual(l0_norm(np.array([[0.0, 1.0], [2.0, 0.0]])), 2)

    def test_001_zero_tolerance(self):
        a = np.array([[1e-9, 1.0], [0.0, -1e-3]])
        self.assertEqual(l0_norm(a), 3)
        self.assertEqual(l0_norm(a, zero_tol=1e-6), 2)
        with self.assertRaises(ValueError):
            l0_norm(a, zero_tol=-1.0)

    def test_002_norm_ordering(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.standard_normal(tuple(rng.integers(1, 6, size=2)))
            spectral, frobenius, nuclear = spectral_norm(a), frobenius_norm(a), nuclear_norm(a)
            self.assertLessEqual(spectral, frobenius + 1e-12)
            self.assertLessEqual(frobenius, nuclear + 1e-12)
            self.assertAlmostEqual(frobenius ** 2, float(np.sum(svd(a).singular_values ** 2)), places=9)


if __name__ == '__main__':
    unittest.main()
