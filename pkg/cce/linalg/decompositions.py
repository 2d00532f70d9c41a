"""
Module: Dense matrix decompositions

Every matrix handled by cce is a two-dimensional ``numpy.ndarray`` of 64-bit
reals with finite entries. This module validates that representation and wraps
the LAPACK singular value and symmetric eigenvalue decompositions exposed by
scipy, making their output deterministic: singular values and eigenvalues are
ordered non-increasing (ties keep the original column order) and the sign of
every singular/eigen vector is fixed so that its largest-magnitude entry is
positive.

Functions:
- as_matrix: Validates and converts an array-like into a Matrix.
- svd: Thin singular value decomposition.
- sym_eig: Eigendecomposition of a symmetric matrix.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from cce.exceptions import DecompositionError, ShapeError

Matrix = NDArray[np.float64]

SYMMETRY_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SvdResult:
    """
    Thin singular value decomposition ``a = u @ diag(singular_values) @ v.T``.

    :param u: Left singular vectors, shape (m, r).
    :param singular_values: Non-increasing, non-negative singular values, length r.
    :param v: Right singular vectors, shape (n, r).
    """
    u: Matrix
    singular_values: NDArray[np.float64]
    v: Matrix

    @property
    def rank_bound(self) -> int:
        return len(self.singular_values)

    def reconstruct(self, rank: int = None) -> Matrix:
        r = self.rank_bound if rank is None else rank
        return (self.u[:, :r] * self.singular_values[:r]) @ self.v[:, :r].T


@dataclass(frozen=True)
class EigResult:
    """
    Eigendecomposition of a symmetric matrix; column ``k`` of ``eigenvectors`` pairs with ``eigenvalues[k]``.
    """
    eigenvalues: NDArray[np.float64]
    eigenvectors: Matrix


def as_matrix(a, name: str = 'matrix') -> Matrix:
    """
    Converts ``a`` to a two-dimensional float64 array and checks the Matrix invariants.

    :param a: An array-like with two dimensions.
    :param name: Name used in error messages.
    :return: The validated matrix (a copy only when a conversion was needed).
    """
    matrix = np.asarray(a, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError(f'{name} must be two-dimensional, got shape {matrix.shape}')
    if matrix.shape[0] == 0 or matrix.shape[1] == 0:
        raise ShapeError(f'{name} must be non-empty, got shape {matrix.shape}')
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f'{name} contains non-finite entries')
    return matrix


def _column_signs(vectors: Matrix) -> np.ndarray:
    # Sign of the largest-magnitude entry of every column; argmax picks the first on ties
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _fix_signs(vectors: Matrix) -> Matrix:
    return vectors * _column_signs(vectors)


def svd(a, name: str = 'matrix') -> SvdResult:
    """
    Returns the thin singular value decomposition of a matrix, with r = min(rows, cols).

    The divide-and-conquer driver (Golub-Kahan bidiagonalization) is used first; if it does not converge,
    the QR-iteration driver is tried before giving up.

    :param a: The matrix to decompose.
    :param name: Name of the matrix (e.g. the layer it belongs to), used in error messages.
    :return: The decomposition as an SvdResult.
    """
    matrix = as_matrix(a, name)
    try:
        u, s, vh = scipy.linalg.svd(matrix, full_matrices=False, check_finite=False, lapack_driver='gesdd')
    except (np.linalg.LinAlgError, ValueError):
        warnings.warn(f'SVD of {name} did not converge with gesdd, retrying with gesvd.')
        try:
            u, s, vh = scipy.linalg.svd(matrix, full_matrices=False, check_finite=False, lapack_driver='gesvd')
        except (np.linalg.LinAlgError, ValueError) as error:
            raise DecompositionError(f'SVD of {name} {matrix.shape} did not converge: {error}') from error

    order = np.argsort(-s, kind='stable')
    u = u[:, order]
    s = np.maximum(s[order], 0.0)
    v = vh[order, :].T

    # Flip u and v together so the product is unchanged
    signs = _column_signs(u)
    return SvdResult(u=u * signs, singular_values=s, v=v * signs)


def sym_eig(a, name: str = 'matrix') -> EigResult:
    """
    Returns the eigendecomposition of a symmetric matrix, eigenvalues in non-increasing order.

    The input is symmetrized as (A + A.T) / 2 before decomposition.

    :param a: A square matrix, symmetric to tolerance 1e-10 (relative to its largest entry).
    :param name: Name of the matrix, used in error messages.
    :return: The decomposition as an EigResult.
    """
    matrix = as_matrix(a, name)
    if matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f'{name} must be square, got shape {matrix.shape}')
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOLERANCE * scale:
        raise ValueError(f'{name} is not symmetric to tolerance {SYMMETRY_TOLERANCE}')
    symmetric = (matrix + matrix.T) / 2.0

    try:
        eigenvalues, eigenvectors = scipy.linalg.eigh(symmetric, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as error:
        raise DecompositionError(f'Eigendecomposition of {name} {matrix.shape} did not converge: {error}') from error

    # eigh returns ascending order
    order = np.argsort(-eigenvalues, kind='stable')
    return EigResult(eigenvalues=eigenvalues[order], eigenvectors=_fix_signs(eigenvectors[:, order]))
