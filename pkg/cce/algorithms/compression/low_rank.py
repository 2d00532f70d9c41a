from typing import Optional, Tuple

import numpy as np

from cce.linalg import Matrix, SvdResult, as_matrix, svd


def check_rank(shape, r: int):
    if not 1 <= r <= min(shape):
        raise ValueError(f'Rank {r} is out of range [1, {min(shape)}] for a matrix of shape {tuple(shape)}')


def low_rank_factors(w: Matrix, r: int, decomposition: Optional[SvdResult] = None, name: str = 'matrix') -> Tuple[Matrix, Matrix]:
    """
    Returns the factor pair (left, right) of the best rank-r approximation of a matrix: left = U_r diag(sigma_r)
    has shape (m, r) and right = V_r^T has shape (r, n).

    :param w: The matrix.
    :param r: The rank, 1 <= r <= min(m, n).
    :param decomposition: The SVD of ``w``, if already computed.
    :param name: Name of the matrix, used in error messages.
    """
    w = as_matrix(w, name)
    check_rank(w.shape, r)
    decomposition = svd(w, name) if decomposition is None else decomposition
    left = decomposition.u[:, :r] * decomposition.singular_values[:r]
    right = decomposition.v[:, :r].T.copy()
    return left, right


def truncated_approximation(w: Matrix, r: int) -> Matrix:
    """
    Returns the best rank-(at most r) Frobenius approximation of a matrix, the truncated SVD; its error is
    sqrt(sum_{i > r} sigma_i^2).

    :param w: The matrix.
    :param r: The rank, 1 <= r <= min(m, n).
    :raises ValueError: if r is out of range.
    """
    left, right = low_rank_factors(w, r)
    return left @ right


def tail_energy(singular_values) -> np.ndarray:
    """Returns t with t[r] = sum_{i >= r} sigma_i^2 (0-based), the squared truncation error at rank r; length len + 1."""
    squares = np.square(np.asarray(singular_values, dtype=np.float64))
    return np.concatenate([np.cumsum(squares[::-1])[::-1], [0.0]])
