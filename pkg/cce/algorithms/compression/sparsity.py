from typing import Tuple

import numpy as np

from cce.linalg import Matrix, as_matrix


def top_k_support(w: Matrix, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns the (rows, cols) of the k largest-magnitude entries of a matrix, in row-major order.

    Magnitude ties are broken by (row, col) lexicographic order: the earlier entry wins.

    :param w: The matrix.
    :param k: Number of entries, 0 <= k <= element count.
    """
    w = as_matrix(w)
    if not 0 <= k <= w.size:
        raise ValueError(f'k = {k} is out of range [0, {w.size}]')
    # A stable sort on the row-major flattening keeps lower (row, col) first among equal magnitudes
    order = np.argsort(-np.abs(w).reshape(-1), kind='stable')[:k]
    kept = np.sort(order)
    rows, cols = np.divmod(kept, w.shape[1])
    return rows.astype(np.int64), cols.astype(np.int64)


def sparsify_top_k(w: Matrix, k: int) -> Matrix:
    """
    Keeps the k largest-magnitude entries of a matrix and zeroes the rest: the Frobenius projection of ``w`` onto
    the matrices with at most k nonzero entries.

    :param w: The matrix.
    :param k: Number of kept entries, 0 <= k <= element count.
    """
    w = as_matrix(w)
    rows, cols = top_k_support(w, k)
    result = np.zeros_like(w)
    result[rows, cols] = w[rows, cols]
    return result
