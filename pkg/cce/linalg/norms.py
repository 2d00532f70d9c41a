import math

import numpy as np

from cce.linalg.decompositions import Matrix, as_matrix, svd


def frobenius_norm(a: Matrix) -> float:
    """Returns sqrt(sum of squared entries)."""
    return float(np.linalg.norm(as_matrix(a), 'fro'))


def nuclear_norm(a: Matrix) -> float:
    """Returns the sum of the singular values."""
    return math.fsum(svd(a).singular_values)


def spectral_norm(a: Matrix) -> float:
    """Returns the largest singular value."""
    return float(svd(a).singular_values[0])


def l0_norm(a: Matrix, zero_tol: float = 0.0) -> int:
    """
    Counts the entries whose magnitude exceeds ``zero_tol``.

    :param a: A matrix.
    :param zero_tol: Non-negative tolerance under which an entry counts as zero.
    :return: The number of nonzero entries.
    """
    if zero_tol < 0:
        raise ValueError('zero_tol must be non-negative.')
    return int(np.count_nonzero(np.abs(as_matrix(a)) > zero_tol))
