from cce.linalg.decompositions import Matrix, SvdResult, EigResult, as_matrix, svd, sym_eig
from cce.linalg.norms import frobenius_norm, nuclear_norm, spectral_norm, l0_norm
