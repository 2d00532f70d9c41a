"""
Module: Curvature diagnostic

Approximates the curvature of the reconstruction loss with respect to one compressible matrix by its
Gauss-Newton matrix 2 J^T J, where J is the Jacobian of the probe outputs (last-position logits, weighted by
sqrt(P(x))) with respect to the matrix entries. The nonzero spectrum is computed from the smaller dual Gram
matrix 2 J J^T. The result is reported as a histogram of log10 eigenvalues and the spectral entropy of the
normalized spectrum; nothing is asserted about it.
"""

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import torch
from torch.autograd.functional import jacobian

from cce.algorithms.loss.loss_config import ProbeSet
from cce.algorithms.loss.loss_terms import Model
from cce.linalg import sym_eig
from cce.model.transformer import forward_tensors, weights_as_tensors

DEFAULT_DIAGNOSTIC_PROBES = 4
DEFAULT_HISTOGRAM_BINS = 10
EIGENVALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class CurvatureSpectrum:
    name: str
    eigenvalues: np.ndarray
    histogram: Tuple[int, ...]
    bin_edges: Tuple[float, ...]
    spectral_entropy: float

    def to_dict(self) -> Dict:
        return {'name': self.name,
                'eigenvalue_count': int(len(self.eigenvalues)),
                'largest_eigenvalue': float(self.eigenvalues[0]) if len(self.eigenvalues) else 0.0,
                'log10_histogram': list(self.histogram),
                'log10_bin_edges': list(self.bin_edges),
                'spectral_entropy': self.spectral_entropy}


def spectral_entropy(eigenvalues: np.ndarray) -> float:
    """Returns the Shannon entropy (nats) of the eigenvalues normalized to sum to 1; 0 for an empty spectrum."""
    positive = eigenvalues[eigenvalues > EIGENVALUE_FLOOR]
    if positive.size == 0:
        return 0.0
    p = positive / math.fsum(positive)
    return float(-math.fsum(p * np.log(p)))


def curvature_spectrum(model: Model, name: str, probe: ProbeSet,
                       probe_count: int = DEFAULT_DIAGNOSTIC_PROBES,
                       bins: int = DEFAULT_HISTOGRAM_BINS) -> CurvatureSpectrum:
    """
    Returns the Gauss-Newton spectrum of the reconstruction loss with respect to one matrix of a model.

    :param model: The (compressed) model at which the curvature is taken.
    :param name: The compressible matrix.
    :param probe: The probe set; only its first ``probe_count`` inputs are used, with renormalized weights.
    :param probe_count: Number of probe inputs.
    :param bins: Number of histogram bins.
    """
    config = model.config
    count = min(probe_count, len(probe))
    tokens = torch.from_numpy(probe.inputs[:count])
    scale = torch.from_numpy(np.sqrt(probe.weights[:count] / math.fsum(probe.weights[:count])))
    weights = dict(weights_as_tensors(model))
    matrix = weights[name].clone()

    def outputs(w):
        weights[name] = w
        logits, _, _ = forward_tensors(weights, config, tokens)
        return (logits[:, -1, :] * scale[:, None]).reshape(-1)

    jac = jacobian(outputs, matrix).reshape(count * config.vocab, -1).numpy()
    eigenvalues = np.maximum(sym_eig(2.0 * jac @ jac.T, f'Gauss-Newton dual Gram of {name}').eigenvalues, 0.0)
    positive = eigenvalues[eigenvalues > EIGENVALUE_FLOOR]
    if positive.size:
        histogram, edges = np.histogram(np.log10(positive), bins=bins)
    else:
        histogram, edges = np.zeros(bins, dtype=int), np.zeros(bins + 1)
    return CurvatureSpectrum(name, eigenvalues, tuple(int(h) for h in histogram), tuple(float(e) for e in edges),
                             spectral_entropy(eigenvalues))
