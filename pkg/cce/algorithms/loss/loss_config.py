import math
from dataclasses import dataclass, asdict, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from cce.linalg import Matrix, nuclear_norm
from cce.model.transformer import check_tokens

WEIGHT_SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """
    Coefficients of the composite loss alpha * rec + beta * sim + gamma * reg.

    :param alpha: Weight of the reconstruction loss.
    :param beta: Weight of the similarity loss.
    :param gamma: Weight of the regularization loss.
    :param lambdas: Per-matrix weight of the nuclear-norm regularizer.
    :param rank_targets: Per-matrix nuclear-norm target r_i.
    :param tau: Singular values below tau are penalized by the similarity loss.
    :param sparsity_k: Optional global bound on the residual nonzeros, recorded with the configuration.
    """
    alpha: float = 1.0
    beta: float = 0.01
    gamma: float = 1e-4
    lambdas: Tuple[float, ...] = ()
    rank_targets: Tuple[float, ...] = ()
    tau: float = 0.05
    sparsity_k: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'lambdas', tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, 'rank_targets', tuple(float(v) for v in self.rank_targets))
        if min(self.alpha, self.beta, self.gamma, self.tau) < 0:
            raise ValueError('alpha, beta, gamma and tau must be non-negative.')
        if any(v < 0 for v in self.lambdas + self.rank_targets):
            raise ValueError('lambdas and rank targets must be non-negative.')
        if len(self.lambdas) != len(self.rank_targets):
            raise ValueError(f'{len(self.lambdas)} lambdas given for {len(self.rank_targets)} rank targets')
        if self.sparsity_k is not None and self.sparsity_k < 0:
            raise ValueError('sparsity_k must be non-negative.')

    @classmethod
    def for_layers(cls, layers: Sequence[Matrix], energy_budget: float = 1.0, lam: float = 1.0, **coefficients) -> 'LossConfig':
        """
        Returns a configuration with one uniform lambda per layer and rank targets set to energy_budget x the current
        nuclear norm of every layer.
        """
        return cls(lambdas=(lam,) * len(layers), rank_targets=rank_targets(layers, energy_budget), **coefficients)

    def with_rank_targets(self, targets: Sequence[float]) -> 'LossConfig':
        return replace(self, rank_targets=tuple(targets))

    def scaled(self, factor: float) -> 'LossConfig':
        """Returns the configuration with alpha, beta and gamma multiplied by ``factor``."""
        return replace(self, alpha=self.alpha * factor, beta=self.beta * factor, gamma=self.gamma * factor)

    def to_dict(self) -> Dict:
        return asdict(self)


def rank_targets(layers: Sequence[Matrix], energy_budget: float) -> Tuple[float, ...]:
    """Returns the rank targets r_i = energy_budget x nuclear norm of every layer."""
    return tuple(energy_budget * nuclear_norm(layer) for layer in layers)


@dataclass(frozen=True)
class ProbeSet:
    """
    Finite weighted sample of the input distribution.

    :param inputs: Token sequences, shape (N, T).
    :param weights: Positive probability mass of every input, summing to 1.
    """
    inputs: NDArray[np.int64]
    weights: NDArray[np.float64]

    def __post_init__(self):
        inputs = np.asarray(self.inputs)
        weights = np.asarray(self.weights, dtype=np.float64)
        if inputs.ndim != 2 or len(inputs) == 0:
            raise ValueError(f'A probe set needs a non-empty batch of sequences, got shape {inputs.shape}')
        if weights.shape != (len(inputs),):
            raise ValueError(f'{len(weights)} weights given for {len(inputs)} probe inputs')
        if np.any(weights <= 0):
            raise ValueError('Probe weights must be positive.')
        if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError('Probe weights must sum to 1.')
        object.__setattr__(self, 'inputs', inputs.astype(np.int64))
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def uniform(cls, inputs) -> 'ProbeSet':
        inputs = np.asarray(inputs)
        return cls(inputs, np.full(len(inputs), 1.0 / len(inputs)))

    def __len__(self):
        return len(self.inputs)

    def check(self, config):
        check_tokens(self.inputs, config)

    def permuted(self, order) -> 'ProbeSet':
        order = np.asarray(order)
        return ProbeSet(self.inputs[order], self.weights[order])


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    sim: float
    reg: float
    total: float

    def to_dict(self) -> Dict:
        return asdict(self)
