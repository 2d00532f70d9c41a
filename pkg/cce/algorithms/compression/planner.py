"""
Module: Compression planning

Turns the spectra of the compressible matrices into a CompressionPlan: a rank, a residual budget and a
threshold for every matrix, such that the stored parameters of the whole plan stay within a global budget.

Planning proceeds in three passes:
- every matrix gets the rank chosen by the dynamic threshold of its spectrum; the matrices of the first and
  last block use the stricter end-layer energy budget and are never reduced further (their floors);
- if the floors alone exceed the budget the plan is infeasible; if all threshold ranks fit, the unused budget is
  handed to the sparse residuals, proportionally to the energy each truncation discards;
- otherwise the budget left after the floors is shared among the other matrices proportionally to their size,
  and every matrix whose threshold rank does not fit its share picks the rank and residual size that minimize
  its predicted reconstruction error within the share.

An encoding that would not store fewer parameters than the dense matrix is replaced by the dense matrix.
"""

import logging
import math
import warnings
from dataclasses import dataclass, asdict, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from cce.algorithms.compression.accounting import compression_ratio, encoded_parameter_count
from cce.algorithms.compression.low_rank import tail_energy
from cce.algorithms.redundancy.thresholding import ENERGY_BUDGET, ThresholdPolicy, dynamic_threshold, rank_at_threshold
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.exceptions import PlanningError
from cce.linalg import Matrix, SvdResult, as_matrix, svd

logger = logging.getLogger(__name__)

DEFAULT_GLOBAL_BUDGET = 0.6
DEFAULT_END_LAYER_ENERGY = 0.98


@dataclass(frozen=True)
class PlanEntry:
    """
    Planned compression of one matrix.

    :param name: Parameter name.
    :param layer_index: Block index.
    :param shape: Shape (m, n) of the matrix.
    :param target_rank: Rank r of the factor pair, 1 <= r <= min(m, n).
    :param sparsity_budget: Maximum number k of residual nonzeros; m x n for a matrix kept dense.
    :param tau: Singular-value threshold realizing the rank (0 for a dense matrix).
    :param dense: Whether the matrix is stored dense.
    """
    name: str
    layer_index: int
    shape: Tuple[int, int]
    target_rank: int
    sparsity_budget: int
    tau: float
    dense: bool = False

    def __post_init__(self):
        m, n = self.shape
        if not 1 <= self.target_rank <= min(m, n):
            raise ValueError(f'{self.name}: rank {self.target_rank} out of range [1, {min(m, n)}]')
        if not 0 <= self.sparsity_budget <= m * n:
            raise ValueError(f'{self.name}: sparsity budget {self.sparsity_budget} out of range [0, {m * n}]')

    @property
    def original_parameters(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def planned_parameters(self) -> int:
        if self.dense:
            return self.original_parameters
        return encoded_parameter_count(self.shape, self.target_rank, self.sparsity_budget)

    @property
    def planned_ratio(self) -> float:
        return compression_ratio(self.planned_parameters, self.original_parameters)

    @classmethod
    def dense_entry(cls, name: str, layer_index: int, shape) -> 'PlanEntry':
        m, n = shape
        return cls(name, layer_index, (m, n), min(m, n), m * n, 0.0, dense=True)

    def to_dict(self) -> Dict:
        result = asdict(self)
        result['shape'] = list(self.shape)
        result['planned_parameters'] = self.planned_parameters
        result['planned_ratio'] = self.planned_ratio
        return result


@dataclass(frozen=True)
class CompressionPlan:
    """
    Per-matrix plan entries in canonical order, with the budgets they were planned under.

    :param entries: The plan entries.
    :param global_budget: Fraction of the original compressible parameters the plan may store.
    :param energy_budget: Energy budget of the threshold policy.
    :param schedule_steps: Number of steps the scheduler takes to reach the plan.
    """
    entries: Tuple[PlanEntry, ...]
    global_budget: float
    energy_budget: float
    schedule_steps: int = 1

    def __post_init__(self):
        if self.schedule_steps < 1:
            raise ValueError('schedule_steps must be at least 1.')

    def entry(self, name: str) -> PlanEntry:
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    @property
    def original_parameters(self) -> int:
        return sum(entry.original_parameters for entry in self.entries)

    @property
    def planned_parameters(self) -> int:
        return sum(entry.planned_parameters for entry in self.entries)

    @property
    def planned_ratio(self) -> float:
        return compression_ratio(self.planned_parameters, self.original_parameters)

    @property
    def is_lossless(self) -> bool:
        return all(entry.dense for entry in self.entries)

    def layer_ratios(self) -> Dict[int, float]:
        """Returns the planned ratio of every block (all of its matrices together)."""
        planned, original = {}, {}
        for entry in self.entries:
            planned[entry.layer_index] = planned.get(entry.layer_index, 0) + entry.planned_parameters
            original[entry.layer_index] = original.get(entry.layer_index, 0) + entry.original_parameters
        return {layer: compression_ratio(planned[layer], original[layer]) for layer in sorted(planned)}

    def with_schedule_steps(self, schedule_steps: int) -> 'CompressionPlan':
        return replace(self, schedule_steps=schedule_steps)

    def to_dict(self) -> Dict:
        return {'global_budget': self.global_budget,
                'energy_budget': self.energy_budget,
                'schedule_steps': self.schedule_steps,
                'planned_ratio': self.planned_ratio,
                'entries': [entry.to_dict() for entry in self.entries]}


class _Candidate:
    """Spectral data of one matrix while it is being planned."""

    def __init__(self, name: str, layer_index: int, matrix: Matrix, floor: bool):
        self.name = name
        self.layer_index = layer_index
        self.matrix = matrix
        self.floor = floor
        self.decomposition: SvdResult = svd(matrix, name)
        self.tail = tail_energy(self.decomposition.singular_values)
        self.rank = 0
        self.sparsity_budget = 0

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def size(self) -> int:
        return self.matrix.size

    def cost(self, rank: Optional[int] = None, sparsity_budget: int = 0) -> int:
        """Stored parameters at a rank; the dense size if the encoding is not cheaper."""
        encoded = encoded_parameter_count(self.shape, self.rank if rank is None else rank, sparsity_budget)
        return encoded if encoded < self.size else self.size

    def dense_at(self, rank: int) -> bool:
        return encoded_parameter_count(self.shape, rank, 0) >= self.size

    def predicted_error(self, rank: int, sparsity_budget: int) -> float:
        """Squared error of the rank-r truncation once the k largest truncation errors are kept in the residual."""
        error = self.tail[rank]
        if sparsity_budget <= 0 or error == 0:
            return float(error)
        residual = np.square(self.matrix - self.decomposition.reconstruct(rank)).reshape(-1)
        k = min(sparsity_budget, residual.size)
        kept = np.partition(residual, residual.size - k)[residual.size - k:]
        return float(max(error - math.fsum(kept), 0.0))

    def fit(self, share: int):
        """Chooses the rank (up to the current rank) and residual size minimizing the predicted error within ``share``."""
        best = None
        m, n = self.shape
        for rank in range(1, self.rank + 1):
            sparsity_budget = share - encoded_parameter_count(self.shape, rank, 0)
            if sparsity_budget < 0:
                break
            sparsity_budget = min(sparsity_budget, m * n)
            error = self.predicted_error(rank, sparsity_budget)
            if best is None or error < best[0]:
                best = (error, rank, sparsity_budget)
        if best is None:
            self.rank, self.sparsity_budget = 1, 0
        else:
            _, self.rank, self.sparsity_budget = best

    def entry(self) -> PlanEntry:
        if self.dense_at(self.rank) or self.cost(sparsity_budget=self.sparsity_budget) >= self.size:
            return PlanEntry.dense_entry(self.name, self.layer_index, self.shape)
        tau = float(self.decomposition.singular_values[self.rank - 1])
        return PlanEntry(self.name, self.layer_index, tuple(self.shape), self.rank, self.sparsity_budget, tau)


def _named_layers(model: Union[ModelParameters, Mapping[str, Matrix]]) -> List[Tuple[int, str, Matrix]]:
    if isinstance(model, ModelParameters):
        return list(model.compressible_layers())
    return [(layer_index, name, as_matrix(matrix, name)) for layer_index, (name, matrix) in enumerate(model.items())]


def lossless_plan(model: Union[ModelParameters, Mapping[str, Matrix]], schedule_steps: int = 1) -> CompressionPlan:
    """Returns the plan keeping every matrix dense at full rank."""
    entries = tuple(PlanEntry.dense_entry(name, layer_index, matrix.shape) for layer_index, name, matrix in _named_layers(model))
    return CompressionPlan(entries, 1.0, 1.0, schedule_steps)


def _threshold_rank(candidate: _Candidate, policy: ThresholdPolicy) -> int:
    singular_values = candidate.decomposition.singular_values
    return max(rank_at_threshold(singular_values, dynamic_threshold(singular_values, policy)), 1)


def _distribute_leftover(candidates: Sequence[_Candidate], leftover: int):
    # Residual budgets proportional to the energy each truncation discards
    encoded = [c for c in candidates if not c.dense_at(c.rank)]
    discarded = [float(c.tail[c.rank]) for c in encoded]
    total = math.fsum(discarded)
    if leftover <= 0 or total == 0:
        return
    for candidate, energy in zip(encoded, discarded):
        limit = candidate.size - encoded_parameter_count(candidate.shape, candidate.rank, 0) - 1
        candidate.sparsity_budget = max(min(int(math.floor(leftover * energy / total)), limit), 0)


def _water_fill(candidates: Sequence[_Candidate], available: float) -> Dict[str, int]:
    """
    Shares ``available`` parameters among candidates proportionally to their size; candidates whose threshold cost
    (or minimum cost) is below (above) their share settle at that cost and the rest is shared again.
    """
    open_candidates = list(candidates)
    shares: Dict[str, int] = {}
    while open_candidates:
        total_size = sum(c.size for c in open_candidates)
        settled = []
        for candidate in open_candidates:
            share = available * candidate.size / total_size
            threshold_cost = candidate.cost()
            minimum_cost = candidate.cost(rank=1)
            if threshold_cost <= share:
                settled.append((candidate, threshold_cost))
            elif minimum_cost >= share:
                settled.append((candidate, minimum_cost))
        if not settled:
            for candidate in open_candidates:
                shares[candidate.name] = int(math.floor(available * candidate.size / total_size))
            break
        for candidate, cost in settled:
            shares[candidate.name] = cost
            available -= cost
            open_candidates.remove(candidate)
    return shares


def plan_compression(model: Union[ModelParameters, Mapping[str, Matrix]],
                     global_budget: float = DEFAULT_GLOBAL_BUDGET,
                     policy: ThresholdPolicy = ThresholdPolicy(),
                     end_layer_energy: float = DEFAULT_END_LAYER_ENERGY,
                     schedule_steps: int = 1) -> CompressionPlan:
    """
    Plans the compression of every compressible matrix of a model within a global parameter budget.

    :param model: A ModelParameters, or a plain mapping from name to matrix (each matrix then counts as its own
        layer, in mapping order).
    :param global_budget: Fraction of the original compressible parameters the plan may store, in (0, 1];
        a budget of 1 gives the lossless plan.
    :param policy: The threshold policy choosing each matrix's rank.
    :param end_layer_energy: Minimum retained energy of the first and last layers in energy-budget mode.
    :param schedule_steps: Number of scheduler steps recorded in the plan.
    :raises PlanningError: if the end-layer floors alone exceed the budget.
    :return: The CompressionPlan.
    """
    if not 0 < global_budget <= 1:
        raise ValueError('global_budget must be in (0, 1].')
    if global_budget >= 1:
        logger.info('Global budget 1: planning lossless compression')
        return lossless_plan(model, schedule_steps)

    layers = _named_layers(model)
    if not layers:
        raise ValueError('The model has no compressible matrices.')
    first, last = min(layer for layer, _, _ in layers), max(layer for layer, _, _ in layers)
    candidates = [_Candidate(name, layer_index, matrix, layer_index in (first, last)) for layer_index, name, matrix in layers]

    floor_policy = policy
    if policy.mode == ENERGY_BUDGET:
        floor_policy = policy.with_energy_budget(max(policy.energy_budget, end_layer_energy))
    for candidate in candidates:
        candidate.rank = _threshold_rank(candidate, floor_policy if candidate.floor else policy)
        logger.debug('%s: threshold rank %d of %d', candidate.name, candidate.rank, min(candidate.shape))

    original = sum(c.size for c in candidates)
    target = global_budget * original
    floors = [c for c in candidates if c.floor]
    others = [c for c in candidates if not c.floor]
    floor_cost = sum(c.cost() for c in floors)
    if floor_cost > target:
        binding = sorted({c.layer_index for c in floors})
        raise PlanningError(f'The end-layer floors need {floor_cost} parameters, the budget allows {int(target)} '
                            f'({global_budget} of {original}); binding layers: {binding}', binding)

    threshold_cost = floor_cost + sum(c.cost() for c in others)
    if threshold_cost <= target:
        _distribute_leftover(candidates, int(math.floor(target - threshold_cost)))
    else:
        shares = _water_fill(others, target - floor_cost)
        for candidate in others:
            if candidate.cost() > shares[candidate.name]:
                candidate.fit(shares[candidate.name])

    entries = tuple(c.entry() for c in candidates)
    plan = CompressionPlan(entries, global_budget, policy.energy_budget, schedule_steps)
    if plan.planned_parameters > target:
        raise PlanningError(f'No plan within {global_budget} of the original parameters was found '
                            f'(best plan stores {plan.planned_parameters} of {original})', sorted({c.layer_index for c in candidates}))
    for entry in entries:
        if entry.dense:
            warnings.warn(f'{entry.name}: encoding would not store fewer parameters than the dense matrix, kept dense.')
    logger.info('Planned %d of %d compressible parameters (ratio %.3f)', plan.planned_parameters, original, plan.planned_ratio)
    return plan
