"""
Module: Iterative compression schedule

The scheduler reaches a plan in ``schedule_steps`` steps. At step s of S the rank and residual budget of every
matrix are interpolated geometrically between the full matrix and the plan, r_s = r_full^(1 - s/S) r^(s/S), and
the current model (the reconstruction of the previous step) is encoded at these budgets. After every step the
reconstruction loss against the original model is measured on the probe set; the schedule aborts when it grows
by more than the divergence ceiling from one step to the next. The nuclear-norm rank targets of the loss are
refreshed from the current layers at every step.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Tuple

from cce.algorithms.compression.accounting import CompressionRecord, compression_records
from cce.algorithms.compression.encoder import encode_model
from cce.algorithms.compression.planner import CompressionPlan, PlanEntry
from cce.algorithms.loss.loss_config import LossConfig, ProbeSet, rank_targets
from cce.algorithms.loss.loss_terms import compressible_matrices, model_outputs, reconstruction_loss
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.exceptions import ScheduleDivergenceError

logger = logging.getLogger(__name__)

DEFAULT_DIVERGENCE_CEILING = 10.0
DEFAULT_DIVERGENCE_FLOOR = 1e-8


@dataclass(frozen=True)
class ScheduleStep:
    """
    :param step: Step index, from 1.
    :param stored_parameters: Stored compressible parameters after the step.
    :param reconstruction_loss: Reconstruction loss against the original model after the step.
    """
    step: int
    stored_parameters: int
    reconstruction_loss: float

    def to_dict(self):
        return {'step': self.step, 'stored_parameters': self.stored_parameters, 'reconstruction_loss': self.reconstruction_loss}


@dataclass(frozen=True)
class ScheduleResult:
    """
    :param model: The compressed model after the last step.
    :param records: One CompressionRecord per compressible matrix, against the original model.
    :param steps: Per-step parameter counts and reconstruction losses.
    :param loss_config: The loss configuration with the rank targets of the last step.
    """
    model: CompressedModel
    records: Tuple[CompressionRecord, ...]
    steps: Tuple[ScheduleStep, ...]
    loss_config: LossConfig


def interpolate(full: int, target: int, fraction: float) -> int:
    """Geometric interpolation between ``full`` (fraction 0) and ``target`` (fraction 1), rounded."""
    if fraction >= 1:
        return target
    return int(round(full ** (1.0 - fraction) * target ** fraction))


def step_entry(entry: PlanEntry, fraction: float) -> PlanEntry:
    """Returns the plan entry at a point of the schedule; a matrix the plan keeps dense stays dense."""
    if entry.dense:
        return entry
    m, n = entry.shape
    rank = interpolate(min(m, n), entry.target_rank, fraction)
    # Residual sizes are interpolated shifted by one; a target of 0 stays reachable
    sparsity_budget = min(interpolate(m * n + 1, entry.sparsity_budget + 1, fraction) - 1, m * n)
    stepped = replace(entry, target_rank=rank, sparsity_budget=sparsity_budget)
    if stepped.planned_parameters >= stepped.original_parameters:
        return PlanEntry.dense_entry(entry.name, entry.layer_index, entry.shape)
    return stepped


def run_schedule(model: ModelParameters,
                 plan: CompressionPlan,
                 loss_config: LossConfig,
                 probe: ProbeSet,
                 divergence_ceiling: float = DEFAULT_DIVERGENCE_CEILING,
                 divergence_floor: float = DEFAULT_DIVERGENCE_FLOOR,
                 workers: int = 1) -> ScheduleResult:
    """
    Compresses a model following a plan in ``plan.schedule_steps`` steps.

    :param model: The original model.
    :param plan: The plan for this model.
    :param loss_config: The loss configuration; its rank targets are refreshed at every step.
    :param probe: The probe set of the reconstruction loss.
    :param divergence_ceiling: Largest admissible step-over-step growth factor of the reconstruction loss.
    :param divergence_floor: Losses at or below this value are never considered diverging from.
    :param workers: Threads used to encode the matrices of one step.
    :raises ScheduleDivergenceError: if the reconstruction loss grows by more than the ceiling between two steps.
    :return: The ScheduleResult.
    """
    reference = model_outputs(model, probe)
    current = model
    compressed = CompressedModel(model)
    steps = []
    previous_loss = None

    for step in range(1, plan.schedule_steps + 1):
        fraction = step / plan.schedule_steps
        step_plan = replace(plan, entries=tuple(step_entry(entry, fraction) for entry in plan.entries))
        encoded = encode_model(current, step_plan, workers)
        compressed = CompressedModel(model, encoded.encodings)
        current = compressed.materialize()

        loss = reconstruction_loss(model, compressed, probe, reference)
        stored = sum(compressed.stored_parameter_count(name) for name in model.compressible_names())
        steps.append(ScheduleStep(step, stored, loss))
        if loss_config.lambdas:
            loss_config = loss_config.with_rank_targets(rank_targets(compressible_matrices(compressed), plan.energy_budget))
        logger.info('Schedule step %d/%d: %d stored parameters, reconstruction loss %.6e', step, plan.schedule_steps, stored, loss)

        diverged = previous_loss is not None and previous_loss > divergence_floor and loss > divergence_ceiling * previous_loss
        if not math.isfinite(loss) or diverged:
            raise ScheduleDivergenceError(f'Reconstruction loss diverged at schedule step {step}: {previous_loss} -> {loss} '
                                          f'(ceiling {divergence_ceiling}x)', step, previous_loss, loss)
        previous_loss = loss

    return ScheduleResult(model=compressed,
                          records=tuple(compression_records(model, compressed)),
                          steps=tuple(steps),
                          loss_config=loss_config)
