"""
Main module: the compression pipeline.

A model is compressed in four stages, always in this order:

1. redundancy assessment: contextual similarity between blocks, the redundant layer clusters, the covariance
   eigen-spectrum of all compressible matrices, per-matrix singular-value profiles and head redundancy;
2. pruning: the CompressionPlan (ranks, residual budgets, thresholds) within the global budget;
3. structured encoding: the iterative schedule reaching the plan;
4. loss-aware fine-tuning of the encodings on the composite loss, after an optional calibration of the rescale
   vectors against the inputs of the original model.

Functions:
- probe_set: The probe set of a seed.
- redundancy_assessment, pruning, structured_encoding, loss_aware_fine_tuning: The four stages.
- compress: Runs the four stages.
- evaluate_model: Fidelity, stability and robustness measures of a model.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from cce.algorithms.compression.accounting import CompressionRecord, compression_records
from cce.algorithms.compression.planner import CompressionPlan, plan_compression
from cce.algorithms.compression.scheduler import ScheduleResult, run_schedule
from cce.algorithms.loss.calibration import calibrate_rescale
from cce.algorithms.loss.fine_tuning import FineTuneResult, fine_tune
from cce.algorithms.loss.hessian_diagnostic import CurvatureSpectrum, curvature_spectrum
from cce.algorithms.loss.loss_config import LossConfig, ProbeSet, rank_targets
from cce.algorithms.loss.loss_terms import total_loss
from cce.algorithms.redundancy.contextual_similarity import similarity_matrix
from cce.algorithms.redundancy.covariance import CovarianceSummary, layer_covariance, redundant_subspace
from cce.algorithms.redundancy.head_redundancy import HeadRedundancy, head_redundancy
from cce.algorithms.redundancy.transform_bank import TransformFamily
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelConfig, ModelParameters
from cce.artifacts.redundancy_graph.redundancy_graph import RedundancyGraph
from cce.config import AnalysisSection, CCEConfig, EvaluationSection, LossSection
from cce.linalg import svd
from cce.metrics.fidelity_metrics import classification_accuracy, perplexity
from cce.metrics.layer_statistics import ActivationStats, AttentionStats, activation_stats, attention_stats
from cce.metrics.robustness import robustness_curve
from cce.model.corpus import DEFAULT_OBSERVATION_NOISE, STREAM_EVAL, STREAM_PROBE, CorpusSpec, classification_task, synthetic_corpus
from cce.model.transformer import torch_threads

logger = logging.getLogger(__name__)

Model = Union[ModelParameters, CompressedModel]


@dataclass(frozen=True)
class RedundancyAssessment:
    similarity: np.ndarray
    graph: RedundancyGraph
    covariance: CovarianceSummary
    redundant_directions: Tuple[int, ...]
    singular_values: Dict[str, np.ndarray]
    heads: Tuple[HeadRedundancy, ...]
    curvature: Optional[CurvatureSpectrum] = None

    def to_dict(self) -> Dict:
        return {'similarity': self.similarity.tolist(),
                'graph': self.graph.to_dict(),
                'covariance_eigenvalues': self.covariance.eigen.eigenvalues.tolist(),
                'epsilon': self.covariance.epsilon,
                'redundant_directions': list(self.redundant_directions),
                'singular_values': {name: values.tolist() for name, values in self.singular_values.items()},
                'heads': [head.to_dict() for head in self.heads],
                'curvature': None if self.curvature is None else self.curvature.to_dict()}


@dataclass(frozen=True)
class PipelineResult:
    assessment: RedundancyAssessment
    plan: CompressionPlan
    schedule: ScheduleResult
    fine_tuning: FineTuneResult
    records: Tuple[CompressionRecord, ...]

    @property
    def model(self) -> CompressedModel:
        return self.fine_tuning.model


@dataclass(frozen=True)
class ModelEvaluation:
    perplexity: float
    accuracy: float
    activations: ActivationStats
    attention: AttentionStats
    robustness: Tuple[Tuple[float, float], ...]

    def to_dict(self) -> Dict:
        return {'perplexity': self.perplexity,
                'accuracy': self.accuracy,
                'activations': self.activations.to_dict(),
                'attention': self.attention.to_dict(),
                'robustness': [list(point) for point in self.robustness]}


def corpus_spec(config: ModelConfig, sequences: int, successor_probability: float = 0.75,
                observation_noise: float = DEFAULT_OBSERVATION_NOISE) -> CorpusSpec:
    return CorpusSpec(sequences=sequences, length=config.max_sequence_length, vocab=config.vocab,
                      successor_probability=successor_probability, observation_noise=observation_noise)


def probe_set(seed: int, config: ModelConfig, probe_count: int, successor_probability: float = 0.75,
              observation_noise: float = DEFAULT_OBSERVATION_NOISE) -> ProbeSet:
    """Returns the uniform probe set of a seed: ``probe_count`` sequences from the probe stream of the corpus."""
    spec = corpus_spec(config, probe_count, successor_probability, observation_noise)
    return ProbeSet.uniform(synthetic_corpus(seed, spec, stream=STREAM_PROBE))


def redundancy_assessment(model: ModelParameters, settings: AnalysisSection = AnalysisSection(), seed: int = 0,
                          probe: Optional[ProbeSet] = None) -> RedundancyAssessment:
    """
    Quantifies the contextual redundancy of a model. The eigen-analysis is reported only: the plan acts through
    the singular-value thresholds of the pruning stage.

    :param model: The model.
    :param settings: Analysis settings.
    :param seed: Seed of the transform family.
    :param probe: Probe set, needed only for the curvature diagnostic.
    """
    logger.info('Stage 1/4: redundancy assessment')
    family = TransformFamily(settings.projection_dim, settings.transform_count, seed)
    blocks = [model.block_matrices(layer_index) for layer_index in range(model.config.layers)]
    similarity = similarity_matrix(blocks, family)
    graph = RedundancyGraph(similarity, settings.cluster_quantile)
    names = model.compressible_names()
    covariance = layer_covariance([model[name] for name in names], family, settings.epsilon_scale)
    directions = redundant_subspace(covariance)
    singular_values = {name: svd(model[name], name).singular_values for name in names}
    curvature = None
    if settings.hessian_diagnostic and probe is not None:
        curvature = curvature_spectrum(model, names[len(names) // 2], probe)
    logger.info('Redundant layer clusters: %s; %d redundant covariance directions', graph.clusters(), len(directions))
    heads = tuple(head_redundancy(model, family))
    return RedundancyAssessment(similarity, graph, covariance, directions, singular_values, heads, curvature)


def pruning(model: ModelParameters, config: CCEConfig) -> CompressionPlan:
    logger.info('Stage 2/4: pruning plan')
    return plan_compression(model, config.plan.global_budget, config.plan.policy(), config.plan.end_layer_energy, config.schedule.steps)


def loss_config_for(model: Model, settings: LossSection, energy_budget: float) -> LossConfig:
    dense = model.materialize()
    layers = [dense[name] for name in dense.compressible_names()]
    return LossConfig(alpha=settings.alpha, beta=settings.beta, gamma=settings.gamma,
                      lambdas=(settings.lam,) * len(layers), rank_targets=rank_targets(layers, energy_budget), tau=settings.tau)


def structured_encoding(model: ModelParameters, plan: CompressionPlan, loss_config: LossConfig, probe: ProbeSet,
                        config: CCEConfig) -> ScheduleResult:
    logger.info('Stage 3/4: structured encoding in %d steps', plan.schedule_steps)
    schedule = config.schedule
    return run_schedule(model, plan, loss_config, probe, schedule.divergence_ceiling, schedule.divergence_floor, schedule.workers)


def loss_aware_fine_tuning(schedule: ScheduleResult, model: ModelParameters, probe: ProbeSet, settings: LossSection) -> FineTuneResult:
    """
    Fine-tunes the scheduled model. With calibration on, the rescale vectors are first matched to the row energies of
    the original matrices, and fine-tuning starts from whichever of the scheduled and calibrated models has the lower
    total loss.
    """
    logger.info('Stage 4/4: loss-aware fine-tuning for %d steps', settings.fine_tune_steps)
    start = schedule.model
    if settings.calibrate and start.encodings:
        calibrated = calibrate_rescale(start, model, probe)
        scheduled_loss = total_loss(model, start, probe, schedule.loss_config).total
        calibrated_loss = total_loss(model, calibrated, probe, schedule.loss_config).total
        if calibrated_loss < scheduled_loss:
            start = calibrated
        logger.info('Rescale calibration: total loss %.6e -> %.6e (%s)', scheduled_loss, calibrated_loss,
                    'kept' if start is calibrated else 'discarded')
    return fine_tune(start, model, probe, schedule.loss_config, settings.fine_tune_steps, settings.step_size)


def compress(model: ModelParameters, config: CCEConfig = CCEConfig(), seed: int = 0) -> PipelineResult:
    """
    Runs the four compression stages on a model.

    :param model: The (trained) model.
    :param config: The pipeline configuration.
    :param seed: Seed of the transform family and of the probe set.
    :return: The PipelineResult; its records compare the fine-tuned model with the original.

    Torch runs on a single thread, so the result does not depend on the thread count of the caller.
    """
    probe = probe_set(seed, model.config, config.evaluation.probe_count, config.model.successor_probability,
                      config.model.observation_noise)
    with torch_threads(1):
        assessment = redundancy_assessment(model, config.analysis, seed, probe)
        plan = pruning(model, config)
        schedule = structured_encoding(model, plan, loss_config_for(model, config.loss, plan.energy_budget), probe, config)
        tuned = loss_aware_fine_tuning(schedule, model, probe, config.loss)
    return PipelineResult(assessment, plan, schedule, tuned, tuple(compression_records(model, tuned.model)))


def evaluate_model(model: Model, config: CCEConfig = CCEConfig(), seed: int = 0) -> ModelEvaluation:
    """
    Measures a model on the seed's held-out corpus, probe set and labeled task.

    :param model: A dense or compressed model.
    :param config: The pipeline configuration (its evaluation and corpus settings are used).
    :param seed: The corpus seed.
    """
    evaluation: EvaluationSection = config.evaluation
    corpus_settings = config.model.successor_probability, config.model.observation_noise
    held_out = synthetic_corpus(seed, corpus_spec(model.config, evaluation.eval_sequences, *corpus_settings), stream=STREAM_EVAL)
    task = classification_task(seed, evaluation.classification_examples, corpus_spec(model.config, 1, *corpus_settings))
    probe = probe_set(seed, model.config, evaluation.probe_count, *corpus_settings)
    with torch_threads(1):
        curve = robustness_curve(model, task, evaluation.noise_levels, evaluation.noise_kind, seed)
        return ModelEvaluation(perplexity=perplexity(model, held_out),
                               accuracy=classification_accuracy(model, task),
                               activations=activation_stats(model, probe.inputs),
                               attention=attention_stats(model, probe.inputs),
                               robustness=tuple(curve))


def training_corpus_spec(config: CCEConfig) -> Tuple[ModelConfig, CorpusSpec]:
    model = config.model
    architecture = ModelConfig(model.layers, model.hidden, model.heads, model.vocab, model.max_sequence_length, model.ffn_multiplier)
    return architecture, corpus_spec(architecture, model.corpus_sequences, model.successor_probability, model.observation_noise)
