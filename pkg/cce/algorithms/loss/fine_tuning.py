import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from cce.algorithms.loss.gradient import loss_gradient
from cce.algorithms.loss.loss_config import LossBreakdown, LossConfig, ProbeSet
from cce.algorithms.loss.loss_terms import Model, model_outputs, total_loss
from cce.artifacts.encoded_layer.encoded_layer import CompressedModel, EncodedLayer
from cce.exceptions import FineTuneError

logger = logging.getLogger(__name__)

DEFAULT_FINE_TUNE_STEPS = 50
DEFAULT_STEP_SIZE = 0.01


@dataclass(frozen=True)
class FineTuneResult:
    """
    :param model: The best compressed model seen (lowest total loss).
    :param trajectory: The loss before the first step and after every step.
    :param best_step: Index into the trajectory of the returned model.
    """
    model: CompressedModel
    trajectory: Tuple[LossBreakdown, ...]
    best_step: int

    @property
    def initial(self) -> LossBreakdown:
        return self.trajectory[0]

    @property
    def final(self) -> LossBreakdown:
        return self.trajectory[self.best_step]


@dataclass(frozen=True)
class EncodingGradient:
    """The gradient of the loss with respect to the parameters of one encoding."""
    left: np.ndarray
    right: np.ndarray
    residual_values: np.ndarray
    rescale: np.ndarray

    def parts(self) -> Tuple[np.ndarray, ...]:
        return self.left, self.right, self.residual_values, self.rescale


def encoding_gradient(encoded: EncodedLayer, gradient: np.ndarray) -> EncodingGradient:
    """
    Maps the gradient with respect to the dense reconstruction D = g * (L R + S) onto the parameters of the encoding.
    """
    left, right, rescale = encoded.left, encoded.right, encoded.rescale
    scaled = rescale[:, None] * gradient
    unscaled = left @ right + encoded.residual_matrix()
    return EncodingGradient(left=scaled @ right.T,
                            right=left.T @ scaled,
                            residual_values=scaled[encoded.residual_rows, encoded.residual_cols],
                            rescale=np.einsum('ij,ij->i', gradient, unscaled))


def apply_gradient(encoded: EncodedLayer, gradient: EncodingGradient, step_size: float) -> EncodedLayer:
    return encoded.with_parameters(left=encoded.left - step_size * gradient.left,
                                   right=encoded.right - step_size * gradient.right,
                                   residual_values=encoded.residual_values - step_size * gradient.residual_values,
                                   rescale=encoded.rescale - step_size * gradient.rescale)


def encoding_step(encoded: EncodedLayer, gradient: np.ndarray, step_size: float) -> EncodedLayer:
    """
    Takes one gradient step of absolute size step_size on the parameters of an encoding, given the gradient with
    respect to its dense reconstruction. Rank and residual support are unchanged.
    """
    return apply_gradient(encoded, encoding_gradient(encoded, gradient), step_size)


def _norm(arrays: Iterable[np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.sum(np.square(a))) for a in arrays))


def parameter_norm(encodings: Iterable[EncodedLayer]) -> float:
    return _norm(part for e in encodings for part in (e.left, e.right, e.residual_values, e.rescale))


def fine_tune(compressed: CompressedModel,
              original: Model,
              probe: ProbeSet,
              config: LossConfig,
              steps: int = DEFAULT_FINE_TUNE_STEPS,
              step_size: float = DEFAULT_STEP_SIZE) -> FineTuneResult:
    """
    Refines the encodings of a compressed model by gradient descent on the composite loss.

    Only the factors, residual values and rescale vectors of the encoded matrices move; their ranks and residual
    supports, and every matrix stored dense, stay fixed. Every step moves the parameters by step_size times their
    norm along the negative gradient. A step that does not lower the total loss is recorded, then discarded, and the
    step size is halved; an accepted step doubles it again, up to step_size. The parameters with the lowest total loss seen are returned.

    :param compressed: The compressed model.
    :param original: The uncompressed model.
    :param probe: The probe set.
    :param config: The loss coefficients.
    :param steps: Number of gradient steps, at least 0.
    :param step_size: The initial step, relative to the norm of the encoded parameters; positive.
    :raises FineTuneError: if the gradient or the loss becomes non-finite; the error carries the step index.
    :return: The FineTuneResult.
    """
    if steps < 0:
        raise ValueError('steps must be non-negative.')
    if not step_size > 0:
        raise ValueError('step_size must be positive.')

    reference = model_outputs(original, probe)
    best_model = compressed
    loss = total_loss(original, best_model, probe, config, reference)
    trajectory = [loss]
    best_step = 0
    if not compressed.encodings:
        logger.info('No encoded matrices, fine-tuning skipped')
        return FineTuneResult(compressed, tuple(trajectory), 0)

    rate = step_size
    gradients: Dict[str, EncodingGradient] = {}
    for step in range(1, steps + 1):
        if not gradients:
            dense_gradient = loss_gradient(original, best_model, probe, config)
            gradients = {name: encoding_gradient(encoded, dense_gradient[name]) for name, encoded in best_model.encodings.items()}
        gradient_norm = _norm(part for g in gradients.values() for part in g.parts())
        if not math.isfinite(gradient_norm):
            raise FineTuneError(f'Fine-tuning gradient is not finite at step {step}', step)
        if gradient_norm == 0.0:
            logger.info('Fine-tuning reached a stationary point at step %d', step)
            break
        scale = rate * parameter_norm(best_model.encodings.values()) / gradient_norm
        encodings = {name: apply_gradient(encoded, gradients[name], scale) for name, encoded in best_model.encodings.items()}
        if not all(np.all(np.isfinite(e.decode())) for e in encodings.values()):
            raise FineTuneError(f'Fine-tuning produced non-finite parameters at step {step}', step)
        candidate = CompressedModel(best_model.parameters, encodings)
        loss = total_loss(original, candidate, probe, config, reference)
        if not math.isfinite(loss.total):
            raise FineTuneError(f'Fine-tuning loss is not finite at step {step}', step)
        trajectory.append(loss)
        if loss.total < trajectory[best_step].total:
            best_model, best_step = candidate, step
            gradients = {}
            rate = min(step_size, 2 * rate)
        else:
            rate /= 2
        logger.debug('Fine-tune step %d/%d: total %.6e (rec %.6e), step size %.3e', step, steps, loss.total, loss.rec, rate)

    logger.info('Fine-tuning: total loss %.6e -> %.6e (best at step %d)', trajectory[0].total, trajectory[best_step].total, best_step)
    return FineTuneResult(best_model, tuple(trajectory), best_step)
