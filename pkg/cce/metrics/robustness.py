from typing import List, Sequence, Tuple, Union

from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.metrics.fidelity_metrics import classification_accuracy
from cce.model.corpus import LabeledTask
from cce.simulation.noise.perturb_tokens import SUBSTITUTION, perturb_batch


def check_levels(levels: Sequence[float]) -> Tuple[float, ...]:
    levels = tuple(float(level) for level in levels)
    if not levels:
        raise ValueError('At least one noise level is needed.')
    if any(not 0 <= level <= 1 for level in levels):
        raise ValueError('Noise levels must be between 0 and 1.')
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f'Noise levels must be strictly increasing, got {levels}')
    return levels


def robustness_curve(model: Union[ModelParameters, CompressedModel],
                     task: LabeledTask,
                     levels: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
                     kind: str = SUBSTITUTION,
                     seed: int = 0) -> List[Tuple[float, float]]:
    """
    Returns the classification accuracy of a model on perturbed copies of a labeled task, one point per noise level.

    Every level is perturbed with the same seed, so models evaluated with the same seed see exactly the same noisy
    inputs, and substitution noise at a level extends the substitutions of every lower level. Labels are not perturbed.

    :param model: A dense or compressed model.
    :param task: The labeled synthetic task.
    :param levels: Strictly increasing noise levels in [0, 1].
    :param kind: The perturbation kind (see ``cce.simulation.noise.perturb_tokens``).
    :param seed: Seed of the perturbations.
    :return: A list of (level, accuracy) pairs.
    """
    levels = check_levels(levels)
    curve = []
    for level in levels:
        noisy = perturb_batch(task.inputs, level, kind, seed, model.config.vocab)
        curve.append((level, classification_accuracy(model, LabeledTask(inputs=noisy, labels=task.labels))))
    return curve
