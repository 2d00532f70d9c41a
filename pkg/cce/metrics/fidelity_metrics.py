import math
from typing import Union

import numpy as np
import torch

from cce.artifacts.encoded_layer.encoded_layer import CompressedModel
from cce.artifacts.model_parameters.model_parameters import ModelParameters
from cce.model.corpus import LabeledTask
from cce.model.transformer import check_tokens, forward_tensors, weights_as_tensors

EVALUATION_CHUNK = 32


def _chunks(array, size=EVALUATION_CHUNK):
    for start in range(0, len(array), size):
        yield array[start:start + size]


def sequence_nll(model: Union[ModelParameters, CompressedModel], corpus) -> np.ndarray:
    """
    Returns the summed next-token negative log-likelihood of every sequence of a corpus.

    :param model: A dense or compressed model.
    :param corpus: Token sequences of shape (N, T), T >= 2.
    """
    tokens = check_tokens(corpus, model.config)
    if tokens.ndim != 2 or tokens.shape[1] < 2:
        raise ValueError('Perplexity needs a batch of sequences with at least two tokens each.')
    weights = weights_as_tensors(model)
    totals = []
    with torch.no_grad():
        for chunk in _chunks(tokens):
            batch = torch.from_numpy(chunk)
            logits, _, _ = forward_tensors(weights, model.config, batch)
            log_probabilities = torch.log_softmax(logits[:, :-1], dim=-1)
            picked = torch.gather(log_probabilities, -1, batch[:, 1:, None])[..., 0]
            totals.extend((-picked).sum(dim=1).tolist())
    return np.asarray(totals)


def perplexity(model: Union[ModelParameters, CompressedModel], corpus) -> float:
    """
    Returns exp(mean next-token negative log-likelihood) over a corpus.

    :param model: A dense or compressed model.
    :param corpus: Token sequences of shape (N, T), T >= 2.
    :return: The perplexity, at least 1.
    """
    totals = sequence_nll(model, corpus)
    count = len(totals) * (np.shape(corpus)[1] - 1)
    return math.exp(math.fsum(totals) / count)


def predictions(model: Union[ModelParameters, CompressedModel], inputs) -> np.ndarray:
    """Returns the arg-max next token after the last position of every input sequence."""
    tokens = check_tokens(inputs, model.config)
    weights = weights_as_tensors(model)
    result = []
    with torch.no_grad():
        for chunk in _chunks(tokens):
            logits, _, _ = forward_tensors(weights, model.config, torch.from_numpy(chunk))
            result.append(torch.argmax(logits[:, -1], dim=-1).numpy())
    return np.concatenate(result)


def classification_accuracy(model: Union[ModelParameters, CompressedModel], task: LabeledTask) -> float:
    """
    Returns the fraction of examples whose predicted next token equals the planted class token.

    :param model: A dense or compressed model.
    :param task: The labeled synthetic task.
    """
    return float(np.mean(predictions(model, task.inputs) == task.labels))
