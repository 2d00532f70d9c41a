import dataclasses
import logging
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F

import cce.keys as keys
from cce.artifacts.model_parameters.model_parameters import ModelConfig, ModelParameters
from cce.exceptions import TrainingError
from cce.model.corpus import CorpusSpec, STREAM_EVAL, stream_rng, synthetic_corpus
from cce.model.transformer import forward_tensors

logger = logging.getLogger(__name__)

INIT_STD = 0.02
TARGET_PERPLEXITY_FRACTION = 0.8
STREAM_INIT = 10
STREAM_BATCHES = 11


def init_parameters(config: ModelConfig, seed: int, std: float = INIT_STD) -> ModelParameters:
    """
    Returns randomly initialized parameters: matrices drawn from N(0, std^2), biases zero.

    :param config: The architecture.
    :param seed: Seed of the initialization.
    :param std: Standard deviation of the matrix entries.
    """
    rng = stream_rng(seed, STREAM_INIT)
    weights = {}
    for name, shape in config.parameter_shapes().items():
        weights[name] = np.zeros(shape) if len(shape) == 1 else rng.normal(0.0, std, size=shape)
    return ModelParameters(config, weights)


def next_token_loss(logits: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    """Mean next-token negative log-likelihood of a batch."""
    return F.cross_entropy(logits[:, :-1].reshape(-1, logits.shape[-1]), tokens[:, 1:].reshape(-1))


def train_toy(seed: int,
              corpus_spec: CorpusSpec = CorpusSpec(),
              config: ModelConfig = ModelConfig(),
              steps: int = 300,
              batch_size: int = 16,
              learning_rate: float = 3e-3,
              weight_decay: float = 0.01,
              eval_sequences: int = 64,
              planted_redundancy_rank: int = 0) -> ModelParameters:
    """
    Trains a toy transformer on the synthetic corpus with AdamW, deterministically given the seed.

    :param seed: Seed of the corpus, the initialization and the batch order.
    :param corpus_spec: The synthetic corpus to train on.
    :param config: The architecture; its vocabulary must match the corpus.
    :param steps: Number of optimizer steps.
    :param batch_size: Sequences per step.
    :param learning_rate: AdamW learning rate.
    :param weight_decay: AdamW weight decay.
    :param eval_sequences: Held-out sequences used to check the perplexity target.
    :param planted_redundancy_rank: If positive, the middle blocks are made near-rank-deficient after training (see ``plant_redundancy``).
    :raises TrainingError: If the held-out perplexity does not fall below 0.8 x vocab.
    :return: The trained parameters.
    """
    if corpus_spec.vocab != config.vocab:
        raise ValueError(f'Corpus vocabulary {corpus_spec.vocab} does not match model vocabulary {config.vocab}')
    if corpus_spec.length > config.max_sequence_length:
        raise ValueError('Corpus sequences are longer than max_sequence_length.')

    corpus = torch.from_numpy(synthetic_corpus(seed, corpus_spec))
    model = init_parameters(config, seed)
    tensors = {name: torch.tensor(array, dtype=torch.float64, requires_grad=True) for name, array in model.items()}
    matrices = [tensor for tensor in tensors.values() if tensor.dim() == 2]
    biases = [tensor for tensor in tensors.values() if tensor.dim() == 1]
    optimizer = torch.optim.AdamW([{'params': matrices, 'weight_decay': weight_decay},
                                   {'params': biases, 'weight_decay': 0.0}], lr=learning_rate)
    batches = stream_rng(seed, STREAM_BATCHES)

    for step in range(steps):
        rows = torch.from_numpy(batches.integers(0, len(corpus), size=batch_size))
        tokens = corpus[rows]
        logits, _, _ = forward_tensors(tensors, config, tokens)
        loss = next_token_loss(logits, tokens)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if step % 50 == 0 or step == steps - 1:
            logger.info('Training step %d/%d: loss %.4f', step + 1, steps, loss.item())

    trained = ModelParameters(config, {name: tensor.detach().numpy().copy() for name, tensor in tensors.items()})

    # Imported here: metrics depends on the model package
    from cce.metrics.fidelity_metrics import perplexity
    held_out_spec = dataclasses.replace(corpus_spec, sequences=eval_sequences)
    held_out = synthetic_corpus(seed, held_out_spec, stream=STREAM_EVAL)
    achieved = perplexity(trained, held_out)
    target = TARGET_PERPLEXITY_FRACTION * config.vocab
    logger.info('Held-out perplexity %.3f (target < %.1f)', achieved, target)
    if not achieved < target:
        raise TrainingError(f'Toy training reached perplexity {achieved:.3f} after {steps} steps, target is < {target:.1f}', achieved)

    if planted_redundancy_rank > 0:
        trained = plant_redundancy(trained, planted_redundancy_rank, seed=seed)
    return trained


def middle_layers(config: ModelConfig) -> tuple:
    """Returns the two central block indices (0-based), e.g. (2, 3) for six blocks."""
    upper = config.layers // 2
    return tuple(sorted({max(upper - 1, 0), upper}))


def plant_redundancy(model: ModelParameters,
                     rank: int,
                     layers: Optional[Iterable[int]] = None,
                     seed: int = 0,
                     noise: float = 1e-4) -> ModelParameters:
    """
    Makes the compressible matrices of some blocks near-rank-deficient by duplicating rows.

    Row i of every matrix is replaced by row (i mod rank), then perturbed by N(0, noise^2) entries; the
    result has ``rank`` dominant singular values.

    :param model: The model to alter (left unchanged; a new model is returned).
    :param rank: Number of distinct rows kept.
    :param layers: Block indices to alter; the two middle blocks by default.
    :param seed: Seed of the perturbation.
    :param noise: Standard deviation of the perturbation.
    """
    if rank < 1:
        raise ValueError('rank must be positive.')
    layers = middle_layers(model.config) if layers is None else tuple(layers)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 12]))
    updates = {}
    for layer_index in layers:
        for key in keys.BLOCK_MATRIX_KEYS:
            name = keys.block_key(layer_index, key)
            matrix = model[name]
            duplicated = matrix[np.arange(matrix.shape[0]) % min(rank, matrix.shape[0])]
            updates[name] = duplicated + rng.normal(0.0, noise, size=matrix.shape)
    return model.replace(updates)
