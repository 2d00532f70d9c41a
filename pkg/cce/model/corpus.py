"""
Module: Synthetic Markov corpus

Deterministic token data standing in for a natural-language corpus. A hidden token chain follows planted
successors: every hidden token is followed by its planted successor with a fixed probability, otherwise by a
uniform token. Each observed token shows the hidden one, except that with the observation-noise probability
it shows a uniform token instead. A model that learns the planted bigrams beats the uniform perplexity by a
wide margin. The planted successor of the last hidden token of a sequence is the label of a
sequence-classification task; with observation noise, reading the label off the last observed token is
not enough, and the rest of the sequence carries the evidence about the hidden token.

Independent streams (training text, held-out text, probes, labeled examples) are derived from one
seed through ``numpy.random.SeedSequence``.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

STREAM_CHAIN = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_PROBE = 3
STREAM_TASK = 4

DEFAULT_OBSERVATION_NOISE = 0.2


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


@dataclass(frozen=True)
class CorpusSpec:
    '''Parameters of the synthetic corpus.'''

    sequences: int = 512
    length: int = 64
    vocab: int = 256
    successor_probability: float = 0.75
    observation_noise: float = DEFAULT_OBSERVATION_NOISE

    def __post_init__(self):
        if not 0.0 <= self.successor_probability <= 1.0:
            raise ValueError('successor_probability must be in [0, 1].')
        if not 0.0 <= self.observation_noise <= 1.0:
            raise ValueError('observation_noise must be in [0, 1].')
        if self.sequences < 1 or self.length < 2 or self.vocab < 2:
            raise ValueError('The corpus needs at least one sequence of length 2 over 2 tokens.')


@dataclass(frozen=True)
class LabeledTask:
    inputs: NDArray[np.int64]
    labels: NDArray[np.int64]


class MarkovChain:
    """
    Class representing the token generator: a random permutation assigns each token its planted successor.

    :param successors: successors[t] is the planted successor of token t.
    :param successor_probability: Probability that a hidden token is followed by its planted successor.
    :param observation_noise: Probability that an observed token is uniform instead of the hidden one.
    """

    def __init__(self, successors: NDArray[np.int64], successor_probability: float, observation_noise: float = 0.0):
        self.successors = np.asarray(successors, dtype=np.int64)
        self.successor_probability = successor_probability
        self.observation_noise = observation_noise

    @classmethod
    def from_seed(cls, seed: int, vocab: int, successor_probability: float, observation_noise: float = 0.0) -> 'MarkovChain':
        return cls(stream_rng(seed, STREAM_CHAIN).permutation(vocab), successor_probability, observation_noise)

    @classmethod
    def from_spec(cls, seed: int, spec: CorpusSpec) -> 'MarkovChain':
        return cls.from_seed(seed, spec.vocab, spec.successor_probability, spec.observation_noise)

    @property
    def vocab(self) -> int:
        return len(self.successors)

    def sample_with_states(self, count: int, length: int, rng: np.random.Generator) -> Tuple[NDArray[np.int64], NDArray[np.int64]]:
        """Returns the observed tokens and the hidden tokens behind them, both of shape (count, length)."""
        states = np.empty((count, length), dtype=np.int64)
        states[:, 0] = rng.integers(0, self.vocab, size=count)
        for t in range(1, length):
            planted = rng.random(count) < self.successor_probability
            uniform = rng.integers(0, self.vocab, size=count)
            states[:, t] = np.where(planted, self.successors[states[:, t - 1]], uniform)
        noisy = rng.random((count, length)) < self.observation_noise
        tokens = np.where(noisy, rng.integers(0, self.vocab, size=(count, length)), states)
        return tokens, states

    def sample(self, count: int, length: int, rng: np.random.Generator) -> NDArray[np.int64]:
        return self.sample_with_states(count, length, rng)[0]


def synthetic_corpus(seed: int, spec: CorpusSpec = CorpusSpec(), stream: int = STREAM_TRAIN) -> NDArray[np.int64]:
    """
    Returns ``spec.sequences`` token sequences of length ``spec.length``, deterministic given the seed.

    :param seed: The corpus seed; it fixes both the planted bigrams and the sampled text.
    :param spec: Size and shape of the corpus.
    :param stream: Which independent stream to draw from (training text by default).
    :return: An integer array of shape (sequences, length).
    """
    return MarkovChain.from_spec(seed, spec).sample(spec.sequences, spec.length, stream_rng(seed, stream))


def classification_task(seed: int, count: int, spec: CorpusSpec = CorpusSpec()) -> LabeledTask:
    """
    Returns a labeled sequence-classification task: the label of a sequence is the planted successor of its last
    hidden token.

    :param seed: The corpus seed (the same planted bigrams as the training corpus).
    :param count: Number of labeled examples.
    :param spec: Shape of the corpus; examples have ``spec.length`` tokens.
    """
    chain = MarkovChain.from_spec(seed, spec)
    inputs, states = chain.sample_with_states(count, spec.length, stream_rng(seed, STREAM_TASK))
    return LabeledTask(inputs=inputs, labels=chain.successors[states[:, -1]])
