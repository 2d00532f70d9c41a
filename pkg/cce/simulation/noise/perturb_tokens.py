"""
Module: Token perturbation

Simulates noisy inputs by altering exactly ceil(noise_level x length) positions of a token sequence.
Three kinds of noise are available:
- substitution: the selected positions are resampled uniformly from the vocabulary (a resampled token may equal the original);
  with one seed, the substitutions of a lower level are a subset of those of a higher level;
- word_swap: the selected positions form adjacent pairs whose tokens are transposed (one adjacent triple is rotated when the count is odd);
- reorder: the selected positions form one contiguous block whose tokens are shuffled.
"""

import math
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

SUBSTITUTION = 'substitution'
WORD_SWAP = 'word_swap'
REORDER = 'reorder'
NOISE_KINDS = (SUBSTITUTION, WORD_SWAP, REORDER)


def affected_count(noise_level: float, length: int) -> int:
    # Rounded first: 0.3 x 10 counts 3 positions, not 4
    return min(length, math.ceil(round(noise_level * length, 9)))


def _adjacent_units(count: int, length: int, rng: np.random.Generator) -> list:
    """
    Places non-overlapping runs of adjacent positions covering exactly ``count`` positions: pairs, plus one
    triple when the count is odd (a single position when the count is 1). Runs and free positions are
    arranged with a uniformly drawn stars-and-bars layout.
    """
    if count == 1:
        sizes = [1]
    else:
        sizes = [2] * (count // 2)
        if count % 2:
            sizes[-1] = 3
    free = length - count
    slots = len(sizes) + free
    unit_slots = set(rng.choice(slots, size=len(sizes), replace=False).tolist())
    units, position, next_unit = [], 0, 0
    for slot in range(slots):
        if slot in unit_slots:
            size = sizes[next_unit]
            units.append(list(range(position, position + size)))
            position += size
            next_unit += 1
        else:
            position += 1
    return units


def perturb_tokens_with_trace(tokens,
                              noise_level: float,
                              kind: str = SUBSTITUTION,
                              seed: int = 0,
                              vocab_size: int = 256) -> Tuple[NDArray[np.int64], Tuple[int, ...]]:
    """
    Perturbs a token sequence and returns the positions the perturbation touched.

    :param tokens: A one-dimensional token sequence.
    :param noise_level: Fraction of positions to alter, in [0, 1].
    :param kind: One of 'substitution', 'word_swap', 'reorder'.
    :param seed: Seed of the perturbation.
    :param vocab_size: Vocabulary size used to resample substituted tokens.
    :raises ValueError: if the noise level is not in [0, 1] or the kind is unknown.
    :return: A 2-tuple (perturbed tokens, sorted affected positions).
    """
    if not 0 <= noise_level <= 1:
        raise ValueError('Noise level must be between 0 and 1.')
    if kind not in NOISE_KINDS:
        raise ValueError(f'Unknown noise kind {kind!r}, expected one of {NOISE_KINDS}.')

    perturbed = np.array(tokens, dtype=np.int64)
    if perturbed.ndim != 1:
        raise ValueError('Tokens must be a one-dimensional sequence.')
    count = affected_count(noise_level, len(perturbed))
    if count == 0:
        return perturbed, ()

    rng = np.random.default_rng(seed)
    if kind == SUBSTITUTION:
        order = rng.permutation(len(perturbed))[:count]
        perturbed[order] = rng.integers(0, vocab_size, size=len(perturbed))[:count]
        return perturbed, tuple(sorted(order.tolist()))

    if kind == WORD_SWAP:
        affected = []
        for unit in _adjacent_units(count, len(perturbed), rng):
            # A pair is transposed, a triple rotated by one
            perturbed[unit] = perturbed[unit[1:] + unit[:1]]
            affected.extend(unit)
        return perturbed, tuple(affected)

    start = int(rng.integers(0, len(perturbed) - count + 1))
    block = np.arange(start, start + count)
    perturbed[block] = perturbed[block][rng.permutation(count)]
    return perturbed, tuple(block.tolist())


def perturb_tokens(tokens, noise_level: float, kind: str = SUBSTITUTION, seed: int = 0, vocab_size: int = 256) -> NDArray[np.int64]:
    """
    Perturbs exactly ceil(noise_level x length) positions of a token sequence; a noise level of 0 is the identity.
    See ``perturb_tokens_with_trace`` for the parameters.
    """
    return perturb_tokens_with_trace(tokens, noise_level, kind, seed, vocab_size)[0]


def perturb_batch(inputs, noise_level: float, kind: str = SUBSTITUTION, seed: int = 0, vocab_size: int = 256) -> NDArray[np.int64]:
    """Perturbs every sequence of a batch; sequence i uses a seed derived from (seed, i)."""
    inputs = np.asarray(inputs)
    seeds = np.random.SeedSequence(seed).spawn(len(inputs))
    return np.stack([perturb_tokens(sequence, noise_level, kind, int(s.generate_state(1)[0]), vocab_size)
                     for sequence, s in zip(inputs, seeds)])
