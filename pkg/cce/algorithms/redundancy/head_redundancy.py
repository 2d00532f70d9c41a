from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

import cce.keys as keys
from cce.algorithms.redundancy.contextual_similarity import contextual_similarity
from cce.algorithms.redundancy.transform_bank import TransformFamily
from cce.artifacts.model_parameters.model_parameters import ModelParameters


@dataclass(frozen=True)
class HeadRedundancy:
    """
    Pairwise contextual similarity of the attention heads of one block.

    :param layer_index: The block.
    :param similarity: Symmetric (heads, heads) matrix with zero diagonal.
    """
    layer_index: int
    similarity: np.ndarray

    def most_similar_pair(self) -> Tuple[int, int]:
        """Returns the pair of distinct heads with the smallest similarity distance (lowest indices on ties)."""
        heads = len(self.similarity)
        pairs = [(self.similarity[i, j], i, j) for i in range(heads) for j in range(i + 1, heads)]
        _, i, j = min(pairs)
        return i, j

    def to_dict(self):
        return {'layer': self.layer_index, 'similarity': self.similarity.tolist(), 'most_similar_pair': list(self.most_similar_pair())}


def head_slices(model: ModelParameters, layer_index: int) -> List[np.ndarray]:
    """
    Returns, for every head of a block, the rows of the query, key and value projections feeding it, stacked
    into one (3 x head_dim, hidden) matrix.
    """
    config = model.config
    projections = [model[keys.block_key(layer_index, key)] for key in (keys.DEFAULT_Q_KEY, keys.DEFAULT_K_KEY, keys.DEFAULT_V_KEY)]
    slices = []
    for head in range(config.heads):
        rows = slice(head * config.head_dim, (head + 1) * config.head_dim)
        slices.append(np.concatenate([projection[rows] for projection in projections]))
    return slices


def head_redundancy(model: ModelParameters, family: TransformFamily) -> List[HeadRedundancy]:
    """
    Returns the head redundancy report of every block. Head redundancy is reported only; heads are never removed.

    :param model: The model to analyze.
    :param family: The transform family used for the similarity.
    """
    if model.config.heads < 2:
        return []
    report = []
    for layer_index in range(model.config.layers):
        slices = head_slices(model, layer_index)
        bank = family.bank_for(slices[0])
        heads = len(slices)
        similarity = np.zeros((heads, heads))
        for i in range(heads):
            for j in range(i + 1, heads):
                similarity[i, j] = similarity[j, i] = contextual_similarity(slices[i], slices[j], bank)
        report.append(HeadRedundancy(layer_index, similarity))
    return report
