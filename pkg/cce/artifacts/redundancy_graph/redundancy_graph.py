from typing import List

import numpy as np
from networkx import Graph, connected_components

DEFAULT_CLUSTER_QUANTILE = 0.25


class RedundancyGraph(Graph):
    """
    Class representing the redundancy graph of a model: one node per transformer block, and an edge between two
    blocks whose contextual similarity distance is at most the chosen quantile of all pairwise distances. Blocks
    connected through such edges form a cluster of contextually overlapping layers.

    :param similarity: Symmetric (d, d) matrix of pairwise contextual similarities between blocks.
    :param quantile: Quantile of the off-diagonal distances used as the edge cutoff, in [0, 1].
    """

    def __init__(self, similarity, quantile: float = DEFAULT_CLUSTER_QUANTILE):
        super().__init__()
        similarity = np.asarray(similarity, dtype=np.float64)
        if similarity.ndim != 2 or similarity.shape[0] != similarity.shape[1]:
            raise ValueError(f'The similarity matrix must be square, got shape {similarity.shape}')
        if not 0 <= quantile <= 1:
            raise ValueError('quantile must be in [0, 1].')

        self.similarity = similarity
        self.quantile = quantile
        self.add_nodes_from(range(len(similarity)))

        upper = np.triu_indices(len(similarity), k=1)
        distances = similarity[upper]
        self.cutoff = float(np.quantile(distances, quantile)) if distances.size else 0.0
        self.add_edges_from((int(i), int(j), {'similarity': float(similarity[i, j])})
                            for i, j in zip(*upper) if similarity[i, j] <= self.cutoff)

    def clusters(self) -> List[List[int]]:
        """Returns the clusters of at least two blocks, each sorted, ordered by their first block."""
        return sorted(sorted(component) for component in connected_components(self) if len(component) > 1)

    def to_dict(self):
        return {'cutoff': self.cutoff,
                'quantile': self.quantile,
                'edges': [[i, j, data['similarity']] for i, j, data in sorted(self.edges(data=True))],
                'clusters': self.clusters()}
