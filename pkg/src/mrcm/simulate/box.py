"""Finite-volume realisations of the whole graph."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.spatial import cKDTree

from ..model import ModelSpec

__all__ = ["BoxGraph", "ResourceRefusal", "sample_box_graph", "DEFAULT_VERTEX_LIMIT"]

DEFAULT_VERTEX_LIMIT = 100_000


class ResourceRefusal(RuntimeError):
    """A requested object would exceed a configured size limit."""


@dataclass
class BoxGraph:
    """Graph on the points in ``[-L, L]^d``; vertex 0 is the planted root if any."""

    L: float
    positions: np.ndarray
    marks: np.ndarray
    edges: np.ndarray
    planted: bool = False

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def adjacency(self):
        n = self.n_vertices
        e = self.edges
        data = np.ones(len(e), dtype=np.int8)
        m = coo_matrix((data, (e[:, 0], e[:, 1])), shape=(n, n))
        return (m + m.T).tocsr()

    def neighbours(self) -> list[list[int]]:
        out = [[] for _ in range(self.n_vertices)]
        for i, j in self.edges:
            out[i].append(int(j))
            out[j].append(int(i))
        return out

    def component_sizes(self) -> np.ndarray:
        if self.n_vertices == 0:
            return np.zeros(0, dtype=int)
        _, labels = connected_components(self.adjacency(), directed=False)
        return np.bincount(labels)

    def cluster_size(self, i: int = 0) -> int:
        order = breadth_first_order(self.adjacency(), i, directed=False, return_predecessors=False)
        return len(order)


def sample_box_graph(model: ModelSpec, lam: float, L: float, rng: np.random.Generator,
                     root_mark=None, vertex_limit: int = DEFAULT_VERTEX_LIMIT) -> BoxGraph:
    """Poisson points of intensity ``lam`` in ``[-L, L]^d`` with independent edges.

    With ``root_mark`` given, an extra vertex with that mark is planted at the
    origin as vertex 0.
    """
    if not L > 0:
        raise ValueError("L must be positive")
    if not lam >= 0:
        raise ValueError("intensity must be nonnegative")
    d = model.d
    mean = lam * (2.0 * L) ** d
    if mean > vertex_limit:
        raise ResourceRefusal(
            f"expected {mean:.4g} vertices exceeds the limit of {vertex_limit}; "
            "shrink the box or raise vertex_limit")
    n = int(rng.poisson(mean))
    pos = rng.uniform(-L, L, size=(n, d))
    marks = np.asarray(model.marks.sample(rng, size=n))
    planted = root_mark is not None
    if planted:
        model.marks.check(root_mark)
        pos = np.vstack([np.zeros((1, d)), pos])
        marks = np.concatenate([np.asarray([root_mark], dtype=marks.dtype), marks])
    if len(pos) < 2:
        return BoxGraph(L, pos, marks, np.zeros((0, 2), dtype=np.int64), planted)
    tree = cKDTree(pos)
    pairs = tree.query_pairs(model.interaction_range(), output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        p = model.phi(pos[i] - pos[j], marks[i], marks[j])
        keep = rng.random(len(pairs)) < p
        pairs = pairs[keep]
    return BoxGraph(L, pos, marks, pairs.astype(np.int64), planted)
