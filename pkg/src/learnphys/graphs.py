"""Attributed directed graphs and batches of them.

A :class:`Graph` may hold several member graphs (a disjoint union), in the
style of graph_nets' ``GraphsTuple``: ``n_node``/``n_edge`` give per-member
counts, ``globals`` has one row per member and ``senders``/``receivers`` index
into the concatenated node rows.  A plain single graph is the one-member case.

Feature arrays may be numpy arrays or taped tensors; the structural operations
here work on both.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

from .diffcore import ops
from .diffcore.tape import Tensor, value_of


class StructureError(ValueError):
    """Two graphs that must share structure do not."""


@dataclass(frozen=True, eq=False)
class Graph:
    globals: object  # (num_graphs, Fg)
    nodes: object  # (num_nodes, Fn)
    edges: object  # (num_edges, Fe)
    senders: np.ndarray
    receivers: np.ndarray
    n_node: np.ndarray
    n_edge: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.senders, dtype=np.int64)
        r = np.asarray(self.receivers, dtype=np.int64)
        object.__setattr__(self, "senders", s)
        object.__setattr__(self, "receivers", r)
        object.__setattr__(self, "n_node", np.asarray(self.n_node, dtype=np.int64))
        object.__setattr__(self, "n_edge", np.asarray(self.n_edge, dtype=np.int64))
        n = self.nodes.shape[0]
        if len(s) != len(r) or len(s) != self.edges.shape[0]:
            raise StructureError("edge feature rows, senders and receivers disagree")
        if len(s) and (min(s.min(), r.min()) < 0 or max(s.max(), r.max()) >= n):
            raise StructureError(f"edge endpoint outside [0, {n})")
        if self.n_node.sum() != n or self.n_edge.sum() != len(s):
            raise StructureError("n_node/n_edge do not match feature rows")
        if self.globals.shape[0] != len(self.n_node):
            raise StructureError("one globals row per member graph is required")

    @property
    def num_graphs(self) -> int:
        return len(self.n_node)

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def widths(self) -> tuple[int, int, int]:
        """(global, node, edge) feature widths."""
        return (self.globals.shape[1], self.nodes.shape[1], self.edges.shape[1])

    @cached_property
    def node_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_node)[:-1]]).astype(np.int64)

    @cached_property
    def edge_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_edge)[:-1]]).astype(np.int64)

    @cached_property
    def node_graph(self) -> np.ndarray:
        """Member index of every node."""
        return np.repeat(np.arange(self.num_graphs), self.n_node)

    @cached_property
    def edge_graph(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_graphs), self.n_edge)

    def with_features(self, globals=None, nodes=None, edges=None) -> Graph:
        return replace(
            self,
            globals=self.globals if globals is None else globals,
            nodes=self.nodes if nodes is None else nodes,
            edges=self.edges if edges is None else edges,
        )

    def numpy(self) -> Graph:
        """Copy with all features as plain arrays."""
        return self.with_features(value_of(self.globals), value_of(self.nodes), value_of(self.edges))

    def same_structure(self, other: Graph) -> bool:
        return (
            np.array_equal(self.n_node, other.n_node)
            and np.array_equal(self.n_edge, other.n_edge)
            and np.array_equal(self.senders, other.senders)
            and np.array_equal(self.receivers, other.receivers)
        )


def make_graph(globals, nodes, edges, senders, receivers) -> Graph:
    """Single graph from 1-D globals and 2-D node/edge features."""
    g = np.asarray(globals, dtype=np.float64).reshape(1, -1)
    n = np.asarray(nodes, dtype=np.float64)
    e = np.asarray(edges, dtype=np.float64)
    if e.ndim == 1:
        e = e.reshape(len(senders), -1)
    return Graph(g, n, e, senders, receivers, [n.shape[0]], [e.shape[0]])


def zeros_like_structure(g: Graph, widths) -> Graph:
    wg, wn, we = widths
    return g.with_features(
        np.zeros((g.num_graphs, wg)), np.zeros((g.num_nodes, wn)), np.zeros((g.num_edges, we))
    )


def graph_concat(a: Graph, b: Graph) -> Graph:
    """Feature-wise concatenation of two structurally identical graphs."""
    if not a.same_structure(b):
        raise StructureError(
            f"graph_concat needs identical structure: nodes {a.n_node.tolist()} vs "
            f"{b.n_node.tolist()}, edges {a.n_edge.tolist()} vs {b.n_edge.tolist()}"
        )
    return a.with_features(
        ops.concat([a.globals, b.globals], axis=-1),
        ops.concat([a.nodes, b.nodes], axis=-1),
        ops.concat([a.edges, b.edges], axis=-1),
    )


def graph_split(g: Graph, widths) -> tuple[Graph, Graph]:
    """Left graph takes the leading (global, node, edge) widths, right the rest."""
    wg, wn, we = widths
    have = g.widths
    if wg > have[0] or wn > have[1] or we > have[2] or min(widths) < 0:
        raise StructureError(f"split widths {tuple(widths)} exceed graph widths {have}")
    left = g.with_features(
        ops.cols(g.globals, 0, wg), ops.cols(g.nodes, 0, wn), ops.cols(g.edges, 0, we)
    )
    right = g.with_features(
        ops.cols(g.globals, wg, have[0]), ops.cols(g.nodes, wn, have[1]), ops.cols(g.edges, we, have[2])
    )
    return left, right


def batch_graphs(graphs) -> Graph:
    """Disjoint union; edge indices are offset by the preceding node counts."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot batch an empty list")
    w0 = graphs[0].widths
    for g in graphs[1:]:
        if g.widths != w0:
            raise StructureError(f"feature widths differ within batch: {w0} vs {g.widths}")
    if len(graphs) == 1:
        return graphs[0]
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    return Graph(
        ops.concat([g.globals for g in graphs], axis=0),
        ops.concat([g.nodes for g in graphs], axis=0),
        ops.concat([g.edges for g in graphs], axis=0),
        np.concatenate([g.senders + o for g, o in zip(graphs, offsets)]),
        np.concatenate([g.receivers + o for g, o in zip(graphs, offsets)]),
        np.concatenate([g.n_node for g in graphs]),
        np.concatenate([g.n_edge for g in graphs]),
    )


def unbatch(batch: Graph) -> list[Graph]:
    """Inverse of :func:`batch_graphs`, one single graph per member."""
    out = []
    for i in range(batch.num_graphs):
        n0, nn = batch.node_offsets[i], batch.n_node[i]
        e0, ne = batch.edge_offsets[i], batch.n_edge[i]
        out.append(
            Graph(
                ops.rows(batch.globals, [i]),
                ops.rows(batch.nodes, np.arange(n0, n0 + nn)),
                ops.rows(batch.edges, np.arange(e0, e0 + ne)),
                batch.senders[e0 : e0 + ne] - n0,
                batch.receivers[e0 : e0 + ne] - n0,
                [nn],
                [ne],
            )
        )
    return out


def permute_nodes(g: Graph, perm) -> Graph:
    """Node ``i`` of the result is node ``perm[i]`` of ``g``; edges are remapped."""
    perm = np.asarray(perm, dtype=np.int64)
    n = g.num_nodes
    if g.num_graphs != 1:
        raise StructureError("permute_nodes works on a single graph")
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError(f"not a permutation of {n} nodes: {perm.tolist()}")
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(n)
    return replace(
        g,
        nodes=ops.rows(g.nodes, perm),
        senders=inverse[g.senders],
        receivers=inverse[g.receivers],
    )


def graphs_equal(a: Graph, b: Graph) -> bool:
    """Exact (bitwise) equality of structure and features."""
    return (
        a.same_structure(b)
        and np.array_equal(value_of(a.globals), value_of(b.globals))
        and np.array_equal(value_of(a.nodes), value_of(b.nodes))
        and np.array_equal(value_of(a.edges), value_of(b.edges))
        and value_of(a.globals).shape == value_of(b.globals).shape
        and value_of(a.nodes).shape == value_of(b.nodes).shape
        and value_of(a.edges).shape == value_of(b.edges).shape
    )


@dataclass(frozen=True, eq=False)
class SystemTemplate:
    """Static graph of one system (or a batch) plus how actions reach edges.

    ``action_map`` is ``(num_edges, num_actuators)``: the dynamic edge feature
    is ``action_map @ actions``.  ``movable`` flags bodies whose state evolves.
    """

    static: Graph
    action_map: np.ndarray
    movable: np.ndarray

    @property
    def num_actuators(self) -> int:
        return self.action_map.shape[1]

    def dynamic(self, states, actions) -> Graph:
        """Dynamic graph: node = body state, edge = action magnitude, no globals."""
        n_act = self.num_actuators
        if actions.shape != (n_act,):
            raise ValueError(f"expected {n_act} actions, got shape {actions.shape}")
        if states.shape[0] != self.static.num_nodes:
            raise ValueError(f"expected {self.static.num_nodes} body states, got {states.shape[0]}")
        if ops.is_taped(actions):
            edges = ops.matmul(self.action_map, ops.reshape(actions, (n_act, 1)))
        else:
            edges = self.action_map @ value_of(actions).reshape(n_act, 1)
        return self.static.with_features(np.zeros((self.static.num_graphs, 0)), states, edges)


def batch_templates(templates) -> SystemTemplate:
    templates = list(templates)
    if len(templates) == 1:
        return templates[0]
    return SystemTemplate(
        batch_graphs([t.static for t in templates]),
        block_diag(*[t.action_map for t in templates]),
        np.concatenate([t.movable for t in templates]),
    )


__all__ = [
    "Graph",
    "SystemTemplate",
    "batch_templates",
    "StructureError",
    "Tensor",
    "batch_graphs",
    "graph_concat",
    "graph_split",
    "graphs_equal",
    "make_graph",
    "permute_nodes",
    "unbatch",
    "zeros_like_structure",
]
