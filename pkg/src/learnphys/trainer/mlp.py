"""Flattened-graph MLP baseline sharing the GN model's normalisers and loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..diffcore import ops
from ..diffcore.nn import init_mlp, mlp_apply
from ..gn import ForwardModel
from ..graphs import Graph
from ..normalize import INPUT_EPS, GraphNormalizer, NormStats
from ..state import STATE_WIDTH

# reduced version of the (layers, units) sweep used for the baseline
REDUCED_GRID = ((3, 128), (5, 256))


@dataclass(frozen=True)
class MlpArch:
    num_nodes: int
    num_edges: int
    static_widths: tuple
    dynamic_widths: tuple
    hidden: tuple = (128, 128, 128)
    recenter: bool = False
    latent_static: bool = False

    def __post_init__(self):
        for name in ("static_widths", "dynamic_widths", "hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    @property
    def input_size(self) -> int:
        g, n, e = (a + b for a, b in zip(self.static_widths, self.dynamic_widths))
        return g + self.num_nodes * n + self.num_edges * e

    @property
    def output_size(self) -> int:
        return self.num_nodes * STATE_WIDTH

    def to_dict(self) -> dict:
        return asdict(self)


def flatten_graph(g: Graph):
    """One row per member graph: [globals, all node features, all edge features]."""
    B = g.num_graphs
    if len(set(g.n_node.tolist())) > 1 or len(set(g.n_edge.tolist())) > 1:
        raise ValueError("flattening needs every member graph to share one topology")
    return ops.concat([g.globals, ops.reshape(g.nodes, (B, -1)), ops.reshape(g.edges, (B, -1))], axis=-1)


def unflatten_nodes(flat, num_nodes: int, width: int = STATE_WIDTH):
    return ops.reshape(flat, (flat.shape[0] * num_nodes, width))


@dataclass
class MlpModel(ForwardModel):
    prefix: str = "mlp"

    @classmethod
    def create(cls, arch: MlpArch, seed: int = 0, prefix: str = "mlp") -> MlpModel:
        rng = np.random.default_rng(seed)
        params = init_mlp(rng, [arch.input_size, *arch.hidden, arch.output_size], prefix)
        return cls(
            arch,
            params,
            GraphNormalizer.empty(arch.dynamic_widths, INPUT_EPS),
            GraphNormalizer.empty(arch.static_widths, INPUT_EPS),
            NormStats.empty(STATE_WIDTH),
            prefix,
        )

    def delta_norm(self, static: Graph, dynamic: Graph, params=None):
        g_in = self.input_graph(static, dynamic)
        if g_in.n_node[0] != self.arch.num_nodes or g_in.n_edge[0] != self.arch.num_edges:
            raise ValueError(
                f"MLP baseline was built for {self.arch.num_nodes} bodies and {self.arch.num_edges} edges"
            )
        out = mlp_apply(self.params if params is None else params, flatten_graph(g_in), self.prefix)
        return unflatten_nodes(out, self.arch.num_nodes)
