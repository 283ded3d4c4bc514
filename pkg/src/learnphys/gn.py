"""Graph-network blocks and the forward, recurrent and inference models.

Parameters are flat ``{path: array}`` dicts.  Each model couples such a dict
with a frozen architecture record and the normaliser statistics it was trained
with; passing ``params=`` to the prediction functions substitutes taped leaves
during training or planning.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diffcore import ops
from .diffcore.nn import init_gru, init_mlp, mlp_apply, gru_step
from .diffcore.tape import ShapeError, value_of
from .graphs import Graph, SystemTemplate, graph_concat, zeros_like_structure
from .normalize import INPUT_EPS, GraphNormalizer, NormStats, denormalize
from .state import IDENTITY_QUAT, STATE_WIDTH, apply_delta, recenter, uncenter

Widths = tuple  # (global, node, edge)

MODES = (
    "two-gn-skip",
    "two-gn-sequential",
    "single-gn",
    "two-gn-no-global",
    "two-gn-no-node",
    "two-gn-no-edge",
)

# delta features store the rotation as dq - identity, so an all-zero output is "no change"
DELTA_OFFSET = np.concatenate([np.zeros(3), IDENTITY_QUAT, np.zeros(6)])


# -- GN block -----------------------------------------------------------------


@dataclass(frozen=True)
class BlockSpec:
    in_widths: Widths
    out_widths: Widths
    edge_hidden: tuple = (256, 256, 256)
    node_hidden: tuple = (128, 128)
    global_hidden: tuple = (128, 128)
    update_edges: bool = True
    update_nodes: bool = True
    update_globals: bool = True

    @property
    def result_widths(self) -> Widths:
        """Output widths after pass-through of disabled updates."""
        g, n, e = self.in_widths
        og, on, oe = self.out_widths
        return (og if self.update_globals else g, on if self.update_nodes else n, oe if self.update_edges else e)

    def mlp_sizes(self):
        g, n, e = self.in_widths
        rg, rn, re = self.result_widths
        return {
            "edge": [g + 2 * n + e, *self.edge_hidden, re],
            "node": [g + n + re, *self.node_hidden, rn],
            "global": [g + rn + re, *self.global_hidden, rg],
        }


def init_block(rng, spec: BlockSpec, prefix: str) -> dict:
    params = {}
    sizes = spec.mlp_sizes()
    for part, flag in (("edge", spec.update_edges), ("node", spec.update_nodes), ("global", spec.update_globals)):
        if flag:
            params.update(init_mlp(rng, sizes[part], f"{prefix}/{part}"))
    return params


def gn_block(params, spec: BlockSpec, g: Graph, prefix: str) -> Graph:
    """One pass of edge, node and global updates with sum aggregation."""
    if tuple(g.widths) != tuple(spec.in_widths):
        raise ShapeError(f"GN block {prefix!r} expects widths {spec.in_widths}, got {g.widths}")
    if spec.update_edges:
        edge_in = ops.concat(
            [ops.rows(g.globals, g.edge_graph), ops.rows(g.nodes, g.senders), ops.rows(g.nodes, g.receivers), g.edges],
            axis=-1,
        )
        edges = mlp_apply(params, edge_in, f"{prefix}/edge")
    else:
        edges = g.edges
    incoming = ops.seg_sum(edges, g.receivers, g.num_nodes)
    if spec.update_nodes:
        node_in = ops.concat([ops.rows(g.globals, g.node_graph), g.nodes, incoming], axis=-1)
        nodes = mlp_apply(params, node_in, f"{prefix}/node")
    else:
        nodes = g.nodes
    if spec.update_globals:
        node_agg = ops.seg_sum(nodes, g.node_graph, g.num_graphs)
        edge_agg = ops.seg_sum(edges, g.edge_graph, g.num_graphs)
        globals_ = mlp_apply(params, ops.concat([g.globals, node_agg, edge_agg], axis=-1), f"{prefix}/global")
    else:
        globals_ = g.globals
    return g.with_features(globals_, nodes, edges)


# -- feed-forward model ---------------------------------------------------------


@dataclass(frozen=True)
class ForwardArch:
    static_widths: Widths
    dynamic_widths: Widths
    mode: str = "two-gn-skip"
    latent: int = 128
    edge_hidden: tuple = (256, 256, 256)
    node_hidden: tuple = (128, 128)
    global_hidden: tuple = (128, 128)
    recenter: bool = False
    latent_static: bool = False  # static graph is an inferred G_ID: never normalised

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("static_widths", "dynamic_widths", "edge_hidden", "node_hidden", "global_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    @property
    def input_widths(self) -> Widths:
        return tuple(a + b for a, b in zip(self.static_widths, self.dynamic_widths))

    def blocks(self) -> list[BlockSpec]:
        hid = dict(edge_hidden=self.edge_hidden, node_hidden=self.node_hidden, global_hidden=self.global_hidden)
        w_in = self.input_widths
        lat = self.latent
        if self.mode == "single-gn":
            # the global output is never read, so it is left as a pass-through
            return [BlockSpec(w_in, (lat, STATE_WIDTH, lat), update_globals=False, **hid)]
        flags = {
            "two-gn-no-global": dict(update_globals=False),
            "two-gn-no-node": dict(update_nodes=False),
            "two-gn-no-edge": dict(update_edges=False),
        }.get(self.mode, {})
        gn1 = BlockSpec(w_in, (lat, lat, lat), **flags, **hid)
        r = gn1.result_widths
        gn2_in = r if self.mode == "two-gn-sequential" else tuple(a + b for a, b in zip(w_in, r))
        gn2 = BlockSpec(gn2_in, (lat, STATE_WIDTH, lat), update_globals=False, **hid)
        return [gn1, gn2]

    def to_dict(self) -> dict:
        return asdict(self)


def init_forward_params(rng, arch: ForwardArch, prefix: str = "fwd") -> dict:
    params = {}
    for i, spec in enumerate(arch.blocks()):
        params.update(init_block(rng, spec, f"{prefix}/gn{i + 1}"))
    return params


def forward_core(params, arch: ForwardArch, g_in: Graph, prefix: str = "fwd") -> Graph:
    blocks = arch.blocks()
    latent = gn_block(params, blocks[0], g_in, f"{prefix}/gn1")
    if len(blocks) == 1:
        return latent
    gn2_in = latent if arch.mode == "two-gn-sequential" else graph_concat(g_in, latent)
    return gn_block(params, blocks[1], gn2_in, f"{prefix}/gn2")


@dataclass
class ForwardModel:
    arch: ForwardArch
    params: dict
    dyn_norm: GraphNormalizer
    static_norm: GraphNormalizer
    out_norm: NormStats
    prefix: str = "fwd"

    @classmethod
    def create(cls, arch: ForwardArch, seed: int = 0, prefix: str = "fwd") -> ForwardModel:
        rng = np.random.default_rng(seed)
        return cls(
            arch,
            init_forward_params(rng, arch, prefix),
            GraphNormalizer.empty(arch.dynamic_widths, INPUT_EPS),
            GraphNormalizer.empty(arch.static_widths, INPUT_EPS),
            NormStats.empty(STATE_WIDTH),
            prefix,
        )

    def input_graph(self, static: Graph, dynamic: Graph) -> Graph:
        if not any(self.arch.static_widths):
            static = zeros_like_structure(static, (0, 0, 0))
        gd = self.dyn_norm.normalize(dynamic)
        gs = static if self.arch.latent_static else self.static_norm.normalize(static)
        return graph_concat(gs, gd)

    def delta_norm(self, static: Graph, dynamic: Graph, params=None):
        """Normalised node deltas for raw static and dynamic graphs."""
        out = forward_core(self.params if params is None else params, self.arch, self.input_graph(static, dynamic), self.prefix)
        return out.nodes

    def to_arrays(self) -> dict:
        arrays = dict(self.params)
        arrays.update(self.dyn_norm.to_arrays("norm/dynamic"))
        arrays.update(self.static_norm.to_arrays("norm/static"))
        arrays.update(self.out_norm.to_arrays("norm/output"))
        return arrays

    @classmethod
    def from_arrays(cls, arch: ForwardArch, arrays: dict, prefix: str = "fwd") -> ForwardModel:
        params = {k: v for k, v in arrays.items() if k.startswith(prefix + "/")}
        return cls(
            arch,
            params,
            GraphNormalizer.from_arrays(arrays, "norm/dynamic"),
            GraphNormalizer.from_arrays(arrays, "norm/static"),
            NormStats.from_arrays(arrays, "norm/output"),
            prefix,
        )


def decode_delta(out_norm: NormStats, delta_norm):
    """Normalised model output -> raw state delta."""
    raw = denormalize(out_norm, delta_norm)
    return ops.add(raw, DELTA_OFFSET) if ops.is_taped(raw) else value_of(raw) + DELTA_OFFSET


def encode_delta(delta) -> np.ndarray:
    return np.asarray(delta, dtype=np.float64) - DELTA_OFFSET


def _mask_fixed(template: SystemTemplate, delta):
    """Fixed bodies (the world anchor) never move."""
    if template.movable.all():
        return delta
    m = template.movable[:, None].astype(np.float64)
    keep = (1.0 - m) * DELTA_OFFSET
    if ops.is_taped(delta):
        return ops.add(ops.mul(delta, m), keep)
    return value_of(delta) * m + keep


def _step_with_static(model: ForwardModel, static: Graph, template: SystemTemplate, states, actions, params=None):
    if model.arch.recenter:
        states, offset = recenter(states, template.static.node_graph)
    dynamic = template.dynamic(states, actions)
    delta = decode_delta(model.out_norm, model.delta_norm(static, dynamic, params))
    nxt = apply_delta(states, _mask_fixed(template, delta))
    if model.arch.recenter:
        nxt = uncenter(nxt, offset)
    if not ops.is_taped(nxt) and not np.all(np.isfinite(value_of(nxt))):
        raise FloatingPointError("non-finite state predicted")
    return nxt


def predict_one_step(model: ForwardModel, template: SystemTemplate, states, actions, params=None):
    """Next system state from the current one and the per-actuator actions."""
    return _step_with_static(model, template.static, template, states, actions, params)


def predict_with_sysid(model: ForwardModel, g_id: Graph, template: SystemTemplate, states, actions, params=None):
    """As :func:`predict_one_step` with an inferred static graph."""
    if not g_id.same_structure(template.static):
        raise ValueError("G_ID structure does not match the system graph")
    return _step_with_static(model, g_id, template, states, actions, params)


# -- recurrent forward model ------------------------------------------------------


@dataclass(frozen=True)
class RecurrentArch:
    input_widths: Widths
    hidden: int = 20
    latent: int = 128
    edge_hidden: tuple = (256, 256, 256)
    node_hidden: tuple = (128, 128)
    global_hidden: tuple = (128, 128)
    out_widths: Widths = (0, STATE_WIDTH, 0)

    def __post_init__(self):
        for name in ("input_widths", "out_widths", "edge_hidden", "node_hidden", "global_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    @property
    def hidden_widths(self) -> Widths:
        return (self.hidden,) * 3

    def block(self) -> BlockSpec:
        w_in = tuple(a + self.hidden for a in self.input_widths)
        og, on, oe = self.out_widths
        return BlockSpec(
            w_in,
            (og, on, oe or self.latent),
            self.edge_hidden,
            self.node_hidden,
            self.global_hidden,
            update_globals=og > 0,
        )


def init_recurrent_params(rng, arch: RecurrentArch, prefix: str = "rnn") -> dict:
    params = {}
    for part, width in zip(("global", "node", "edge"), arch.input_widths):
        params.update(init_gru(rng, width, arch.hidden, f"{prefix}/gru_{part}"))
    params.update(init_block(rng, arch.block(), f"{prefix}/gn"))
    return params


def recurrent_step(params, arch: RecurrentArch, g_in: Graph, hidden: Graph, prefix: str = "rnn"):
    """GRUs update the hidden graph group-wise, then a GN reads concat(input, hidden')."""
    if not g_in.same_structure(hidden):
        raise ValueError("hidden graph structure differs from the input graph")
    new_hidden = hidden.with_features(
        gru_step(params, g_in.globals, hidden.globals, f"{prefix}/gru_global"),
        gru_step(params, g_in.nodes, hidden.nodes, f"{prefix}/gru_node"),
        gru_step(params, g_in.edges, hidden.edges, f"{prefix}/gru_edge"),
    )
    out = gn_block(params, arch.block(), graph_concat(g_in, new_hidden), f"{prefix}/gn")
    return out, new_hidden


@dataclass
class RecurrentModel:
    arch: RecurrentArch
    params: dict
    dyn_norm: GraphNormalizer
    static_norm: GraphNormalizer
    out_norm: NormStats
    static_widths: Widths = (0, 0, 0)
    prefix: str = "rnn"

    @classmethod
    def create(cls, arch: RecurrentArch, static_widths: Widths, seed: int = 0) -> RecurrentModel:
        rng = np.random.default_rng(seed)
        dyn = tuple(a - b for a, b in zip(arch.input_widths, static_widths))
        return cls(
            arch,
            init_recurrent_params(rng, arch),
            GraphNormalizer.empty(dyn, INPUT_EPS),
            GraphNormalizer.empty(static_widths, INPUT_EPS),
            NormStats.empty(STATE_WIDTH),
            tuple(static_widths),
        )

    def initial_hidden(self, template: SystemTemplate) -> Graph:
        return zeros_like_structure(template.static, self.arch.hidden_widths)

    def step(self, template: SystemTemplate, states, actions, hidden: Graph, params=None):
        """Returns (next states, normalised delta, new hidden)."""
        p = self.params if params is None else params
        static = template.static if any(self.static_widths) else zeros_like_structure(template.static, (0, 0, 0))
        g_in = graph_concat(self.static_norm.normalize(static), self.dyn_norm.normalize(template.dynamic(states, actions)))
        out, hidden = recurrent_step(p, self.arch, g_in, hidden, self.prefix)
        delta = _mask_fixed(template, decode_delta(self.out_norm, out.nodes))
        return apply_delta(states, delta), out.nodes, hidden

    def to_arrays(self) -> dict:
        arrays = dict(self.params)
        arrays.update(self.dyn_norm.to_arrays("norm/dynamic"))
        arrays.update(self.static_norm.to_arrays("norm/static"))
        arrays.update(self.out_norm.to_arrays("norm/output"))
        return arrays


# -- system identification ----------------------------------------------------------


LATENT_STATIC = 10


@dataclass(frozen=True)
class SysIdArch:
    """Recurrent inference core (GRUs, then a GN) feeding a forward model.

    The core has the same wiring as :class:`RecurrentArch` over the dynamic
    graph, with a ``latent_static``-wide output for every group.
    """

    dynamic_widths: Widths
    latent_static: int = LATENT_STATIC
    hidden: int = 20
    forward: ForwardArch = field(default=None)
    edge_hidden: tuple = (256, 256, 256)
    node_hidden: tuple = (128, 128)
    global_hidden: tuple = (128, 128)

    def __post_init__(self):
        for name in ("dynamic_widths", "edge_hidden", "node_hidden", "global_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.forward is None:
            object.__setattr__(
                self, "forward", ForwardArch((self.latent_static,) * 3, self.dynamic_widths, latent_static=True)
            )
        if self.forward.static_widths != (self.latent_static,) * 3 or not self.forward.latent_static:
            raise ValueError("forward model must read a latent static graph of the inference width")

    @property
    def hidden_widths(self) -> Widths:
        return (self.hidden,) * 3

    @property
    def core(self) -> RecurrentArch:
        return RecurrentArch(
            self.dynamic_widths,
            self.hidden,
            self.latent_static,
            self.edge_hidden,
            self.node_hidden,
            self.global_hidden,
            out_widths=(self.latent_static,) * 3,
        )


def sysid_core_step(params, arch: SysIdArch, g_dyn_norm: Graph, hidden: Graph, prefix: str = "sysid"):
    """One recurrent step over the normalised dynamic graph; returns (G*, G_h*)."""
    return recurrent_step(params, arch.core, g_dyn_norm, hidden, prefix)


@dataclass
class SysIdModel:
    arch: SysIdArch
    params: dict  # both the inference core ("sysid/...") and the forward model ("fwd/...")
    forward: ForwardModel
    prefix: str = "sysid"

    @classmethod
    def create(cls, arch: SysIdArch, seed: int = 0) -> SysIdModel:
        rng = np.random.default_rng(seed)
        core = init_recurrent_params(rng, arch.core, "sysid")
        fwd = ForwardModel.create(arch.forward, seed=int(rng.integers(2**31)))
        return cls(arch, {**core, **fwd.params}, fwd)

    def sync(self) -> SysIdModel:
        """Propagate ``params`` into the embedded forward model."""
        self.forward = replace(self.forward, params={k: v for k, v in self.params.items() if k.startswith("fwd/")})
        return self

    def to_arrays(self) -> dict:
        arrays = self.forward.to_arrays()
        arrays.update(self.params)
        return arrays


def sysid_encode(model: SysIdModel, template: SystemTemplate, states_seq, actions_seq, params=None) -> Graph:
    """Fold an observed (state, action) sequence into the inferred static graph G_ID."""
    states_seq = value_of(states_seq)
    if len(states_seq) < 1 or len(states_seq) != len(actions_seq):
        raise ValueError("ID phase needs T >= 1 states with one action vector each")
    p = model.params if params is None else params
    hidden = zeros_like_structure(template.static, model.arch.hidden_widths)
    out = None
    for states, actions in zip(states_seq, actions_seq):
        if states.shape[0] != template.static.num_nodes:
            raise ValueError("ID-phase state does not match the system structure")
        g_dyn = model.forward.dyn_norm.normalize(template.dynamic(states, actions))
        out, hidden = sysid_core_step(p, model.arch, g_dyn, hidden, model.prefix)
    return out


def sysid_predict(model: SysIdModel, g_id: Graph, template: SystemTemplate, states, actions, params=None):
    """One-step prediction of the embedded forward model from ``g_id``."""
    return predict_with_sysid(model.forward, g_id, template, states, actions, params)
