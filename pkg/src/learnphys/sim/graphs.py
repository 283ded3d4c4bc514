"""Static and dynamic graphs of a simulated system."""

from __future__ import annotations

import numpy as np

from ..graphs import Graph, SystemTemplate
from ..state import STATE_WIDTH
from .envs import HINGE, EnvSpec

STATIC_WIDTHS = (4, 4, 9)
DYNAMIC_WIDTHS = (0, STATE_WIDTH, 1)
GLOBAL_FEATURES = ("timestep", "gravity_x", "gravity_y", "gravity_z")
NODE_FEATURES = ("mass", "length", "inertia", "fixed")
EDGE_FEATURES = ("hinge", "slider", "axis_x", "axis_y", "axis_z", "gear", "damping", "direction", "motorized")


def edge_structure(spec: EnvSpec):
    """Joint k gives edge 2k (parent to child) and edge 2k+1 (child to parent)."""
    senders, receivers = [], []
    for j in spec.joints:
        senders += [j.parent, j.child]
        receivers += [j.child, j.parent]
    return np.array(senders, dtype=np.int64), np.array(receivers, dtype=np.int64)


def static_graph(spec: EnvSpec) -> Graph:
    g = np.array([[spec.timestep, *spec.gravity]])
    nodes = np.array([[b.mass, b.length, b.inertia, float(b.fixed)] for b in spec.bodies])
    edges = []
    for j in spec.joints:
        base = [float(j.kind == HINGE), float(j.kind != HINGE), *j.axis, j.gear, j.damping]
        edges.append(base + [1.0, float(j.actuated)])
        edges.append(base + [-1.0, float(j.actuated)])
    edges = np.array(edges).reshape(len(edges), STATIC_WIDTHS[2])
    s, r = edge_structure(spec)
    return Graph(g, nodes, edges, s, r, [spec.num_bodies], [len(s)])


def action_map(spec: EnvSpec) -> np.ndarray:
    amap = np.zeros((2 * len(spec.joints), spec.num_actuators))
    for a, k in enumerate(spec.actuated_joints):
        amap[2 * k, a] = amap[2 * k + 1, a] = 1.0
    return amap


def system_template(spec: EnvSpec) -> SystemTemplate:
    return SystemTemplate(static_graph(spec), action_map(spec), np.array([not b.fixed for b in spec.bodies]))


def to_graphs(spec: EnvSpec, states, actions) -> tuple[Graph, Graph]:
    template = system_template(spec)
    return template.static, template.dynamic(np.asarray(states, dtype=np.float64), np.asarray(actions, dtype=np.float64))


def parse_dynamic(dynamic: Graph) -> np.ndarray:
    """Body states carried by a dynamic graph."""
    return np.asarray(dynamic.nodes)[:, :STATE_WIDTH].copy()
