"""Stacked episode storage and vectorised batch assembly."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from ..graphs import Graph, SystemTemplate
from ..sim.graphs import system_template


class EpisodeTable:
    """Episodes of one topology and length, stacked for fast indexing."""

    def __init__(self, episodes):
        episodes = list(episodes)
        if not episodes:
            raise ValueError("empty episode table")
        ref = episodes[0]
        key = ref.spec.topology()
        for ep in episodes:
            if ep.spec.topology() != key or len(ep) != len(ref):
                raise ValueError("an episode table needs one topology and one episode length")
        self.episodes = episodes
        self.specs = [ep.spec for ep in episodes]
        self.states = np.stack([ep.states for ep in episodes])  # (E, L, N, 13)
        self.actions = np.stack([ep.actions for ep in episodes])  # (E, L, A)
        templates = [system_template(ep.spec) for ep in episodes]
        t0 = templates[0]
        self.g_static = np.concatenate([t.static.globals for t in templates])  # (E, Fg)
        self.n_static = np.stack([t.static.nodes for t in templates])  # (E, N, Fn)
        self.e_static = np.stack([t.static.edges for t in templates])  # (E, Ne, Fe)
        self.senders = t0.static.senders
        self.receivers = t0.static.receivers
        self.action_map = t0.action_map
        self.movable = t0.movable
        self._maps: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.episodes)

    @property
    def length(self) -> int:
        return self.states.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.states.shape[2]

    @property
    def num_actuators(self) -> int:
        return self.actions.shape[2]

    def template(self, ep_idx) -> SystemTemplate:
        """Batched template for the episodes ``ep_idx`` (repeats allowed)."""
        ep_idx = np.asarray(ep_idx, dtype=np.int64)
        B, N, Ne = len(ep_idx), self.num_nodes, len(self.senders)
        offs = np.repeat(np.arange(B) * N, Ne)
        static = Graph(
            self.g_static[ep_idx],
            self.n_static[ep_idx].reshape(B * N, -1),
            self.e_static[ep_idx].reshape(B * Ne, -1),
            np.tile(self.senders, B) + offs,
            np.tile(self.receivers, B) + offs,
            np.full(B, N),
            np.full(B, Ne),
        )
        if B not in self._maps:
            self._maps[B] = np.kron(np.eye(B), self.action_map)
        return SystemTemplate(static, self._maps[B], np.tile(self.movable, B))

    def states_at(self, ep_idx, t) -> np.ndarray:
        """(B * N, 13) states of episodes ``ep_idx`` at per-example times ``t``."""
        return self.states[ep_idx, t].reshape(-1, self.states.shape[-1])

    def actions_at(self, ep_idx, t) -> np.ndarray:
        return self.actions[ep_idx, t].reshape(-1)


def build_tables(episodes) -> list[EpisodeTable]:
    """Group episodes by topology and length, in first-seen order."""
    groups = defaultdict(list)
    for ep in episodes:
        groups[(ep.spec.topology(), len(ep))].append(ep)
    return [EpisodeTable(g) for g in groups.values()]


def split_batch(batch_size: int, num_tables: int) -> list[int]:
    """Round-robin slot counts so every table gets an equal share."""
    return [len(range(k, batch_size, num_tables)) for k in range(num_tables)]
