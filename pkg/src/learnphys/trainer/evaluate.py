"""Predictors, rollouts and the error-ratio evaluation harness."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from ..gn import RecurrentModel, SysIdModel, predict_one_step, predict_with_sysid, sysid_encode
from ..sim.envs import BatchSystem, rest_state, simulate
from ..state import GROUPS, error_metrics
from .tables import EpisodeTable, build_tables


def rollout(step, initial, actions) -> np.ndarray:
    """Feed predictions back ``len(actions)`` times; returns (T + 1, ...) states."""
    if len(actions) < 1:
        raise ValueError("rollout horizon must be >= 1")
    traj = [np.asarray(initial, dtype=np.float64)]
    for t, a in enumerate(actions):
        nxt = step(traj[-1], a)
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError(f"non-finite prediction at rollout step {t + 1}")
        traj.append(nxt)
    return np.stack(traj)


# -- predictors ---------------------------------------------------------------------
#
# ``bind(table, ep_idx, start)`` returns a step function for the stacked states
# of the selected episodes, the window starting at time ``start``.


class ConstantPredictor:
    name = "constant"
    warmup = 0

    def bind(self, table, ep_idx, start):
        return lambda s, a: s


class OraclePredictor:
    """Ground-truth simulator, round-tripping through generalised coordinates."""

    name = "oracle"
    warmup = 0

    def bind(self, table, ep_idx, start):
        system = BatchSystem([table.specs[i] for i in ep_idx])
        B, N = len(ep_idx), table.num_nodes

        def step(s, a):
            q, qd = system.generalized(s.reshape(B, N, -1))
            q, qd = system.step(q, qd, a.reshape(B, -1))
            return system.cartesian(q, qd).reshape(B * N, -1)

        return step


@dataclass
class ModelPredictor:
    """Feed-forward GN or MLP baseline with the true static graph."""

    model: object
    name: str = "gn"
    warmup: int = 0

    def bind(self, table, ep_idx, start):
        template = table.template(ep_idx)
        return lambda s, a: predict_one_step(self.model, template, s, a)


@dataclass
class RecurrentPredictor:
    model: RecurrentModel
    name: str = "gn-recurrent"
    warmup: int = 0

    def bind(self, table, ep_idx, start):
        template = table.template(ep_idx)
        hidden = [self.model.initial_hidden(template)]

        def step(s, a):
            nxt, _, hidden[0] = self.model.step(template, s, a, hidden[0])
            return nxt

        return step


ID_MODES = ("matched", "mismatched", "zero-action")


@dataclass
class SysIdPredictor:
    """Inference model whose ID phase is the ``window`` steps before ``start``.

    ``mismatched`` takes each episode's ID phase from the next episode in the
    batch; ``zero-action`` simulates ``window`` unactuated steps from rest.
    """

    model: SysIdModel
    id_mode: str = "matched"
    window: int = 20
    name: str = "gn-sysid"

    def __post_init__(self):
        if self.id_mode not in ID_MODES:
            raise ValueError(f"unknown ID mode {self.id_mode!r}")

    @property
    def warmup(self) -> int:
        return self.window

    def id_phase(self, table: EpisodeTable, ep_idx, start):
        W = self.window
        if self.id_mode == "zero-action":
            specs = [table.specs[i] for i in ep_idx]
            system = BatchSystem(specs)
            rest = [rest_state(s) for s in specs]
            q = np.stack([r[0] for r in rest])
            qd = np.stack([r[1] for r in rest])
            actions = np.zeros((len(ep_idx), W, table.num_actuators))
            states, _ = simulate(system, q, qd, actions)
            return states.transpose(1, 0, 2, 3), actions.transpose(1, 0, 2)
        if start < W:
            raise ValueError(f"window start {start} leaves no room for a {W}-step ID phase")
        src = np.asarray(ep_idx)
        if self.id_mode == "mismatched":
            src = np.roll(src, -1)
        states = table.states[src, start - W : start].transpose(1, 0, 2, 3)
        actions = table.actions[src, start - W : start].transpose(1, 0, 2)
        return states, actions

    def encode(self, table, ep_idx, start):
        template = table.template(ep_idx)
        states, actions = self.id_phase(table, ep_idx, start)
        B = len(ep_idx)
        g_id = sysid_encode(
            self.model, template, states.reshape(len(states), B * table.num_nodes, -1), actions.reshape(len(actions), -1)
        )
        return template, g_id.numpy()

    def bind(self, table, ep_idx, start):
        template, g_id = self.encode(table, ep_idx, start)
        return lambda s, a: predict_with_sysid(self.model.forward, g_id, template, s, a)


# -- evaluation -----------------------------------------------------------------------


KINDS = ("one-step", "rollout")


@dataclass
class EvalReport:
    predictor: str
    horizon: int
    episodes: list = field(default_factory=list)  # per episode: {"index", "one-step": metrics, "rollout": metrics}
    summary: dict = field(default_factory=dict)
    step: int = 0
    wall_clock: float = 0.0

    def value(self, kind: str = "rollout", group: str = "average", stat: str = "median") -> float:
        return self.summary[kind][group][stat]

    def to_json(self) -> str:
        return json.dumps(
            {"predictor": self.predictor, "horizon": self.horizon, "step": self.step, "wall_clock": self.wall_clock,
             "summary": self.summary, "episodes": self.episodes},
            sort_keys=True,
            indent=1,
        )

    COLUMNS = ("kind", "statistic", "average", *GROUPS)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for kind in KINDS:
            for stat in ("median", "mean"):
                w.writerow([kind, stat, *(repr(self.summary[kind][g][stat]) for g in ("average", *GROUPS))])
        return buf.getvalue()


def _summarise(per_episode):
    out = {}
    for kind in KINDS:
        out[kind] = {}
        for group in ("average", *GROUPS):
            vals = np.array(
                [ep[kind]["average"] if group == "average" else ep[kind]["ratios"][group] for ep in per_episode]
            )
            vals = vals[np.isfinite(vals)]
            out[kind][group] = {
                "median": float(np.median(vals)) if len(vals) else float("nan"),
                "mean": float(np.mean(vals)) if len(vals) else float("nan"),
            }
    return out


def evaluate(predictor, episodes, horizon: int | None = None, start: int | None = None, max_episodes: int | None = None) -> EvalReport:
    """One-step and rollout error ratios over a window of every episode.

    The window starts at ``start`` (default: the predictor's warm-up, e.g. the
    ID phase) and spans ``horizon`` transitions (default: the rest of the
    episode).  One-step predictions are made from true states in sequence, so
    recurrent predictors are teacher-forced.
    """
    t0 = time.perf_counter()
    episodes = list(episodes)[:max_episodes]
    start = getattr(predictor, "warmup", 0) if start is None else start
    position = {id(ep): k for k, ep in enumerate(episodes)}
    per_episode = []
    used_h = 0
    for table in build_tables(episodes):
        H = table.length - 1 - start if horizon is None else horizon
        if H < 1 or start + H >= table.length:
            raise ValueError(f"episodes of length {table.length} cannot hold a {H}-step window at {start}")
        used_h = H
        ep_idx = np.arange(len(table))
        B, N = len(ep_idx), table.num_nodes
        true = table.states[:, start : start + H + 1]  # (B, H+1, N, 13)
        acts = table.actions[:, start : start + H].transpose(1, 0, 2).reshape(H, -1)
        step = predictor.bind(table, ep_idx, start)
        one = [true[:, 0].reshape(B * N, -1)]
        for t in range(H):
            one.append(step(true[:, t].reshape(B * N, -1), acts[t]))
        one = np.stack(one).reshape(H + 1, B, N, -1)
        step = predictor.bind(table, ep_idx, start)
        roll = rollout(step, true[:, 0].reshape(B * N, -1), acts).reshape(H + 1, B, N, -1)
        for b, i in enumerate(ep_idx):
            truth = true[b]
            per_episode.append(
                {
                    "index": position[id(table.episodes[i])],
                    "one-step": error_metrics(one[:, b], truth, "one-step"),
                    "rollout": error_metrics(roll[:, b], truth, "rollout"),
                }
            )
    per_episode.sort(key=lambda e: e["index"])
    return EvalReport(getattr(predictor, "name", "model"), used_h, per_episode, _summarise(per_episode), 0, time.perf_counter() - t0)
