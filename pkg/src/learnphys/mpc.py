"""Gradient-based model-predictive control.

Action sequences are optimised by plain gradient descent on the negative
trajectory reward, with gradients obtained by backpropagating through a
rollout of a learned model (or, as the reference planner, by central finite
differences through the ground-truth simulator).  Planning never touches the
model's parameters or normaliser statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import ops
from .diffcore.tape import Tape, value_of
from .gn import predict_one_step
from .graphs import SystemTemplate
from .sim.envs import BatchSystem, EnvSpec
from .sim.graphs import system_template

REWARD_TAGS = ("pendulum-balance", "cartpole-balance", "chain-reach", "point-target")

# rotation taking the hanging rest pose to the inverted one
UPRIGHT = np.array([math.cos(-math.pi / 4), 0.0, math.sin(-math.pi / 4), 0.0])


@dataclass(frozen=True)
class RewardFn:
    tag: str
    body: int = 1
    target_quat: tuple = tuple(UPRIGHT)
    target_point: tuple = (0.0, 0.0, 0.0)
    shaping: float = 0.01

    def __post_init__(self):
        if self.tag not in REWARD_TAGS:
            raise ValueError(f"unknown reward tag {self.tag!r}; expected one of {REWARD_TAGS}")


def reward_for(tag: str, **kw) -> RewardFn:
    """Reward with the conventional body index for each environment."""
    defaults = {"pendulum-balance": 1, "cartpole-balance": 2, "chain-reach": 0, "point-target": 1}
    if tag not in defaults:
        raise ValueError(f"unknown reward tag {tag!r}; expected one of {REWARD_TAGS}")
    kw.setdefault("body", defaults[tag])
    return RewardFn(tag, **kw)


def quat_angle(q, target):
    """Rotation angle between ``q`` and a unit ``target``: 2 atan2(|sin|, |cos|)."""
    target = np.asarray(target, dtype=np.float64)
    d = ops.reduce_sum(ops.mul(q, target), axis=-1)
    n2 = ops.reduce_sum(ops.square(q), axis=-1)
    s = ops.sqrt(ops.relu(ops.sub(n2, ops.square(d))))
    return ops.scalar_mul(ops.atan2(s, ops.absolute(d)), 2.0)


def _body(state, b):
    return ops.rows(state, [b])


def step_reward(reward: RewardFn, prev, nxt, action=None):
    """Reward for one transition ``prev -> nxt`` of ``(bodies, 13)`` states."""
    b = reward.body
    if reward.tag in ("pendulum-balance", "cartpole-balance"):
        return ops.scalar_mul(ops.reduce_sum(quat_angle(ops.cols(_body(nxt, b), 3, 7), reward.target_quat)), -1.0)
    if reward.tag == "point-target":
        err = ops.sub(ops.cols(_body(nxt, b), 0, 3), np.asarray(reward.target_point))
        return ops.scalar_mul(ops.reduce_sum(ops.square(err)), -1.0)
    # chain-reach: progress of the head towards the target, minus a small
    # penalty on sideways motion
    p0 = value_of(prev)[b, 0:3]
    direction = np.asarray(reward.target_point) - p0
    norm = np.linalg.norm(direction)
    u = direction / norm if norm > 0 else np.zeros(3)
    disp = ops.sub(ops.cols(_body(nxt, b), 0, 3), ops.cols(_body(prev, b), 0, 3))
    along = ops.reduce_sum(ops.mul(disp, u))
    perp = ops.sub(disp, ops.mul(ops.reshape(along, (1, 1)), u[None]))
    return ops.sub(along, ops.scalar_mul(ops.reduce_sum(ops.square(perp)), reward.shaping))


def _scalar(x) -> float:
    return float(np.asarray(value_of(x)).reshape(()))


def trajectory_reward(reward: RewardFn, states, actions=None):
    """Sum of per-step rewards on the post-action states ``states[1:]``."""
    if len(states) < 2:
        raise ValueError("a trajectory needs at least two states")
    total = None
    for t in range(1, len(states)):
        r = step_reward(reward, states[t - 1], states[t], None if actions is None else actions[t - 1])
        total = r if total is None else ops.add(total, r)
    return total


# -- planning -------------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 20
    iterations: int = 10  # per replanning step
    warmup_iterations: int | None = None  # defaults to iterations * horizon
    step_size: float = 0.1
    clip: float = 1.0
    halving: bool = False
    reward: RewardFn = field(default_factory=lambda: reward_for("pendulum-balance"))

    def __post_init__(self):
        if self.horizon < 1 or self.iterations < 0:
            raise ValueError("horizon must be >= 1 and iterations >= 0")
        if self.step_size <= 0 or self.clip <= 0:
            raise ValueError("step_size and clip must be positive")

    @property
    def warmup(self) -> int:
        return self.iterations * self.horizon if self.warmup_iterations is None else self.warmup_iterations


@dataclass
class PlanResult:
    actions: np.ndarray  # (H, A)
    costs: list  # cost at the start of each iteration, plus the final one
    diverged_at: int | None = None


def model_step_fn(model, system) -> callable:
    """Step function ``(state, action) -> next`` for a learned forward model."""
    template = system if isinstance(system, SystemTemplate) else system_template(system)
    return lambda s, a: predict_one_step(model, template, s, a)


def model_objective(step_fn, reward: RewardFn, x0):
    """``actions -> (cost, d cost / d actions)`` by backpropagation through a rollout."""
    x0 = np.asarray(x0, dtype=np.float64)

    def objective(actions):
        tape = Tape()
        a = tape.param(actions, "actions")
        states = [x0]
        for t in range(actions.shape[0]):
            states.append(step_fn(states[-1], ops.reshape(ops.rows(a, [t]), (actions.shape[1],))))
        cost = ops.scalar_mul(trajectory_reward(reward, states), -1.0)
        value = float(value_of(cost).reshape(()))
        if not math.isfinite(value):
            raise FloatingPointError("non-finite planning cost")
        return value, tape.backward(cost)["actions"]

    return objective


def simulator_objective(spec: EnvSpec, reward: RewardFn, q0, qd0, h: float = 1e-5):
    """Reference objective: the true simulator with central-difference gradients."""
    q0, qd0 = np.asarray(q0, dtype=np.float64), np.asarray(qd0, dtype=np.float64)

    def costs(batch_actions):
        B = batch_actions.shape[0]
        system = BatchSystem([spec] * B)
        q, qd = np.repeat(q0[None], B, 0), np.repeat(qd0[None], B, 0)
        states = [system.cartesian(q, qd)]
        for t in range(batch_actions.shape[1]):
            q, qd = system.step(q, qd, batch_actions[:, t])
            states.append(system.cartesian(q, qd))
        return np.array([-_scalar(trajectory_reward(reward, [s[b] for s in states])) for b in range(B)])

    def objective(actions):
        H, A = actions.shape
        eye = np.eye(H * A).reshape(H * A, H, A) * h
        batch = np.concatenate([actions[None], actions[None] + eye, actions[None] - eye])
        c = costs(batch)
        if not np.all(np.isfinite(c)):
            raise FloatingPointError("non-finite planning cost")
        grad = ((c[1 : 1 + H * A] - c[1 + H * A :]) / (2 * h)).reshape(H, A)
        return float(c[0]), grad

    return objective


def optimize(objective, init_actions, iterations: int, cfg: PlanConfig) -> PlanResult:
    """Projected gradient descent on the actions, with optional step halving."""
    actions = np.clip(np.array(init_actions, dtype=np.float64), -cfg.clip, cfg.clip)
    if actions.ndim != 2:
        raise ValueError("actions must be (horizon, actuators)")
    step = cfg.step_size
    costs = []
    for it in range(iterations + 1):
        try:
            cost, grad = objective(actions)
        except FloatingPointError:
            return PlanResult(actions, costs, diverged_at=it)
        if cfg.halving and costs and cost > costs[-1]:
            step *= 0.5
        costs.append(cost)
        if it == iterations:
            break
        actions = np.clip(actions - step * grad, -cfg.clip, cfg.clip)
    return PlanResult(actions, costs)


def plan(model, reward: RewardFn, x0, init_actions, cfg: PlanConfig, system=None, iterations: int | None = None) -> PlanResult:
    """Optimise ``init_actions`` for a learned model (or a step function) from ``x0``."""
    step_fn = model if callable(model) else model_step_fn(model, system)
    n = cfg.iterations if iterations is None else iterations
    return optimize(model_objective(step_fn, reward, x0), init_actions, n, cfg)


# -- receding horizon -----------------------------------------------------------------------


@dataclass
class EpisodeResult:
    states: np.ndarray  # (T + 1, bodies, 13) executed in the true simulator
    actions: np.ndarray  # (T, A)
    rewards: np.ndarray  # (T,)
    plan_costs: list = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def to_rows(self):
        for t, (a, r) in enumerate(zip(self.actions, self.rewards)):
            yield {"step": t, "reward": float(r), **{f"action_{k}": float(v) for k, v in enumerate(a)}}


def _execute(spec, q0, qd0, choose, episode_len, reward):
    if episode_len < 1:
        raise ValueError("episode_len must be >= 1")
    system = BatchSystem([spec])
    q, qd = np.asarray(q0, dtype=np.float64)[None], np.asarray(qd0, dtype=np.float64)[None]
    states = [system.cartesian(q, qd)[0]]
    actions, rewards = [], []
    for t in range(episode_len):
        a = np.clip(np.asarray(choose(t, states[-1]), dtype=np.float64), -1.0, 1.0)
        q, qd = system.step(q, qd, a[None])
        states.append(system.cartesian(q, qd)[0])
        actions.append(a)
        rewards.append(_scalar(step_reward(reward, states[-2], states[-1])))
    return np.stack(states), np.stack(actions), np.array(rewards)


def receding_horizon(model, reward: RewardFn, spec: EnvSpec, x0, cfg: PlanConfig, episode_len: int,
                     init_actions=None, objective_for=None) -> EpisodeResult:
    """Plan, execute the first action in the true simulator, shift and repeat.

    ``x0`` is a ``(q, qd)`` pair of generalised coordinates.  ``objective_for``
    overrides the planning objective: it receives ``(state, q, qd)`` and returns
    an ``actions -> (cost, grad)`` callable (used for the simulator planner).
    """
    q0, qd0 = x0
    A = spec.num_actuators
    H = cfg.horizon
    current = np.zeros((H, A)) if init_actions is None else np.array(init_actions, dtype=np.float64)
    if current.shape != (H, A):
        raise ValueError(f"init_actions must be ({H}, {A}), got {current.shape}")
    step_fn = None if model is None else model_step_fn(model, spec)
    plan_costs = []
    system = BatchSystem([spec])
    coords = {"q": np.asarray(q0, dtype=np.float64)[None], "qd": np.asarray(qd0, dtype=np.float64)[None]}

    def choose(t, state):
        nonlocal current
        n = cfg.warmup if t == 0 else cfg.iterations
        if n > 0:
            if objective_for is not None:
                obj = objective_for(state, coords["q"][0], coords["qd"][0])
            else:
                obj = model_objective(step_fn, reward, state)
            res = optimize(obj, current, n, cfg)
            current = res.actions
            plan_costs.append(res.costs)
        first = current[0].copy()
        current = np.concatenate([current[1:], np.zeros((1, A))])
        coords["q"], coords["qd"] = system.step(coords["q"], coords["qd"], np.clip(first, -1, 1)[None])
        return first

    states, actions, rewards = _execute(spec, q0, qd0, choose, episode_len, reward)
    return EpisodeResult(states, actions, rewards, plan_costs)


def random_policy(spec: EnvSpec, reward: RewardFn, x0, episode_len: int, seed) -> EpisodeResult:
    """Uniform random actions in [-1, 1]; the baseline for planning."""
    rng = np.random.default_rng(seed)
    q0, qd0 = x0
    choose = lambda t, s: rng.uniform(-1.0, 1.0, spec.num_actuators)
    return EpisodeResult(*_execute(spec, q0, qd0, choose, episode_len, reward))


def simulator_planner(spec: EnvSpec, reward: RewardFn, h: float = 1e-5):
    """``objective_for`` hook planning through the true simulator."""
    return lambda state, q, qd: simulator_objective(spec, reward, q, qd, h)
