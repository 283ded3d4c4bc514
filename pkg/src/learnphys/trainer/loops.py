"""Training loops for the one-step, recurrent, inference and MLP models.

Each model family is wrapped in a small task object that knows how to draw a
batch, how to score it on a tape and how to validate.  A single driver,
:func:`run`, owns the optimiser, the learning-rate schedule, early stopping
and resumable state, so every family trains under the same rules.
"""

from __future__ import annotations

import copy
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..diffcore import ops
from ..diffcore.optim import AdamState, adam_step, clip_global_norm, decayed_lr, global_norm
from ..diffcore.tape import Tape
from ..gn import (
    ForwardArch,
    ForwardModel,
    RecurrentArch,
    RecurrentModel,
    SysIdArch,
    SysIdModel,
    encode_delta,
    sysid_encode,
)
from ..graphs import batch_templates, zeros_like_structure
from ..normalize import normalize
from ..sim.graphs import DYNAMIC_WIDTHS, STATIC_WIDTHS, edge_structure
from ..state import QUAT, STATE_WIDTH, dynamics_loss, infer_delta, quat_normalize, recenter
from .evaluate import ModelPredictor, RecurrentPredictor, SysIdPredictor, evaluate
from .mlp import MlpArch, MlpModel
from .tables import build_tables, split_batch


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 50_000
    batch_size: int = 200
    lr: float = 1e-4
    decay: float = 0.975
    decay_interval: int = 50_000
    clip_norm: float = 1.0
    noise_scale: float = 1e-3
    eval_interval: int = 1000
    eval_episodes: int = 64
    eval_horizon: int = 20
    patience: int = 0  # evaluations without improvement before stopping; 0 disables
    seed: int = 0
    mode: str = "two-gn-skip"
    id_window: int = 20
    sequence_length: int = 21

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        for name in ("batch_size", "lr", "decay_interval", "clip_norm", "eval_interval", "eval_episodes",
                     "eval_horizon", "id_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.noise_scale < 0 or self.patience < 0:
            raise ValueError("noise_scale and patience must be >= 0")
        if self.sequence_length < 2:
            raise ValueError("sequence_length must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    step: int = 0
    adam: AdamState = field(default_factory=AdamState)
    rng_state: dict | None = None
    history: list = field(default_factory=list)  # {"step", "loss", "lr", "grad_norm"}
    evals: list = field(default_factory=list)  # {"step", "metric", "wall_clock"}
    best_metric: float = float("inf")
    best_step: int = -1
    stale: int = 0


@dataclass
class TrainResult:
    model: object  # best-validation model when validation ran, else the last one
    last: object
    state: TrainState
    stopped_early: bool = False
    wall_clock: float = 0.0

    @property
    def losses(self) -> list[float]:
        return [h["loss"] for h in self.state.history]


def _seeds(seed: int):
    init, sample = np.random.SeedSequence(seed).spawn(2)
    return int(init.generate_state(1)[0]), np.random.default_rng(sample)


# -- shared batch helpers ------------------------------------------------------------


def _noised(states, movable, std, rng, scale):
    """Gaussian dislocation noise on movable bodies; quaternions are renormalised."""
    if scale == 0:
        return states.copy()
    noise = rng.normal(size=states.shape) * scale * std * movable[:, None]
    out = states + noise
    out[:, QUAT] = quat_normalize(out[:, QUAT])
    return out


def _static_for(widths, static):
    return static if any(widths) else zeros_like_structure(static, (0, 0, 0))


def _draw(tables, batch_size, rng):
    """Round-robin (table, episode indices) pairs so each table gets an equal share."""
    out = []
    for table, k in zip(tables, split_batch(batch_size, len(tables))):
        if k:
            out.append((table, rng.integers(len(table), size=k)))
    return out


@dataclass
class Batch:
    static: object
    dynamic: object
    target: np.ndarray  # normalised targets on movable rows
    rows: np.ndarray  # movable row indices
    extra: dict = field(default_factory=dict)


class _Task:
    model: object
    valid: list
    cfg: TrainConfig
    name = "gn"

    @property
    def params(self) -> dict:
        return self.model.params

    @params.setter
    def params(self, value):
        self.model.params = value

    def snapshot(self):
        return copy.deepcopy(self.model)

    def predictor(self):
        return ModelPredictor(self.model, self.name)

    def validate(self) -> float:
        report = evaluate(self.predictor(), self.valid, horizon=self.cfg.eval_horizon, max_episodes=self.cfg.eval_episodes)
        return report.value("rollout", "average", "mean")


def _one_step_inputs(model, table, ep, t, rng, cfg):
    """Noised input states, clean next states and the template for one draw."""
    template = table.template(ep)
    states = table.states[ep, t].reshape(-1, STATE_WIDTH)
    nxt = table.states[ep, t + 1].reshape(-1, STATE_WIDTH)
    actions = table.actions[ep, t].reshape(-1)
    std = model.out_norm.std if model.out_norm.active else np.zeros(STATE_WIDTH)
    noisy = _noised(states, template.movable, std, rng, cfg.noise_scale)
    return template, noisy, nxt, actions


class OneStepTask(_Task):
    """Feed-forward model (GN or flattened MLP) with the true static graph."""

    def __init__(self, model: ForwardModel, tables, valid, cfg: TrainConfig, name: str = "gn"):
        self.model, self.tables, self.valid, self.cfg, self.name = model, tables, valid, cfg, name

    def prepare(self, rng, batch_size) -> Batch:
        m = self.model
        templates, states, targets, actions = [], [], [], []
        for table, ep in _draw(self.tables, batch_size, rng):
            t = rng.integers(table.length - 1, size=len(ep))
            template, noisy, nxt, act = _one_step_inputs(m, table, ep, t, rng, self.cfg)
            templates.append(template)
            states.append(noisy)
            # the target leads from the dislocated input back to the true next state
            targets.append(encode_delta(infer_delta(noisy, nxt)))
            actions.append(act)
        template = batch_templates(templates) if len(templates) > 1 else templates[0]
        states, targets, actions = np.concatenate(states), np.concatenate(targets), np.concatenate(actions)
        if m.arch.recenter:
            states, _ = recenter(states, template.static.node_graph)
        static = _static_for(m.arch.static_widths, template.static)
        dynamic = template.dynamic(states, actions)
        rows = np.flatnonzero(template.movable)
        # statistics first, then the normalised forward pass
        m.dyn_norm = m.dyn_norm.accumulate(dynamic)
        m.static_norm = m.static_norm.accumulate(static)
        m.out_norm = m.out_norm.accumulate(targets[rows])
        return Batch(static, dynamic, normalize(m.out_norm, targets[rows]), rows)

    def loss(self, params, batch: Batch):
        pred = self.model.delta_norm(batch.static, batch.dynamic, params)
        return dynamics_loss(ops.rows(pred, batch.rows), batch.target, self.model.out_norm)


class SysIdTask(_Task):
    """Inference core and forward model trained end to end."""

    name = "gn-sysid"

    def __init__(self, model: SysIdModel, tables, valid, cfg: TrainConfig):
        W = cfg.id_window
        for table in tables:
            if table.length < W + 1:
                raise ValueError(f"episodes of length {table.length} are shorter than the ID window + 1 ({W + 1})")
        self.model, self.tables, self.valid, self.cfg = model, tables, valid, cfg

    @property
    def params(self):
        return self.model.params

    @params.setter
    def params(self, value):
        self.model.params = value
        self.model.sync()

    def predictor(self):
        return SysIdPredictor(self.model, "matched", self.cfg.id_window)

    def prepare(self, rng, batch_size) -> Batch:
        fwd = self.model.forward
        W = self.cfg.id_window
        templates, states, targets, actions, id_states, id_actions = [], [], [], [], [], []
        for table, ep in _draw(self.tables, batch_size, rng):
            k = len(ep)
            s0 = rng.integers(table.length - W + 1, size=k)
            # the prediction step is drawn from the whole episode and may overlap the ID window
            t = rng.integers(table.length - 1, size=k)
            window = s0[:, None] + np.arange(W)
            id_states.append(table.states[ep[:, None], window].transpose(1, 0, 2, 3).reshape(W, -1, STATE_WIDTH))
            id_actions.append(table.actions[ep[:, None], window].transpose(1, 0, 2).reshape(W, -1))
            template, noisy, nxt, act = _one_step_inputs(fwd, table, ep, t, rng, self.cfg)
            templates.append(template)
            states.append(noisy)
            targets.append(encode_delta(infer_delta(noisy, nxt)))
            actions.append(act)
        template = batch_templates(templates) if len(templates) > 1 else templates[0]
        states, targets, actions = np.concatenate(states), np.concatenate(targets), np.concatenate(actions)
        id_states = np.concatenate(id_states, axis=1)
        id_actions = np.concatenate(id_actions, axis=1)
        if fwd.arch.recenter:
            states, _ = recenter(states, template.static.node_graph)
        dynamic = template.dynamic(states, actions)
        rows = np.flatnonzero(template.movable)
        fwd.dyn_norm = fwd.dyn_norm.accumulate(dynamic)
        fwd.out_norm = fwd.out_norm.accumulate(targets[rows])
        target = normalize(fwd.out_norm, targets[rows])
        return Batch(template.static, dynamic, target, rows, {"template": template, "id": (id_states, id_actions)})

    def loss(self, params, batch: Batch):
        id_states, id_actions = batch.extra["id"]
        g_id = sysid_encode(self.model, batch.extra["template"], id_states, id_actions, params)
        fwd = self.model.forward
        pred = fwd.delta_norm(g_id, batch.dynamic, params)
        return dynamics_loss(ops.rows(pred, batch.rows), batch.target, fwd.out_norm)


class RecurrentTask(_Task):
    """Teacher-forced training on fixed-length subsequences; loss summed over time."""

    name = "gn-recurrent"

    def __init__(self, model: RecurrentModel, tables, valid, cfg: TrainConfig):
        S = cfg.sequence_length
        for table in tables:
            if table.length < S:
                raise ValueError(f"episodes of length {table.length} are shorter than the sequence length {S}")
        self.model, self.tables, self.valid, self.cfg = model, tables, valid, cfg

    def predictor(self):
        return RecurrentPredictor(self.model)

    def prepare(self, rng, batch_size) -> Batch:
        m = self.model
        S = self.cfg.sequence_length
        std = m.out_norm.std if m.out_norm.active else np.zeros(STATE_WIDTH)
        templates, seqs, acts = [], [], []
        for table, ep in _draw(self.tables, batch_size, rng):
            s0 = rng.integers(table.length - S + 1, size=len(ep))
            window = s0[:, None] + np.arange(S)
            templates.append(table.template(ep))
            seqs.append(table.states[ep[:, None], window].transpose(1, 0, 2, 3).reshape(S, -1, STATE_WIDTH))
            acts.append(table.actions[ep[:, None], window].transpose(1, 0, 2).reshape(S, -1))
        template = batch_templates(templates) if len(templates) > 1 else templates[0]
        seq, act = np.concatenate(seqs, axis=1), np.concatenate(acts, axis=1)
        inputs, targets = [], []
        for t in range(S - 1):
            noisy = _noised(seq[t], template.movable, std, rng, self.cfg.noise_scale)
            inputs.append(noisy)
            targets.append(encode_delta(infer_delta(noisy, seq[t + 1])))
        rows = np.flatnonzero(template.movable)
        static = _static_for(m.static_widths, template.static)
        m.static_norm = m.static_norm.accumulate(static)
        for t in range(S - 1):
            m.dyn_norm = m.dyn_norm.accumulate(template.dynamic(inputs[t], act[t]))
        m.out_norm = m.out_norm.accumulate(np.concatenate([d[rows] for d in targets]))
        norm_targets = [normalize(m.out_norm, d[rows]) for d in targets]
        return Batch(static, None, np.stack(norm_targets), rows, {"template": template, "inputs": inputs, "actions": act})

    def loss(self, params, batch: Batch):
        m, template = self.model, batch.extra["template"]
        hidden = m.initial_hidden(template)
        total = None
        for t, states in enumerate(batch.extra["inputs"]):
            _, pred, hidden = m.step(template, states, batch.extra["actions"][t], hidden, params)
            term = dynamics_loss(ops.rows(pred, batch.rows), batch.target[t], m.out_norm)
            total = term if total is None else ops.add(total, term)
        return total


# -- driver -------------------------------------------------------------------------------


def run(task, cfg: TrainConfig, state: TrainState | None = None, on_eval=None) -> TrainResult:
    """Adam with global-norm clipping, staircase decay and best-validation tracking.

    ``state`` resumes a previous run (the task's model must hold the matching
    parameters and statistics).  ``on_eval(step, metric, improved)`` is called
    after every validation.
    """
    t0 = time.perf_counter()
    if state is None:
        state = TrainState(adam=AdamState(lr=cfg.lr))
        rng = _seeds(cfg.seed)[1]
    else:
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
    best = None
    stopped = False
    while state.step < cfg.steps:
        batch = task.prepare(rng, cfg.batch_size)
        tape = Tape()
        leaves = tape.params(task.params)
        loss = task.loss(leaves, batch)
        value = float(loss.value.reshape(()))
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss {value} at step {state.step} ({task.name})")
        grads = tape.backward(loss)
        gnorm = global_norm(grads)
        grads = clip_global_norm(grads, cfg.clip_norm)
        lr = decayed_lr(cfg.lr, state.step, cfg.decay, cfg.decay_interval)
        task.params, state.adam = adam_step(state.adam, task.params, grads, lr)
        state.step += 1
        state.history.append({"step": state.step, "loss": value, "lr": lr, "grad_norm": gnorm})
        if state.step % cfg.eval_interval == 0 or state.step == cfg.steps:
            metric = float(task.validate())
            improved = metric < state.best_metric
            state.evals.append({"step": state.step, "metric": metric, "wall_clock": time.perf_counter() - t0})
            if improved:
                state.best_metric, state.best_step, state.stale = metric, state.step, 0
                best = task.snapshot()
            else:
                state.stale += 1
            if on_eval is not None:
                on_eval(state.step, metric, improved)
            if cfg.patience and state.stale >= cfg.patience:
                stopped = True
                break
    state.rng_state = rng.bit_generator.state
    last = task.model
    return TrainResult(best if best is not None else last, last, state, stopped, time.perf_counter() - t0)


# -- entry points ----------------------------------------------------------------------------


def _split(dataset):
    """Accept ``(train, valid)`` or a dict with those keys."""
    if isinstance(dataset, dict):
        return list(dataset["train"]), list(dataset.get("valid", []))
    train, valid = dataset
    return list(train), list(valid)


def _check_valid(valid):
    if not valid:
        raise ValueError("a validation split is required for early stopping")


def default_forward_arch(mode="two-gn-skip", static_widths=None, **kw) -> ForwardArch:
    return ForwardArch(STATIC_WIDTHS if static_widths is None else static_widths, DYNAMIC_WIDTHS, mode, **kw)


def train_one_step(cfg: TrainConfig, dataset, arch: ForwardArch | None = None, state=None, model=None, on_eval=None):
    train, valid = _split(dataset)
    _check_valid(valid)
    arch = arch or default_forward_arch(cfg.mode)
    if model is None:
        model = ForwardModel.create(arch, seed=_seeds(cfg.seed)[0])
    return run(OneStepTask(model, build_tables(train), valid, cfg), cfg, state, on_eval)


def train_sysid(cfg: TrainConfig, dataset, arch: SysIdArch | None = None, state=None, model=None, on_eval=None):
    train, valid = _split(dataset)
    _check_valid(valid)
    arch = arch or SysIdArch(DYNAMIC_WIDTHS)
    if model is None:
        model = SysIdModel.create(arch, seed=_seeds(cfg.seed)[0])
    return run(SysIdTask(model, build_tables(train), valid, cfg), cfg, state, on_eval)


def train_recurrent(cfg: TrainConfig, dataset, arch: RecurrentArch | None = None, static_widths=None, state=None,
                    model=None, on_eval=None):
    train, valid = _split(dataset)
    _check_valid(valid)
    static_widths = STATIC_WIDTHS if static_widths is None else tuple(static_widths)
    if arch is None:
        arch = RecurrentArch(tuple(a + b for a, b in zip(static_widths, DYNAMIC_WIDTHS)))
    if model is None:
        model = RecurrentModel.create(arch, static_widths, seed=_seeds(cfg.seed)[0])
    return run(RecurrentTask(model, build_tables(train), valid, cfg), cfg, state, on_eval)


def mlp_arch_for(episodes, hidden=(128, 128, 128), **kw) -> MlpArch:
    tables = build_tables(episodes)
    if len({t.specs[0].topology() for t in tables}) > 1:
        raise ValueError("the MLP baseline needs a single-topology dataset")
    spec = tables[0].specs[0]
    return MlpArch(spec.num_bodies, len(edge_structure(spec)[0]), STATIC_WIDTHS, DYNAMIC_WIDTHS, tuple(hidden), **kw)


def train_mlp_baseline(cfg: TrainConfig, dataset, arch: MlpArch | None = None, state=None, model=None, on_eval=None):
    train, valid = _split(dataset)
    _check_valid(valid)
    tables = build_tables(train)
    if len({t.specs[0].topology() for t in tables}) > 1:
        raise ValueError("the MLP baseline needs a single-topology dataset")
    arch = arch or mlp_arch_for(train)
    if model is None:
        model = MlpModel.create(arch, seed=_seeds(cfg.seed)[0])
    return run(OneStepTask(model, tables, valid, cfg, name="mlp"), cfg, state, on_eval)


def zero_static_arch(arch: ForwardArch) -> ForwardArch:
    """The same forward model without access to the static graph."""
    return replace(arch, static_widths=(0, 0, 0))


__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "OneStepTask",
    "SysIdTask",
    "RecurrentTask",
    "run",
    "train_one_step",
    "train_sysid",
    "train_recurrent",
    "train_mlp_baseline",
    "mlp_arch_for",
    "default_forward_arch",
    "zero_static_arch",
]
