"""Episode generation, parameter distributions and the dataset file format.

A dataset split is one parameter container (see ``diffcore.serialization``)
holding ``epNNNNN/states`` ``(L, bodies, 13)`` and ``epNNNNN/actions``
``(L, actuators)`` arrays.  The JSON metadata records, per episode, its
environment spec and seed, plus the split name, the generator settings and
any episodes dropped because the simulation diverged.
"""

from __future__ import annotations

import inspect
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore import serialization
from . import envs
from .controls import random_controls
from .envs import BatchSystem, EnvSpec

SPLITS = ("train", "valid", "test")
BUILDERS = {"pendulum": envs.pendulum, "cartpole": envs.cartpole, "chain": envs.chain, "point": envs.point_mass}
RANGED = ("length", "mass", "gear", "damping")


@dataclass(frozen=True)
class Episode:
    spec: EnvSpec
    states: np.ndarray  # (L, bodies, 13)
    actions: np.ndarray  # (L, actuators); the last row is never applied
    seed: int = 0

    def __len__(self):
        return self.states.shape[0]


@dataclass(frozen=True)
class EnvParamsDistribution:
    """Uniform relative ranges around a builder's base parameters."""

    kind: str
    base: dict = field(default_factory=dict)
    ranges: dict = field(default_factory=dict)  # name -> (lo, hi) multipliers
    link_counts: tuple = (5,)

    def __post_init__(self):
        if self.kind not in BUILDERS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        for name, (lo, hi) in self.ranges.items():
            if name not in RANGED:
                raise ValueError(f"parameter {name!r} cannot be randomised; choose from {RANGED}")
            if not 0 < lo <= hi:
                raise ValueError(f"range for {name!r} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if "n_links" in self.base:
            raise ValueError("set the number of chain links through link_counts")
        if self.kind == "chain" and (not self.link_counts or min(self.link_counts) < 2):
            raise ValueError("chain link counts must be >= 2")


def fixed(spec_kind: str, **base) -> EnvParamsDistribution:
    if "n_links" in base:
        return EnvParamsDistribution(spec_kind, base, link_counts=(base.pop("n_links"),))
    return EnvParamsDistribution(spec_kind, base)


def _draw(rng, dist, name, size=None):
    lo, hi = dist.ranges.get(name, (1.0, 1.0))
    return rng.uniform(lo, hi, size=size)


def sample_env(dist: EnvParamsDistribution, seed) -> EnvSpec:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kw = dict(dist.base)
    sig = inspect.signature(BUILDERS[dist.kind])
    base = {**{k: p.default for k, p in sig.parameters.items()}, **kw}
    if dist.kind == "chain":
        n = int(rng.choice(np.asarray(dist.link_counts)))
        kw["n_links"] = n
        kw["lengths"] = list(base["length"] * _draw(rng, dist, "length", n))
        kw["masses"] = list(base["mass"] * _draw(rng, dist, "mass", n))
        for name in ("gear", "damping"):
            kw[name] = base[name] * _draw(rng, dist, name)
        return envs.chain(**kw)
    targets = {"pendulum": {"length": "length", "mass": "mass"}, "cartpole": {"length": "pole_length", "mass": "pole_mass"}}
    mapping = {**targets.get(dist.kind, {}), "gear": "gear", "damping": "damping"}
    for name, arg in mapping.items():
        if arg in base:
            kw[arg] = base[arg] * _draw(rng, dist, name)
    return BUILDERS[dist.kind](**kw)


def episode_seeds(seed: int, split_index: int, count: int) -> list[int]:
    children = np.random.SeedSequence(seed, spawn_key=(split_index,)).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def _simulate_group(specs, rngs, length):
    system = BatchSystem(specs)
    q, qd = system.sample_initial(rngs)
    actions = np.stack([random_controls(system.ref.num_actuators, length, rng) for rng in rngs])
    states, ok = envs.simulate(system, q, qd, actions)
    return states, actions, ok


def generate_episodes(source, count: int, length: int, seed: int, split_index: int = 0, parallelism: int = 1):
    """Simulate ``count`` episodes; returns ``(episodes, aborted_indices)``."""
    if count < 1 or length < 1:
        raise ValueError("episode count and length must be >= 1")
    seeds = episode_seeds(seed, split_index, count)
    specs, rngs = [], []
    for s in seeds:
        rng = np.random.default_rng(s)
        specs.append(sample_env(source, rng) if isinstance(source, EnvParamsDistribution) else source)
        rngs.append(rng)
    groups = defaultdict(list)
    for i, spec in enumerate(specs):
        groups[spec.topology()].append(i)
    episodes: list = [None] * count
    aborted = []
    for idx in groups.values():
        chunks = np.array_split(np.array(idx), max(1, min(parallelism, len(idx))))
        if parallelism > 1 and len(chunks) > 1:
            # workers rebuild generators from the seeds, drawing the spec again first
            args = [([specs[i] for i in c], [seeds[i] for i in c], length) for c in chunks]
            with ProcessPoolExecutor(parallelism) as pool:
                results = list(pool.map(_redraw_and_simulate, [(a, source) for a in args]))
        else:
            results = [_simulate_group([specs[i] for i in c], [rngs[i] for i in c], length) for c in chunks]
        for c, (states, actions, ok) in zip(chunks, results):
            for k, i in enumerate(c):
                if ok[k]:
                    episodes[i] = Episode(specs[i], states[k], actions[k], seeds[i])
                else:
                    aborted.append(int(i))
    return [e for e in episodes if e is not None], sorted(aborted)


def _redraw_and_simulate(payload):
    (specs, seeds, length), source = payload
    rngs = []
    for s in seeds:
        rng = np.random.default_rng(s)
        if isinstance(source, EnvParamsDistribution):
            sample_env(source, rng)
        rngs.append(rng)
    return _simulate_group(specs, rngs, length)


def episodes_to_arrays(episodes) -> tuple[dict, list]:
    arrays, info = {}, []
    for i, ep in enumerate(episodes):
        arrays[f"ep{i:05d}/states"] = ep.states
        arrays[f"ep{i:05d}/actions"] = ep.actions
        info.append({"spec": ep.spec.to_dict(), "seed": ep.seed, "length": len(ep)})
    return arrays, info


def write_episodes(path, episodes, meta: dict | None = None) -> Path:
    arrays, info = episodes_to_arrays(episodes)
    return serialization.save(path, arrays, {**(meta or {}), "episodes": info, "format": "learnphys-dataset"})


def read_episodes(path) -> tuple[list[Episode], dict]:
    arrays, meta = serialization.load(path)
    if meta.get("format") != "learnphys-dataset":
        raise ValueError(f"{path} is not a dataset file")
    episodes = []
    for i, info in enumerate(meta["episodes"]):
        spec = EnvSpec.from_dict(info["spec"])
        actions = arrays[f"ep{i:05d}/actions"].reshape(info["length"], spec.num_actuators)
        episodes.append(Episode(spec, arrays[f"ep{i:05d}/states"], actions, info["seed"]))
    return episodes, meta


def generate_dataset(source, counts: dict, length: int, seed: int, out_dir, name: str = "data", parallelism: int = 1):
    """Write one file per split; returns ``{split: path}`` and the aborted episode lists."""
    out_dir = Path(out_dir)
    paths, aborted = {}, {}
    for split_index, split in enumerate(SPLITS):
        if counts.get(split, 0) < 1:
            continue
        eps, bad = generate_episodes(source, counts[split], length, seed, split_index, parallelism)
        meta = {"split": split, "seed": seed, "length": length, "requested": counts[split], "aborted": bad}
        paths[split] = write_episodes(out_dir / f"{name}_{split}.lpd", eps, meta)
        aborted[split] = bad
    return paths, aborted
