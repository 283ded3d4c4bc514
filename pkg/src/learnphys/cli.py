"""Command-line entry point: ``learnphys <command> --config run.yaml``.

Commands: ``gen-data``, ``train``, ``eval``, ``plan`` and ``ablate``.  Every
run writes ``manifest_<command>.json`` into the output directory listing the
artifacts it produced (with SHA-256 digests), the seeds, the configuration
hash, library versions and wall-clock time.  A failed run still writes its
manifest, flagged ``partial``, and exits with a nonzero status.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .gn import MODES, ForwardArch, RecurrentArch, SysIdArch, SysIdModel, RecurrentModel
from .mpc import PlanConfig, RewardFn, random_policy, receding_horizon, reward_for, simulator_planner
from .sim import dataset as ds
from .sim.envs import BatchSystem
from .sim.graphs import DYNAMIC_WIDTHS, STATIC_WIDTHS
from .trainer.checkpoint import load_checkpoint, save_checkpoint
from .trainer.evaluate import (
    ConstantPredictor,
    ModelPredictor,
    OraclePredictor,
    RecurrentPredictor,
    SysIdPredictor,
    evaluate,
)
from .trainer.loops import TrainConfig, mlp_arch_for, train_mlp_baseline, train_one_step, train_recurrent, train_sysid

log = logging.getLogger("learnphys")

OUT_DIR_ENV = "LEARNPHYS_OUT_DIR"
COMMANDS = ("gen-data", "train", "eval", "plan", "ablate")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def derive_seeds(master: int) -> dict:
    """Hierarchical seeds: one child per stage of a run."""
    children = np.random.SeedSequence(master).spawn(3)
    train, plan, ablate = (int(c.generate_state(1)[0]) for c in children)
    return {"master": master, "data": master, "train": train, "plan": plan, "ablate": ablate}


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: dict
    out_dir: str
    artifacts: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    status: str = "running"
    partial: bool = False
    error: str | None = None
    config_path: str | None = None

    def add(self, path) -> Path:
        path = Path(path)
        self.artifacts.append({"path": str(path), "sha256": sha256(path)})
        return path

    def write(self) -> Path:
        path = Path(self.out_dir) / f"manifest_{self.command}.json"
        path.write_text(json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n")
        return path


def versions() -> dict:
    import pydantic
    import scipy
    import yaml

    return {
        "learnphys": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.__version__,
        "pyyaml": yaml.__version__,
    }


# -- helpers ----------------------------------------------------------------------------------


def _distribution(cfg: RunConfig, kind=None, base=None) -> ds.EnvParamsDistribution:
    d = cfg.data
    return ds.EnvParamsDistribution(
        kind or d.env,
        dict(d.base if base is None else base),
        {k: tuple(v) for k, v in d.ranges.items()},
        tuple(d.link_counts),
    )


def _train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        steps=t.steps, batch_size=t.batch_size, lr=t.lr, decay=t.decay, decay_interval=t.decay_interval,
        clip_norm=t.clip_norm, noise_scale=t.noise_scale, eval_interval=t.eval_interval,
        eval_episodes=t.eval_episodes, eval_horizon=t.eval_horizon, patience=t.patience, seed=seed,
        mode=t.mode, id_window=t.id_window, sequence_length=t.sequence_length,
    )


def _hidden(m):
    return dict(edge_hidden=tuple(m.edge_hidden), node_hidden=tuple(m.node_hidden), global_hidden=tuple(m.global_hidden))


def _data_path(cfg: RunConfig, out_dir: Path, split: str, explicit: str | None) -> Path:
    path = Path(explicit) if explicit else out_dir / f"{cfg.data.name}_{split}.lpd"
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found (run gen-data first or set the path in the config)")
    return path


def _read(path):
    return ds.read_episodes(path)[0]


def _train(cfg: RunConfig, family: str, mode: str, seed: int, train, valid, resume=None, on_eval=None):
    m = cfg.train.model
    tcfg = replace(_train_config(cfg, seed), mode=mode)
    static = STATIC_WIDTHS if m.use_static else (0, 0, 0)
    model, state = (None, None) if resume is None else resume
    kw = dict(state=state, model=model, on_eval=on_eval)
    if family == "gn":
        arch = ForwardArch(static, DYNAMIC_WIDTHS, mode, m.latent, recenter=m.recenter, **_hidden(m))
        return train_one_step(tcfg, (train, valid), arch, **kw)
    if family == "mlp-baseline":
        arch = mlp_arch_for(train, hidden=tuple(m.mlp_hidden), recenter=m.recenter)
        return train_mlp_baseline(tcfg, (train, valid), arch, **kw)
    if family == "gn-recurrent":
        widths = tuple(a + b for a, b in zip(static, DYNAMIC_WIDTHS))
        arch = RecurrentArch(widths, m.hidden, m.latent, **_hidden(m))
        return train_recurrent(tcfg, (train, valid), arch, static_widths=static, **kw)
    fa = ForwardArch((m.latent_static,) * 3, DYNAMIC_WIDTHS, mode, m.latent, recenter=m.recenter,
                     latent_static=True, **_hidden(m))
    arch = SysIdArch(DYNAMIC_WIDTHS, m.latent_static, m.hidden, fa, **_hidden(m))
    return train_sysid(tcfg, (train, valid), arch, **kw)


def _predictor(model, id_mode="matched", window=20):
    if isinstance(model, SysIdModel):
        return SysIdPredictor(model, id_mode, window)
    if isinstance(model, RecurrentModel):
        return RecurrentPredictor(model)
    return ModelPredictor(model)


# -- commands -----------------------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig, out_dir: Path, seeds: dict, man: RunManifest, args) -> None:
    dist = _distribution(cfg)
    paths, aborted = ds.generate_dataset(
        dist, dict(cfg.data.counts), cfg.data.length, seeds["data"], out_dir, cfg.data.name, args.parallelism
    )
    for split, path in paths.items():
        man.add(path)
        log.info("wrote %s (%d aborted)", path, len(aborted[split]))


def cmd_train(cfg: RunConfig, out_dir: Path, seeds: dict, man: RunManifest, args) -> None:
    t = cfg.train
    train = _read(_data_path(cfg, out_dir, "train", t.train_data))
    valid = _read(_data_path(cfg, out_dir, "valid", t.valid_data))
    family, mode = t.family, args.mode or t.mode
    resume = None
    resume_path = args.resume or t.resume
    if resume_path:
        model, state, meta = load_checkpoint(resume_path)
        if meta["kind"] != family or state is None:
            raise ValueError(f"checkpoint {resume_path} cannot resume a {family!r} run")
        resume = (model, state)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_path = ckpt_dir / f"{family}_best.lpc"
    meta = {"mode": mode, "config_hash": man.config_hash, "seed": seeds["train"]}

    def on_eval(step, metric, improved):
        log.info("step %d validation rollout error %.6g%s", step, metric, " (best)" if improved else "")

    result = _train(cfg, family, mode, seeds["train"], train, valid, resume, on_eval)
    save_checkpoint(best_path, result.model, None, {**meta, "best_step": result.state.best_step})
    last_path = save_checkpoint(ckpt_dir / f"{family}_last.lpc", result.last, result.state, meta)
    man.add(best_path)
    man.add(last_path)
    metrics_csv = out_dir / f"metrics_{family}.csv"
    with open(metrics_csv, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "validation_rollout_error", "train_loss", "lr", "wall_clock"])
        hist = result.state.history
        prev = 0
        for e in result.state.evals:
            window = [h["loss"] for h in hist if prev < h["step"] <= e["step"]]
            lr = next((h["lr"] for h in reversed(hist) if h["step"] <= e["step"]), float("nan"))
            w.writerow([e["step"], repr(e["metric"]), repr(float(np.mean(window)) if window else float("nan")),
                        repr(lr), repr(e["wall_clock"])])
            prev = e["step"]
    man.add(metrics_csv)
    hist_json = out_dir / f"history_{family}.json"
    hist_json.write_text(json.dumps({"history": result.state.history, "evals": result.state.evals}, indent=1))
    man.add(hist_json)
    print(best_path)
    print(last_path)


def cmd_eval(cfg: RunConfig, out_dir: Path, seeds: dict, man: RunManifest, args) -> None:
    e = cfg.eval
    episodes = _read(_data_path(cfg, out_dir, "test", args.dataset or e.dataset))
    if e.predictor == "constant":
        predictor = ConstantPredictor()
    elif e.predictor == "oracle":
        predictor = OraclePredictor()
    else:
        path = args.checkpoint or e.checkpoint
        if not path:
            raise ValueError("eval needs a checkpoint for predictor 'model'")
        model, _, _ = load_checkpoint(path)
        predictor = _predictor(model, e.id_mode, cfg.train.id_window)
    report = evaluate(predictor, episodes, e.horizon, e.start, e.max_episodes)
    stem = out_dir / f"eval_{getattr(predictor, 'name', 'model')}"
    man.add(_write(stem.with_suffix(".json"), report.to_json()))
    man.add(_write(stem.with_suffix(".csv"), report.to_csv()))
    print(report.to_csv(), end="")


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def _reward(cfg: RunConfig) -> RewardFn:
    r = cfg.plan.reward
    kw = {"target_point": tuple(r.target_point), "shaping": r.shaping}
    if r.body is not None:
        kw["body"] = r.body
    return reward_for(r.tag, **kw)


def cmd_plan(cfg: RunConfig, out_dir: Path, seeds: dict, man: RunManifest, args) -> None:
    p = cfg.plan
    spec = ds.sample_env(ds.fixed(p.env.kind, **p.env.base), 0)
    reward = _reward(cfg)
    pcfg = PlanConfig(p.horizon, p.iterations, p.warmup_iterations, p.step_size, 1.0, p.halving, reward)
    model, objective_for = None, None
    if p.planner == "simulator":
        objective_for = simulator_planner(spec, reward)
    else:
        path = args.checkpoint or p.checkpoint
        if not path:
            raise ValueError("planning with a learned model needs a checkpoint")
        model, _, _ = load_checkpoint(path)
    starts = np.random.SeedSequence(seeds["plan"]).spawn(p.episodes)
    rows, summary = [], []
    system = BatchSystem([spec])
    for k, child in enumerate(starts):
        rng = np.random.default_rng(child)
        q, qd = system.sample_initial([rng])
        x0 = (q[0], qd[0])
        runs = [("mpc", receding_horizon(model, reward, spec, x0, pcfg, p.episode_len, objective_for=objective_for))]
        if p.random_baseline:
            runs.append(("random", random_policy(spec, reward, x0, p.episode_len, rng)))
        for policy, ep in runs:
            summary.append({"episode": k, "policy": policy, "total_reward": ep.total_reward})
            for row in ep.to_rows():
                rows.append({"episode": k, "policy": policy, **row})
        log.info("episode %d: %s", k, ", ".join(f"{n} {e.total_reward:.4g}" for n, e in runs))
    rewards_csv = out_dir / "plan_rewards.csv"
    with open(rewards_csv, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    man.add(rewards_csv)
    comparison = {
        policy: float(np.mean([s["total_reward"] for s in summary if s["policy"] == policy]))
        for policy in dict.fromkeys(s["policy"] for s in summary)
    }
    man.add(_write(out_dir / "plan_summary.json", json.dumps({"episodes": summary, "mean_reward": comparison}, indent=1)))
    for policy, value in comparison.items():
        print(f"{policy},{value!r}")


def cmd_ablate(cfg: RunConfig, out_dir: Path, seeds: dict, man: RunManifest, args) -> None:
    t = cfg.train
    train = _read(_data_path(cfg, out_dir, "train", t.train_data))
    valid = _read(_data_path(cfg, out_dir, "valid", t.valid_data))
    modes = [args.mode] if args.mode else list(cfg.ablate.modes)
    rows = []
    for mode in modes:
        for s in cfg.ablate.seeds:
            seed = derive_seeds(seeds["ablate"] + s)["train"]
            result = _train(cfg, "gn", mode, seed, train, valid)
            rep = evaluate(ModelPredictor(result.model, mode), valid, horizon=t.eval_horizon, max_episodes=t.eval_episodes)
            rows.append({
                "mode": mode,
                "seed": s,
                "valid_rollout_error": rep.value("rollout", "average", "mean"),
                "valid_one_step_error": rep.value("one-step", "average", "mean"),
                "steps": result.state.step,
            })
            log.info("%s seed %d: %.6g", mode, s, rows[-1]["valid_rollout_error"])
    table = out_dir / "ablation.csv"
    with open(table, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    man.add(table)
    summary = {m: float(np.median([r["valid_rollout_error"] for r in rows if r["mode"] == m])) for m in modes}
    man.add(_write(out_dir / "ablation_summary.json", json.dumps(summary, indent=1)))
    for m, v in summary.items():
        print(f"{m},{v!r}")


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "plan": cmd_plan, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="learnphys", description="Learned physics simulation and control.")
    parser.add_argument("--version", action="version", version=f"learnphys {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out-dir", help=f"output directory (overrides ${OUT_DIR_ENV} and the config)")
        p.add_argument("--parallelism", type=int, help="worker processes for episode generation")
        p.add_argument("--mode", choices=MODES, help="GN architecture variant")
        p.add_argument("--checkpoint", help="checkpoint to evaluate or plan with")
        p.add_argument("--dataset", help="dataset file to evaluate on")
        p.add_argument("--resume", help="checkpoint to resume training from")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_out_dir(flag: str | None, cfg: RunConfig) -> Path:
    return Path(flag or os.environ.get(OUT_DIR_ENV) or cfg.out_dir or "runs")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    seed = cfg.seed if args.seed is None else args.seed
    args.parallelism = args.parallelism or cfg.parallelism
    if args.parallelism < 1:
        print("error: --parallelism must be >= 1", file=sys.stderr)
        return 2
    out_dir = resolve_out_dir(args.out_dir, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = derive_seeds(seed)
    man = RunManifest(args.command, cfg.digest(), seeds, str(out_dir), versions=versions(), config_path=args.config)
    status = 0
    try:
        HANDLERS[args.command](cfg, out_dir, seeds, man, args)
        man.status = "ok"
    except Exception as e:  # reported in the manifest, then surfaced as the exit status
        man.status, man.partial, man.error = "error", True, f"{type(e).__name__}: {e}"
        print(f"error: {man.error}", file=sys.stderr)
        status = 1
    man.wall_clock = time.perf_counter() - t0
    print(man.write())
    return status


if __name__ == "__main__":
    sys.exit(main())
