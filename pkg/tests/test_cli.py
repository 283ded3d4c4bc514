import csv
import json

import pytest

from learnphys import cli
from learnphys.config import ConfigError, parse_config
from learnphys.gn import MODES

BASE = """\
seed: 3
data:
  env: pendulum
  ranges: {length: [0.5, 1.0]}
  counts: {train: 4, valid: 3, test: 3}
  length: 26
train:
  steps: 4
  batch_size: 4
  eval_interval: 2
  eval_episodes: 3
  eval_horizon: 4
  model: {latent: 8, edge_hidden: [8], node_hidden: [8], global_hidden: [8], mlp_hidden: [8], hidden: 3}
eval: {horizon: 4}
plan: {horizon: 2, iterations: 1, episodes: 2, episode_len: 3}
ablate: {modes: [two-gn-skip, single-gn, two-gn-no-edge]}
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(BASE)
    return path


@pytest.fixture
def data_dir(tmp_path, config):
    out = tmp_path / "out"
    assert cli.main(["gen-data", "--config", str(config), "--out-dir", str(out)]) == 0
    return out


def manifest(out, command):
    return json.loads((out / f"manifest_{command}.json").read_text())


def test_gen_data_writes_three_splits(data_dir):
    assert sorted(p.name for p in data_dir.glob("*.lpd")) == ["data_test.lpd", "data_train.lpd", "data_valid.lpd"]
    m = manifest(data_dir, "gen-data")
    assert m["status"] == "ok" and not m["partial"] and len(m["artifacts"]) == 3
    assert set(m["seeds"]) == {"master", "data", "train", "plan", "ablate"}


def test_gen_data_is_deterministic(tmp_path, config, data_dir):
    other = tmp_path / "again"
    assert cli.main(["gen-data", "--config", str(config), "--out-dir", str(other)]) == 0
    a = {e["sha256"] for e in manifest(data_dir, "gen-data")["artifacts"]}
    b = {e["sha256"] for e in manifest(other, "gen-data")["artifacts"]}
    assert a == b


def test_seed_flag_changes_data(tmp_path, config, data_dir):
    other = tmp_path / "seeded"
    assert cli.main(["gen-data", "--config", str(config), "--out-dir", str(other), "--seed", "9"]) == 0
    assert manifest(other, "gen-data")["seeds"]["master"] == 9
    assert (other / "data_train.lpd").read_bytes() != (data_dir / "data_train.lpd").read_bytes()


def test_invalid_link_counts_reported_with_field_and_line(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("data:\n  env: chain\n  link_counts: [1, 3]\n")
    assert cli.main(["gen-data", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "data.link_counts" in err and "bad.yaml:3" in err


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match=r"<config>:2: train.stepz"):
        parse_config("train:\n  stepz: 3\n")
    with pytest.raises(ConfigError, match="train.mode"):
        parse_config("train: {mode: three-gn}\n")


def test_out_dir_precedence(tmp_path, monkeypatch):
    cfg = parse_config("out_dir: from_config\n")
    assert str(cli.resolve_out_dir(None, cfg)) == "from_config"
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "env"))
    assert cli.resolve_out_dir(None, cfg) == tmp_path / "env"
    assert str(cli.resolve_out_dir("flag", cfg)) == "flag"


def test_train_eval_and_resume(config, data_dir, capsys):
    args = ["--config", str(config), "--out-dir", str(data_dir)]
    assert cli.main(["train", *args]) == 0
    printed = capsys.readouterr().out
    assert "gn_best.lpc" in printed and "gn_last.lpc" in printed
    with open(data_dir / "metrics_gn.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["step"] for r in rows] == ["2", "4"]
    listed = {e["path"] for e in manifest(data_dir, "train")["artifacts"]}
    assert {str(data_dir / "metrics_gn.csv"), str(data_dir / "history_gn.json")} <= listed

    last = data_dir / "checkpoints" / "gn_last.lpc"
    resumed = data_dir / "resumed"
    cfg8 = config.parent / "run8.yaml"
    cfg8.write_text(BASE.replace("steps: 4", "steps: 8"))
    assert cli.main(["train", "--config", str(cfg8), "--out-dir", str(resumed), "--resume", str(last)]) != 0  # no data there
    assert manifest(resumed, "train")["partial"]
    assert cli.main(["train", "--config", str(cfg8), "--out-dir", str(data_dir), "--resume", str(last)]) == 0
    hist = json.loads((data_dir / "history_gn.json").read_text())["history"]
    assert [h["step"] for h in hist] == list(range(1, 9))

    capsys.readouterr()
    assert cli.main(["eval", *args, "--checkpoint", str(data_dir / "checkpoints" / "gn_best.lpc")]) == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header.split(",")[3:] == ["position", "orientation", "linear_velocity", "angular_velocity"]
    assert (data_dir / "eval_gn.json").exists()


def test_reference_predictors_via_cli(tmp_path, data_dir):
    for predictor, expect in (("constant", 1.0), ("oracle", 0.0)):
        path = tmp_path / f"{predictor}.yaml"
        path.write_text(BASE.replace("eval: {horizon: 4}", f"eval: {{horizon: 4, predictor: {predictor}}}"))
        assert cli.main(["eval", "--config", str(path), "--out-dir", str(data_dir)]) == 0
        summary = json.loads((data_dir / f"eval_{predictor}.json").read_text())["summary"]
        assert summary["rollout"]["average"]["median"] == pytest.approx(expect, abs=1e-9)


def test_other_families_train(tmp_path, config, data_dir):
    for family in ("mlp-baseline", "gn-recurrent", "gn-sysid"):
        path = tmp_path / f"{family}.yaml"
        extra = "  sequence_length: 5\n  id_window: 5\n"
        path.write_text(BASE.replace("train:\n", f"train:\n  family: {family}\n{extra}"))
        assert cli.main(["train", "--config", str(path), "--out-dir", str(data_dir)]) == 0, family
        assert (data_dir / "checkpoints" / f"{family}_best.lpc").exists()


def test_plan_is_deterministic_and_has_baseline(tmp_path, config, data_dir):
    args = ["--config", str(config), "--out-dir", str(data_dir)]
    assert cli.main(["train", *args]) == 0
    ckpt = str(data_dir / "checkpoints" / "gn_best.lpc")
    outputs = []
    for _ in range(2):
        assert cli.main(["plan", *args, "--checkpoint", ckpt]) == 0
        outputs.append((data_dir / "plan_rewards.csv").read_text())
    assert outputs[0] == outputs[1]
    with open(data_dir / "plan_rewards.csv") as f:
        rows = list(csv.DictReader(f))
    assert {r["policy"] for r in rows} == {"mpc", "random"}
    assert len(rows) == 2 * 2 * 3


def test_ablate_writes_comparison_table(tmp_path, data_dir):
    path = tmp_path / "all_modes.yaml"
    path.write_text(BASE.replace("ablate: {modes: [two-gn-skip, single-gn, two-gn-no-edge]}\n", ""))
    assert cli.main(["ablate", "--config", str(path), "--out-dir", str(data_dir)]) == 0
    with open(data_dir / "ablation.csv") as f:
        modes = [r["mode"] for r in csv.DictReader(f)]
    assert modes == list(MODES)
    assert set(json.loads((data_dir / "ablation_summary.json").read_text())) == set(MODES)


def test_missing_checkpoint_fails_with_partial_manifest(config, data_dir):
    assert cli.main(["eval", "--config", str(config), "--out-dir", str(data_dir)]) == 1
    m = manifest(data_dir, "eval")
    assert m["status"] == "error" and m["partial"] and "checkpoint" in m["error"]


def test_unreadable_config_exits_nonzero(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2
