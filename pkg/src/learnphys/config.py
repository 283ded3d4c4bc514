"""YAML run configuration with strict schema validation.

Unknown keys are rejected everywhere.  Validation errors name the offending
field and, when the config came from a file, the line it sits on.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .gn import MODES


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


EnvKind = Literal["pendulum", "cartpole", "chain", "point"]


class DataConfig(_Strict):
    env: EnvKind = "pendulum"
    base: dict[str, float] = Field(default_factory=dict)
    ranges: dict[str, tuple[float, float]] = Field(default_factory=dict)
    link_counts: list[int] = Field(default_factory=lambda: [5])
    counts: dict[Literal["train", "valid", "test"], int] = Field(
        default_factory=lambda: {"train": 2000, "valid": 200, "test": 200}
    )
    length: int = Field(100, ge=2)
    name: str = "data"

    @field_validator("link_counts")
    @classmethod
    def _links(cls, v):
        if not v or min(v) < 2:
            raise ValueError("link counts must be non-empty and >= 2")
        return v

    @field_validator("ranges")
    @classmethod
    def _ranges(cls, v):
        for name, (lo, hi) in v.items():
            if name not in ("length", "mass", "gear", "damping"):
                raise ValueError(f"parameter {name!r} cannot be randomised")
            if not 0 < lo <= hi:
                raise ValueError(f"range for {name!r} must satisfy 0 < lo <= hi")
        return v

    @field_validator("counts")
    @classmethod
    def _counts(cls, v):
        if any(c < 0 for c in v.values()):
            raise ValueError("split counts must be >= 0")
        return v


class ModelConfig(_Strict):
    latent: int = Field(128, gt=0)
    edge_hidden: list[int] = Field(default_factory=lambda: [256, 256, 256])
    node_hidden: list[int] = Field(default_factory=lambda: [128, 128])
    global_hidden: list[int] = Field(default_factory=lambda: [128, 128])
    recenter: bool = False
    use_static: bool = True
    mlp_hidden: list[int] = Field(default_factory=lambda: [128, 128, 128])
    latent_static: int = Field(10, gt=0)
    hidden: int = Field(20, gt=0)


class TrainSection(_Strict):
    family: Literal["gn", "gn-recurrent", "gn-sysid", "mlp-baseline"] = "gn"
    mode: str = "two-gn-skip"
    steps: int = Field(50_000, ge=0)
    batch_size: int = Field(200, gt=0)
    lr: float = Field(1e-4, gt=0)
    decay: float = Field(0.975, gt=0, lt=1)
    decay_interval: int = Field(50_000, gt=0)
    clip_norm: float = Field(1.0, gt=0)
    noise_scale: float = Field(1e-3, ge=0)
    eval_interval: int = Field(1000, gt=0)
    eval_episodes: int = Field(64, gt=0)
    eval_horizon: int = Field(20, gt=0)
    patience: int = Field(0, ge=0)
    id_window: int = Field(20, gt=0)
    sequence_length: int = Field(21, ge=2)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train_data: Optional[str] = None
    valid_data: Optional[str] = None
    resume: Optional[str] = None

    @field_validator("mode")
    @classmethod
    def _mode(cls, v):
        if v not in MODES:
            raise ValueError(f"unknown mode {v!r}; expected one of {list(MODES)}")
        return v


class EvalSection(_Strict):
    checkpoint: Optional[str] = None
    dataset: Optional[str] = None
    predictor: Literal["model", "constant", "oracle"] = "model"
    horizon: Optional[int] = Field(None, gt=0)
    start: Optional[int] = Field(None, ge=0)
    max_episodes: Optional[int] = Field(None, gt=0)
    id_mode: Literal["matched", "mismatched", "zero-action"] = "matched"


class RewardSection(_Strict):
    tag: Literal["pendulum-balance", "cartpole-balance", "chain-reach", "point-target"] = "pendulum-balance"
    body: Optional[int] = Field(None, ge=0)
    target_point: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shaping: float = 0.01


class EnvSection(_Strict):
    kind: EnvKind = "pendulum"
    base: dict[str, float] = Field(default_factory=dict)


class PlanSection(_Strict):
    checkpoint: Optional[str] = None
    env: EnvSection = Field(default_factory=EnvSection)
    reward: RewardSection = Field(default_factory=RewardSection)
    planner: Literal["model", "simulator"] = "model"
    horizon: int = Field(10, ge=1)
    iterations: int = Field(5, ge=0)
    warmup_iterations: Optional[int] = Field(None, ge=0)
    step_size: float = Field(0.3, gt=0)
    halving: bool = False
    episodes: int = Field(10, gt=0)
    episode_len: int = Field(60, ge=1)
    random_baseline: bool = True


class AblateSection(_Strict):
    modes: list[str] = Field(default_factory=lambda: list(MODES))
    seeds: list[int] = Field(default_factory=lambda: [0])

    @field_validator("modes")
    @classmethod
    def _modes(cls, v):
        bad = [m for m in v if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}; expected a subset of {list(MODES)}")
        return v


class RunConfig(_Strict):
    seed: int = 0
    out_dir: Optional[str] = None
    parallelism: int = Field(1, ge=1)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    plan: PlanSection = Field(default_factory=PlanSection)
    ablate: AblateSection = Field(default_factory=AblateSection)

    @model_validator(mode="after")
    def _chain_links(self):
        if self.data.env != "chain" and self.data.link_counts != [5]:
            raise ValueError("data.link_counts only applies to chain environments")
        return self

    def digest(self) -> str:
        """Stable hash of the validated configuration."""
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _line_of(node, loc) -> int | None:
    """1-based line of the YAML node at ``loc`` (deepest existing ancestor)."""
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = [(k, v) for k, v in node.value if k.value == str(key)]
            if not match:
                break
            k, node = match[0]
            line = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = yaml.safe_load(text) or {}
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{source}: invalid YAML: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        msgs = []
        for err in e.errors():
            loc = [p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
            field = ".".join(str(p) for p in loc) or "<root>"
            line = _line_of(root, loc) if root is not None else None
            where = f"{source}:{line}" if line else source
            msgs.append(f"{where}: {field}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, str(path))
