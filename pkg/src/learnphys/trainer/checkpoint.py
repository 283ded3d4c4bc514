"""Checkpoints: model parameters, normaliser statistics and optimiser state."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..diffcore import serialization
from ..diffcore.optim import AdamState
from ..gn import ForwardArch, ForwardModel, RecurrentArch, RecurrentModel, SysIdArch, SysIdModel
from ..normalize import GraphNormalizer, NormStats
from .loops import TrainState
from .mlp import MlpArch, MlpModel

KINDS = ("gn", "gn-recurrent", "gn-sysid", "mlp-baseline")


def model_kind(model) -> str:
    if isinstance(model, MlpModel):
        return "mlp-baseline"
    if isinstance(model, ForwardModel):
        return "gn"
    if isinstance(model, RecurrentModel):
        return "gn-recurrent"
    if isinstance(model, SysIdModel):
        return "gn-sysid"
    raise TypeError(f"cannot checkpoint a {type(model).__name__}")


def _arch_dict(model) -> dict:
    arch = model.arch
    d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(arch).items()}
    if isinstance(model, SysIdModel):
        d["forward"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(arch.forward).items()}
    if isinstance(model, RecurrentModel):
        d["static_widths"] = list(model.static_widths)
    return d


def _finite_or_none(x):
    return x if math.isfinite(x) else None


def save_checkpoint(path, model, state: TrainState | None = None, meta: dict | None = None) -> Path:
    arrays = {f"model/{k}": v for k, v in model.to_arrays().items()}
    info = {"kind": model_kind(model), "arch": _arch_dict(model), **(meta or {})}
    if state is not None:
        a = state.adam
        for k, v in a.m.items():
            arrays[f"adam/m/{k}"] = v
        for k, v in a.v.items():
            arrays[f"adam/v/{k}"] = v
        info["train_state"] = {
            "step": state.step,
            "adam": {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t},
            "rng_state": state.rng_state,
            "history": state.history,
            "evals": state.evals,
            "best_metric": _finite_or_none(state.best_metric),
            "best_step": state.best_step,
            "stale": state.stale,
        }
    return serialization.save(path, arrays, info)


def _tuples(d: dict) -> dict:
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}


def _build_model(kind: str, arch: dict, arrays: dict):
    if kind == "gn":
        return ForwardModel.from_arrays(ForwardArch(**_tuples(arch)), arrays)
    if kind == "mlp-baseline":
        return MlpModel.from_arrays(MlpArch(**_tuples(arch)), arrays, prefix="mlp")
    if kind == "gn-recurrent":
        arch = dict(arch)
        static_widths = tuple(arch.pop("static_widths"))
        return RecurrentModel(
            RecurrentArch(**_tuples(arch)),
            {k: v for k, v in arrays.items() if k.startswith("rnn/")},
            GraphNormalizer.from_arrays(arrays, "norm/dynamic"),
            GraphNormalizer.from_arrays(arrays, "norm/static"),
            NormStats.from_arrays(arrays, "norm/output"),
            static_widths,
        )
    if kind == "gn-sysid":
        arch = dict(arch)
        fa = ForwardArch(**_tuples(arch.pop("forward")))
        sa = SysIdArch(**_tuples(arch), forward=fa)
        fwd = ForwardModel.from_arrays(fa, arrays)
        params = {k: v for k, v in arrays.items() if k.startswith(("sysid/", "fwd/"))}
        return SysIdModel(sa, params, fwd)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def load_checkpoint(path):
    """Returns ``(model, train_state or None, meta)``."""
    arrays, meta = serialization.load(path)
    model_arrays = {k[len("model/"):]: v for k, v in arrays.items() if k.startswith("model/")}
    model = _build_model(meta["kind"], meta["arch"], model_arrays)
    ts = meta.get("train_state")
    state = None
    if ts is not None:
        m = {k[len("adam/m/"):]: v for k, v in arrays.items() if k.startswith("adam/m/")}
        v = {k[len("adam/v/"):]: v for k, v in arrays.items() if k.startswith("adam/v/")}
        state = TrainState(
            step=ts["step"],
            adam=AdamState(**ts["adam"], m=m, v=v),
            rng_state=ts["rng_state"],
            history=ts["history"],
            evals=ts["evals"],
            best_metric=float("inf") if ts["best_metric"] is None else ts["best_metric"],
            best_step=ts["best_step"],
            stale=ts["stale"],
        )
    return model, state, meta


def models_equal(a, b) -> bool:
    """Bit-exact comparison of everything a checkpoint stores for a model."""
    if model_kind(a) != model_kind(b) or _arch_dict(a) != _arch_dict(b):
        return False
    xa, xb = a.to_arrays(), b.to_arrays()
    return xa.keys() == xb.keys() and all(np.array_equal(xa[k], xb[k]) for k in xa)
