from . import ops
from .nn import glorot, gru_step, init_gru, init_mlp, mlp_apply
from .optim import AdamState, adam_step, clip_global_norm, decayed_lr, global_norm
from .tape import ShapeError, Tape, TapeNode, Tensor, apply, backward, value_of

__all__ = [
    "AdamState",
    "ShapeError",
    "Tape",
    "TapeNode",
    "Tensor",
    "adam_step",
    "apply",
    "backward",
    "clip_global_norm",
    "decayed_lr",
    "global_norm",
    "glorot",
    "gru_step",
    "init_gru",
    "init_mlp",
    "mlp_apply",
    "ops",
    "value_of",
]
