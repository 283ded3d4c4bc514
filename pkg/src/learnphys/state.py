"""Per-body dynamic state, delta prediction and the evaluation metrics.

A body state is a 13-vector laid out as::

    [0:3]   position
    [3:7]   orientation quaternion (w, x, y, z)
    [7:10]  linear velocity
    [10:13] angular velocity

A system state is an ``(num_bodies, 13)`` array.  Deltas use the same layout,
with the quaternion slot holding a rotation that is composed on the left.
Functions that take part in training or planning accept taped tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.tape import value_of

STATE_WIDTH = 13
POS = slice(0, 3)
QUAT = slice(3, 7)
LINVEL = slice(7, 10)
ANGVEL = slice(10, 13)
GROUPS = {"position": POS, "orientation": QUAT, "linear_velocity": LINVEL, "angular_velocity": ANGVEL}
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class SystemState:
    bodies: np.ndarray  # (num_bodies, 13)
    t: int = 0

    def __post_init__(self):
        b = np.asarray(self.bodies, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != STATE_WIDTH:
            raise ValueError(f"body states must be (n, 13), got {b.shape}")
        object.__setattr__(self, "bodies", b)

    @property
    def num_bodies(self) -> int:
        return self.bodies.shape[0]


def body_state(position=(0, 0, 0), quat=IDENTITY_QUAT, linvel=(0, 0, 0), angvel=(0, 0, 0)) -> np.ndarray:
    return np.concatenate([position, quat, linvel, angvel]).astype(np.float64)


# -- quaternions -------------------------------------------------------------


def hamilton_product(q1, q2) -> np.ndarray:
    return ops.quat_mul_array(np.asarray(q1, dtype=np.float64), np.asarray(q2, dtype=np.float64))


def quat_conj(q) -> np.ndarray:
    return np.asarray(q) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_inverse(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return quat_conj(q) / np.sum(q * q, axis=-1, keepdims=True)


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(angle / 2), np.sin(angle / 2) * axis], axis=-1)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def canonical_sign(q) -> np.ndarray:
    """Flip quaternions so that w >= 0."""
    q = np.asarray(q, dtype=np.float64)
    return np.where(q[..., :1] < 0, -q, q)


# -- deltas -----------------------------------------------------------------


def infer_delta(state, next_state) -> np.ndarray:
    """Training target taking ``state`` to ``next_state``."""
    s, n = np.asarray(state, dtype=np.float64), np.asarray(next_state, dtype=np.float64)
    if s.shape != n.shape:
        raise ValueError(f"state shapes differ: {s.shape} vs {n.shape}")
    d = n - s
    rot = hamilton_product(n[..., QUAT], quat_inverse(s[..., QUAT]))
    d[..., QUAT] = canonical_sign(quat_normalize(rot))
    return d


def identity_delta(num_bodies: int) -> np.ndarray:
    d = np.zeros((num_bodies, STATE_WIDTH))
    d[:, QUAT] = IDENTITY_QUAT
    return d


def apply_delta(state, delta):
    """Add vector deltas and compose the rotation: q' = normalize(dq * q)."""
    if state.shape != delta.shape:
        raise ValueError(f"state {state.shape} and delta {delta.shape} do not match")
    if not ops.is_taped(state) and not ops.is_taped(delta):
        s, d = value_of(state), value_of(delta)
        dq = d[..., QUAT]
        if np.any(np.sum(dq * dq, axis=-1) == 0):
            raise ValueError("zero-norm rotation delta")
        out = s + d
        out[..., QUAT] = quat_normalize(hamilton_product(dq, s[..., QUAT]))
        return out
    q = ops.normalize_rows(ops.quat_mul(ops.cols(delta, 3, 7), ops.cols(state, 3, 7)))
    moved = ops.add(state, delta)
    return ops.concat([ops.cols(moved, 0, 3), q, ops.cols(moved, 7, 13)], axis=-1)


# -- losses -----------------------------------------------------------------


def quaternion_loss(q_e, q_p):
    """Per-row 1 - (q_e . q_p)^2 on unit-normalised inputs."""
    if not ops.is_taped(q_e) and not ops.is_taped(q_p):
        a, b = value_of(q_e), value_of(q_p)
        na, nb = np.sum(a * a, axis=-1), np.sum(b * b, axis=-1)
        if np.any(na == 0) or np.any(nb == 0):
            raise ValueError("quaternion_loss on a zero quaternion")
        return np.clip(1.0 - np.sum(a * b, axis=-1) ** 2 / (na * nb), 0.0, 1.0)
    dot = ops.reduce_sum(ops.mul(q_e, q_p), axis=-1)
    norms = ops.mul(ops.reduce_sum(ops.square(q_e), axis=-1), ops.reduce_sum(ops.square(q_p), axis=-1))
    if np.any(value_of(norms) == 0):
        raise ValueError("quaternion_loss on a zero quaternion")
    return ops.sub(np.ones(1), ops.div(ops.square(dot), norms))


VECTOR_COLUMNS = np.r_[0:3, 7:13]


def dynamics_loss(pred_norm, target_norm, normalizer=None):
    """Mean over nodes of the squared error on vector deltas plus the rotation loss.

    Both arguments are in normalised delta space, where the rotation slot
    holds ``dq - identity``.  The rotation columns are mapped back through
    ``normalizer`` (if given) and offset by the identity before the
    quaternion loss.
    """
    if pred_norm.shape != target_norm.shape or pred_norm.shape[-1] != STATE_WIDTH:
        raise ValueError(f"dynamics_loss needs matching (n, 13) inputs, got {pred_norm.shape} and {target_norm.shape}")
    diff = ops.sub(pred_norm, target_norm)
    vec = ops.concat([ops.cols(diff, 0, 3), ops.cols(diff, 7, 13)], axis=-1)
    sq = ops.reduce_sum(ops.square(vec), axis=-1)
    qp, qt = ops.cols(pred_norm, 3, 7), ops.cols(target_norm, 3, 7)
    if normalizer is not None:
        qp = normalizer.denormalize_cols(qp, 3, 7)
        qt = normalizer.denormalize_cols(qt, 3, 7)
    qp = ops.add(qp, IDENTITY_QUAT) if ops.is_taped(qp) else value_of(qp) + IDENTITY_QUAT
    qt = value_of(qt) + IDENTITY_QUAT
    return ops.reduce_mean(ops.add(sq, quaternion_loss(qt, qp)))


# -- recentering ------------------------------------------------------------


def recenter(state, segments=None, axes=(0, 1, 2)):
    """Subtract the mean body position (per graph when ``segments`` given).

    Returns ``(centred_state, offset)`` where ``offset`` has one row per body.
    """
    s = value_of(state)
    mask = np.zeros(3)
    mask[list(axes)] = 1.0
    if segments is None:
        offset = np.broadcast_to(s[:, POS].mean(axis=0) * mask, (s.shape[0], 3)).copy()
    else:
        segments = np.asarray(segments)
        n = int(segments.max()) + 1
        sums = ops.segment_sum_array(s[:, POS], segments, n)
        counts = np.bincount(segments, minlength=n)[:, None]
        offset = (sums / counts)[segments] * mask
    return shift_positions(state, -offset), offset


def shift_positions(state, offset):
    pad = np.zeros((offset.shape[0], STATE_WIDTH))
    pad[:, POS] = offset
    return ops.add(state, pad) if ops.is_taped(state) else value_of(state) + pad


def uncenter(state, offset):
    return shift_positions(state, offset)


# -- evaluation -------------------------------------------------------------


def constant_baseline(initial, horizon: int) -> np.ndarray:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    initial = np.asarray(initial, dtype=np.float64)
    return np.repeat(initial[None], horizon, axis=0)


def group_errors(pred, true) -> dict[str, float]:
    """Summed squared error per group; orientation uses the quaternion loss."""
    pred, true = np.asarray(pred), np.asarray(true)
    out = {}
    for name, cols in GROUPS.items():
        if name == "orientation":
            out[name] = float(np.sum(quaternion_loss(true[..., cols], pred[..., cols])))
        else:
            out[name] = float(np.sum((pred[..., cols] - true[..., cols]) ** 2))
    return out


UNDEFINED_BASELINE = 1e-20


def error_metrics(pred_traj, true_traj, kind: str = "rollout") -> dict:
    """Error ratios against the constant-prediction baseline.

    Trajectories are ``(T, bodies, 13)`` with the shared initial state at index
    0.  For ``kind="rollout"`` the baseline repeats the initial state; for
    ``kind="one-step"`` it repeats the previous true state.  Groups whose
    baseline error vanishes are reported as NaN and left out of ``average``.
    """
    pred, true = np.asarray(pred_traj), np.asarray(true_traj)
    if pred.shape != true.shape:
        raise ValueError(f"trajectory shapes differ: {pred.shape} vs {true.shape}")
    if pred.shape[0] < 2:
        raise ValueError("trajectories need at least two states")
    if kind == "rollout":
        base = constant_baseline(true[0], len(true) - 1)
    elif kind == "one-step":
        base = true[:-1]
    else:
        raise ValueError(f"unknown metric kind {kind!r}")
    model_err = group_errors(pred[1:], true[1:])
    base_err = group_errors(base, true[1:])
    ratios, undefined = {}, []
    for name in GROUPS:
        if base_err[name] <= UNDEFINED_BASELINE:
            ratios[name] = float("nan")
            undefined.append(name)
        else:
            ratios[name] = model_err[name] / base_err[name]
    defined = [ratios[k] for k in GROUPS if k not in undefined]
    return {
        "ratios": ratios,
        "average": float(np.mean(defined)) if defined else float("nan"),
        "model_error": model_err,
        "baseline_error": base_err,
        "undefined": undefined,
    }
