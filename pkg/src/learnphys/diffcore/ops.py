"""Differentiable ops.

Every op is a forward function plus a vector-Jacobian product.  The VJP gets
``needs`` (one flag per input) so it can skip work for constant operands.
"""

from __future__ import annotations

import numpy as np

from .tape import DTYPE, ShapeError, Tensor, apply, register, value_of


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b, **_):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ------------------------------------------------------

register(
    "add",
    lambda a, b: a + b,
    lambda g, out, v, n: (
        _unbroadcast(g, v[0].shape) if n[0] else None,
        _unbroadcast(g, v[1].shape) if n[1] else None,
    ),
    _check_broadcast,
)
register(
    "sub",
    lambda a, b: a - b,
    lambda g, out, v, n: (
        _unbroadcast(g, v[0].shape) if n[0] else None,
        _unbroadcast(-g, v[1].shape) if n[1] else None,
    ),
    _check_broadcast,
)
register(
    "mul",
    lambda a, b: a * b,
    lambda g, out, v, n: (
        _unbroadcast(g * v[1], v[0].shape) if n[0] else None,
        _unbroadcast(g * v[0], v[1].shape) if n[1] else None,
    ),
    _check_broadcast,
)
register(
    "div",
    lambda a, b: a / b,
    lambda g, out, v, n: (
        _unbroadcast(g / v[1], v[0].shape) if n[0] else None,
        _unbroadcast(-g * out / v[1], v[1].shape) if n[1] else None,
    ),
    _check_broadcast,
)


def _check_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")


register(
    "matmul",
    lambda a, b: a @ b,
    lambda g, out, v, n: (
        g @ v[1].T if n[0] else None,
        v[0].T @ g if n[1] else None,
    ),
    _check_matmul,
)


def _atan2_vjp(g, out, v, n):
    y, x = v
    r2 = x * x + y * y
    safe = np.where(r2 > 0, r2, 1.0)
    gy = np.where(r2 > 0, g * x / safe, 0.0)
    gx = np.where(r2 > 0, -g * y / safe, 0.0)
    return (gy if n[0] else None, gx if n[1] else None)


register("atan2", np.arctan2, _atan2_vjp, _check_broadcast)

# -- elementwise unary -------------------------------------------------------

register("relu", lambda a: np.maximum(a, 0.0), lambda g, out, v, n: (g * (v[0] > 0),))


def _sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


register("sigmoid", _sigmoid, lambda g, out, v, n: (g * out * (1.0 - out),))
register("tanh", np.tanh, lambda g, out, v, n: (g * (1.0 - out * out),))
register("square", np.square, lambda g, out, v, n: (2.0 * g * v[0],))


def _sqrt_vjp(g, out, v, n):
    # derivative at 0 is taken as 0 (same convention as relu)
    safe = np.where(out > 0, out, 1.0)
    return (np.where(out > 0, 0.5 * g / safe, 0.0),)


register("sqrt", np.sqrt, _sqrt_vjp)
register("abs", np.abs, lambda g, out, v, n: (g * np.sign(v[0]),))
register("scalar_mul", lambda a, c: a * c, lambda g, out, v, n, c: (g * c,))

# -- reductions and shape ops ------------------------------------------------


def _sum_fwd(a, axis=None, keepdims=False):
    return np.asarray(np.sum(a, axis=axis, keepdims=keepdims), dtype=DTYPE)


def _sum_vjp(g, out, v, n, axis=None, keepdims=False):
    a = v[0]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _mean_fwd(a, axis=None, keepdims=False):
    return np.asarray(np.mean(a, axis=axis, keepdims=keepdims), dtype=DTYPE)


def _mean_vjp(g, out, v, n, axis=None, keepdims=False):
    a = v[0]
    count = a.size if axis is None else a.shape[axis]
    (ga,) = _sum_vjp(g, out, v, n, axis=axis, keepdims=keepdims)
    return (ga / count,)


register("sum", _sum_fwd, _sum_vjp)
register("mean", _mean_fwd, _mean_vjp)


def _concat_check(*arrays, axis=-1):
    ref = arrays[0]
    ax = axis % ref.ndim
    for a in arrays[1:]:
        if a.ndim != ref.ndim or any(
            a.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(
                f"cannot concatenate shapes {ref.shape} and {a.shape} on axis {axis}"
            )


def _concat_vjp(g, out, v, n, axis=-1):
    sizes = [a.shape[axis] for a in v]
    cuts = np.cumsum(sizes)[:-1]
    parts = np.split(g, cuts, axis=axis)
    return tuple(p if need else None for p, need in zip(parts, n))


register(
    "concat",
    lambda *arrays, axis=-1: np.concatenate(arrays, axis=axis),
    _concat_vjp,
    _concat_check,
)


def _cols_vjp(g, out, v, n, start, stop):
    full = np.zeros_like(v[0])
    full[..., start:stop] = g
    return (full,)


def _cols_check(a, start, stop):
    if not 0 <= start <= stop <= a.shape[-1]:
        raise ShapeError(f"column range [{start}, {stop}) outside width {a.shape[-1]}")


register("take_cols", lambda a, start, stop: a[..., start:stop].copy(), _cols_vjp, _cols_check)


def segment_sum_array(values, segment_ids, num_segments):
    """Sum rows of ``values`` into ``num_segments`` buckets, in row order."""
    out = np.zeros((num_segments,) + values.shape[1:], dtype=DTYPE)
    if len(segment_ids):
        np.add.at(out, segment_ids, values)
    return out


def _gather_check(a, index):
    if len(index) and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather index out of range for {a.shape[0]} rows")


register(
    "gather",
    lambda a, index: a[index],
    lambda g, out, v, n, index: (segment_sum_array(g, index, v[0].shape[0]),),
    _gather_check,
)


def _segsum_check(a, segment_ids, num_segments):
    if len(segment_ids) != a.shape[0]:
        raise ShapeError(f"{len(segment_ids)} segment ids for {a.shape[0]} rows")


register(
    "segment_sum",
    segment_sum_array,
    lambda g, out, v, n, segment_ids, num_segments: (g[segment_ids],),
    _segsum_check,
)
register(
    "reshape",
    lambda a, shape: a.reshape(shape),
    lambda g, out, v, n, shape: (g.reshape(v[0].shape),),
)

# -- quaternion helpers (rows of w, x, y, z) ---------------------------------


def quat_mul_array(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def _conj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _quat_mul_vjp(g, out, v, n):
    a, b = v
    # d(a*b) = da*b + a*db ; adjoints: ga = g * conj(b), gb = conj(a) * g
    ga = quat_mul_array(g, _conj(b)) if n[0] else None
    gb = quat_mul_array(_conj(a), g) if n[1] else None
    if ga is not None:
        ga = _unbroadcast(ga, a.shape)
    if gb is not None:
        gb = _unbroadcast(gb, b.shape)
    return (ga, gb)


def _quat_check(a, b):
    if a.shape[-1] != 4 or b.shape[-1] != 4:
        raise ShapeError(f"quaternion rows need width 4, got {a.shape} and {b.shape}")
    _check_broadcast(a, b)


register("quat_mul", quat_mul_array, _quat_mul_vjp, _quat_check)


def _normalize_rows_fwd(a):
    norm = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("cannot normalize a zero-norm row")
    return a / norm


def _normalize_rows_vjp(g, out, v, n):
    norm = np.sqrt(np.sum(v[0] * v[0], axis=-1, keepdims=True))
    proj = np.sum(out * g, axis=-1, keepdims=True)
    return ((g - out * proj) / norm,)


register("normalize_rows", _normalize_rows_fwd, _normalize_rows_vjp)


# -- functional front-end ----------------------------------------------------


def matmul(a, b):
    return apply("matmul", a, b)


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def div(a, b):
    return apply("div", a, b)


def relu(a):
    return apply("relu", a)


def sigmoid(a):
    return apply("sigmoid", a)


def tanh(a):
    return apply("tanh", a)


def square(a):
    return apply("square", a)


def sqrt(a):
    return apply("sqrt", a)


def absolute(a):
    return apply("abs", a)


def atan2(y, x):
    return apply("atan2", y, x)


def scalar_mul(a, c: float):
    return apply("scalar_mul", a, c=float(c))


def reduce_sum(a, axis=None, keepdims=False):
    return apply("sum", a, axis=axis, keepdims=keepdims)


def reduce_mean(a, axis=None, keepdims=False):
    return apply("mean", a, axis=axis, keepdims=keepdims)


def take_cols(a, start: int, stop: int):
    return apply("take_cols", a, start=int(start), stop=int(stop))


def gather(a, index):
    return apply("gather", a, index=np.asarray(index, dtype=np.int64))


def segment_sum(a, segment_ids, num_segments: int):
    return apply(
        "segment_sum",
        a,
        segment_ids=np.asarray(segment_ids, dtype=np.int64),
        num_segments=int(num_segments),
    )


def reshape(a, shape):
    return apply("reshape", a, shape=tuple(shape))


def quat_mul(a, b):
    return apply("quat_mul", a, b)


def normalize_rows(a):
    return apply("normalize_rows", a)


def is_taped(x) -> bool:
    return isinstance(x, Tensor) and x.tape is not None


def concat(parts, axis=-1):
    """Concatenate arrays/tensors; stays in numpy when nothing is taped."""
    parts = list(parts)
    if not any(is_taped(p) for p in parts):
        return np.concatenate([value_of(p) for p in parts], axis=axis)
    return apply("concat", *parts, axis=axis)


def cols(a, start, stop):
    """Column slice that stays in numpy for untaped input."""
    if not is_taped(a):
        return value_of(a)[..., start:stop]
    return take_cols(a, start, stop)


def rows(a, index):
    if not is_taped(a):
        return value_of(a)[np.asarray(index, dtype=np.int64)]
    return gather(a, index)


def seg_sum(a, segment_ids, num_segments):
    if not is_taped(a):
        return segment_sum_array(value_of(a), np.asarray(segment_ids, dtype=np.int64), num_segments)
    return segment_sum(a, segment_ids, num_segments)
