import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from learnphys.diffcore.tape import value_of
from gradcheck import analytic_grads, numeric_grads, relative_error
from learnphys.state import (
    IDENTITY_QUAT,
    SystemState,
    apply_delta,
    body_state,
    constant_baseline,
    dynamics_loss,
    error_metrics,
    hamilton_product,
    identity_delta,
    infer_delta,
    quat_from_axis_angle,
    quat_normalize,
    quat_to_matrix,
    quaternion_loss,
    recenter,
    uncenter,
)

finite = st.floats(-3, 3, allow_nan=False)
quats = arrays(np.float64, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 0.1)


def random_states(rng, n=3):
    s = rng.normal(size=(n, 13))
    s[:, 3:7] = quat_normalize(s[:, 3:7])
    return s


def test_identity_quaternion_is_left_unit():
    q = np.array([0.3, -0.1, 0.5, 0.7])
    np.testing.assert_array_equal(hamilton_product(IDENTITY_QUAT, q), q)


def test_quarter_turn_twice_is_half_turn():
    qz = quat_from_axis_angle([0, 0, 1], np.pi / 2)
    q2 = hamilton_product(qz, qz)
    np.testing.assert_allclose(q2, [0, 0, 0, 1], atol=1e-12)
    # composition agrees with the rotation-matrix oracle
    np.testing.assert_allclose(quat_to_matrix(q2), quat_to_matrix(qz) @ quat_to_matrix(qz), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(quats, quats, quats)
def test_hamilton_algebra(a, b, c):
    ab = hamilton_product(a, b)
    assert abs(np.linalg.norm(ab) - np.linalg.norm(a) * np.linalg.norm(b)) < 1e-12 * max(1, np.linalg.norm(ab))
    ua, ub, uc = quat_normalize(a), quat_normalize(b), quat_normalize(c)
    left = hamilton_product(hamilton_product(ua, ub), uc)
    right = hamilton_product(ua, hamilton_product(ub, uc))
    np.testing.assert_allclose(left, right, atol=1e-12)
    np.testing.assert_allclose(hamilton_product(ua, IDENTITY_QUAT), ua, atol=1e-15)


def test_rotation_matrix_oracle_for_products():
    rng = np.random.default_rng(3)
    a, b = quat_normalize(rng.normal(size=4)), quat_normalize(rng.normal(size=4))
    np.testing.assert_allclose(quat_to_matrix(hamilton_product(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_apply_identity_delta():
    s = random_states(np.random.default_rng(0))
    np.testing.assert_allclose(apply_delta(s, identity_delta(3)), s, atol=1e-15)


def test_apply_position_delta():
    s = body_state()[None]
    d = identity_delta(1)
    d[0, :3] = [1, 0, 0]
    np.testing.assert_array_equal(apply_delta(s, d)[0, :3], [1, 0, 0])


def test_apply_rejects_bad_input():
    s = body_state()[None]
    with pytest.raises(ValueError):
        apply_delta(s, np.zeros((1, 13)))
    with pytest.raises(ValueError):
        apply_delta(s, identity_delta(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_delta_round_trip_and_unit_norm(seed):
    rng = np.random.default_rng(seed)
    s, s2 = random_states(rng), random_states(rng)
    out = apply_delta(s, infer_delta(s, s2))
    # q and -q are the same rotation; compare with a sign-invariant check
    np.testing.assert_allclose(out[:, [0, 1, 2, 7, 8, 9, 10, 11, 12]], s2[:, [0, 1, 2, 7, 8, 9, 10, 11, 12]], atol=1e-9)
    np.testing.assert_allclose(np.abs(np.sum(out[:, 3:7] * s2[:, 3:7], axis=1)), 1, atol=1e-9)
    d = rng.normal(size=(3, 13))
    np.testing.assert_allclose(np.linalg.norm(apply_delta(s, d)[:, 3:7], axis=1), 1, atol=1e-12)


def test_inferred_rotation_is_canonical():
    rng = np.random.default_rng(5)
    d = infer_delta(random_states(rng, 20), random_states(rng, 20))
    assert np.all(d[:, 3] >= 0)


def test_quaternion_loss_cases():
    q = np.array([0.5, 0.5, 0.5, 0.5])
    assert quaternion_loss(q, q) == pytest.approx(0, abs=1e-15)
    assert quaternion_loss(q, -q) == pytest.approx(0, abs=1e-15)
    assert quaternion_loss(np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0])) == 1.0
    with pytest.raises(ValueError):
        quaternion_loss(q, np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(quats, quats)
def test_quaternion_loss_range_and_sign(a, b):
    v = float(quaternion_loss(a, b))
    assert 0 <= v <= 1
    assert float(quaternion_loss(-a, b)) == pytest.approx(v, abs=1e-12)
    assert float(quaternion_loss(a, -b)) == pytest.approx(v, abs=1e-12)


def test_dynamics_loss_trivial_cases():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(4, 13))
    assert value_of(dynamics_loss(t, t)) == pytest.approx(0, abs=1e-12)
    p = t.copy()
    p[0, 8] += 2
    # one node of four off by 2 in a vector column
    assert value_of(dynamics_loss(p, t)) == pytest.approx(4 / 4, abs=1e-12)
    with pytest.raises(ValueError):
        dynamics_loss(t[:, :12], t[:, :12])


def test_dynamics_loss_gradient():
    rng = np.random.default_rng(2)
    target = rng.normal(size=(2, 13)) * 0.3
    pred = {"p": rng.normal(size=(2, 13)) * 0.3}
    fn = lambda ps: dynamics_loss(ps["p"], target)
    _, grads = analytic_grads(fn, pred)
    num = numeric_grads(fn, pred)
    assert relative_error([grads["p"]], [num["p"]]) < 1e-5


def test_recenter_cases():
    rng = np.random.default_rng(4)
    s = random_states(rng, 4)
    s[:, :3] -= s[:, :3].mean(axis=0)
    c, off = recenter(s)
    np.testing.assert_allclose(off, 0, atol=1e-15)
    moved = s.copy()
    moved[:, :3] += [5, 0, 0]
    np.testing.assert_allclose(recenter(moved)[0], c, atol=1e-12)
    c2, off2 = recenter(moved)
    np.testing.assert_allclose(uncenter(c2, off2), moved, atol=1e-12)


def test_recenter_per_segment():
    s = np.zeros((4, 13))
    s[:, 0] = [0, 2, 10, 20]
    c, off = recenter(s, segments=np.array([0, 0, 1, 1]))
    np.testing.assert_allclose(c[:, 0], [-1, 1, -5, 5])


def test_constant_baseline():
    s = random_states(np.random.default_rng(0), 2)
    assert constant_baseline(s, 1).shape == (1, 2, 13)
    b = constant_baseline(s, 3)
    assert all(np.array_equal(x, s) for x in b)
    with pytest.raises(ValueError):
        constant_baseline(s, 0)


def trajectory(rng, T=4):
    traj = np.stack([random_states(rng, 2) for _ in range(T)])
    return traj


def test_metrics_perfect_and_baseline():
    rng = np.random.default_rng(7)
    true = trajectory(rng)
    m = error_metrics(true, true)
    assert m["average"] == 0 and all(v == 0 for v in m["ratios"].values())
    base = np.concatenate([true[:1], constant_baseline(true[0], 3)])
    m = error_metrics(base, true)
    assert all(v == pytest.approx(1) for v in m["ratios"].values())
    assert error_metrics(base, base)["undefined"] == ["position", "orientation", "linear_velocity", "angular_velocity"]


def test_metrics_brute_force_oracle():
    rng = np.random.default_rng(8)
    true, pred = trajectory(rng), trajectory(rng)
    pred[0] = true[0]
    m = error_metrics(pred, true)
    # spreadsheet-style: loop over steps, bodies and columns
    model = base = 0.0
    for t in range(1, 4):
        for b in range(2):
            for c in (0, 1, 2):
                model += (pred[t, b, c] - true[t, b, c]) ** 2
                base += (true[0, b, c] - true[t, b, c]) ** 2
    assert m["ratios"]["position"] == pytest.approx(model / base, rel=1e-12)
    qm = sum(1 - np.dot(true[t, b, 3:7], pred[t, b, 3:7]) ** 2 for t in range(1, 4) for b in range(2))
    qb = sum(1 - np.dot(true[t, b, 3:7], true[0, b, 3:7]) ** 2 for t in range(1, 4) for b in range(2))
    assert m["ratios"]["orientation"] == pytest.approx(qm / qb, rel=1e-9)
    assert m["average"] == pytest.approx(np.mean(list(m["ratios"].values())))


def test_metrics_errors():
    rng = np.random.default_rng(9)
    t = trajectory(rng)
    with pytest.raises(ValueError):
        error_metrics(t[:3], t)
    with pytest.raises(ValueError):
        error_metrics(t[:1], t[:1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.one_of(st.just(0.0), st.floats(1e-6, 1)))
def test_metrics_zero_iff_identical(seed, eps):
    rng = np.random.default_rng(seed)
    true = trajectory(rng)
    pred = true.copy()
    pred[1:, :, :3] += eps
    zero = error_metrics(pred, true)["average"] == 0
    assert zero == (eps == 0)


def test_system_state_shape_check():
    assert SystemState(np.zeros((2, 13))).num_bodies == 2
    with pytest.raises(ValueError):
        SystemState(np.zeros((2, 12)))
