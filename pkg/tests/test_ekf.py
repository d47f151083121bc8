import numpy as np
import pytest

from eqnio.ekf import (CUR, FilterConfig, NoiseParams, augment_state, drop_clones, floor_covariance,
                       ground_truth_prior, initial_state, measurement_update, propagate, run_filter)
from eqnio.evaluation import ate
from eqnio.imu import GRAVITY, ImuSample, ImuSequence, SimConfig, integrate_imu, rotate_world, simulate_trajectory
from eqnio.so3 import euler_xyz, exp_so3, rot_z

RATE = 200.0


def still_imu(seconds, omega=(0.0, 0.0, 0.0)):
    n = int(seconds * RATE) + 1
    t = np.arange(n) / RATE
    return ImuSequence(t, np.tile(omega, (n, 1)).astype(float), np.tile(-GRAVITY, (n, 1)))


@pytest.fixture(scope="module")
def walk():
    return simulate_trajectory(SimConfig(duration=20.0), 21)


def truth_init(poses):
    return initial_state(poses.rot[0], poses.vel[0], poses.pos[0])


def is_psd(P, rel=1e-12):
    return np.linalg.eigvalsh(P).min() >= -rel * max(1.0, np.abs(P).max())


# ------------------------------------------------------------ propagation


def test_stationary_drift_is_exactly_zero():
    imu = still_imu(10.0)
    init = initial_state(np.eye(3), np.zeros(3), np.zeros(3))
    res = run_filter(imu, None, init)
    assert np.all(res.poses.pos == 0.0) and np.all(res.poses.vel == 0.0)
    zero = lambda win: (np.zeros(3), 1e-4 * np.eye(3))  # noqa: E731
    res = run_filter(imu, zero, init)
    assert res.updates > 0
    assert np.all(res.poses.pos == 0.0) and np.all(res.poses.vel == 0.0)


def test_constant_yaw_rate_closed_form():
    w = 0.3
    imu = still_imu(5.0, omega=(0.0, 0.0, w))
    res = run_filter(imu, None, initial_state(np.eye(3), np.zeros(3), np.zeros(3)))
    expected = np.array([rot_z(w * t) for t in imu.t])
    assert np.max(np.abs(res.poses.rot - expected)) < 1e-12
    assert euler_xyz(res.poses.rot[-1])[2] == pytest.approx(np.angle(np.exp(1j * w * imu.t[-1])), abs=1e-12)


def test_no_prior_equals_strapdown(walk):
    poses, imu = walk
    res = run_filter(imu, None, truth_init(poses))
    ref = integrate_imu(imu, poses.rot[0], poses.vel[0], poses.pos[0], method="euler")
    assert np.max(np.abs(res.poses.pos - ref.pos)) < 1e-8
    assert np.max(np.abs(res.poses.rot - ref.rot)) < 1e-12


def test_covariance_trace_grows_without_updates(rng):
    state = initial_state(np.eye(3), np.zeros(3), np.zeros(3))
    traces = [np.trace(state.P)]
    for _ in range(200):
        s = ImuSample(0.0, rng.normal(size=3) * 0.2, -GRAVITY + rng.normal(size=3))
        state = propagate(state, s, 1 / RATE)
        traces.append(np.trace(state.P))
    assert np.all(np.diff(traces) >= 0)


def test_rejects_bad_samples():
    state = initial_state(np.eye(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        propagate(state, ImuSample(0.0, np.array([np.nan, 0, 0]), np.zeros(3)), 0.005)
    with pytest.raises(ValueError):
        propagate(state, ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.0)
    with pytest.raises(ValueError):
        NoiseParams(gyro=-1.0)
    with pytest.raises(ValueError):
        FilterConfig(window=200, update_stride=30)


# --------------------------------------------------------------- clones


def test_augment_copies_marginal(rng):
    A = rng.normal(size=(CUR, CUR))
    state = initial_state(exp_so3(rng.normal(size=3)), rng.normal(size=3), rng.normal(size=3))
    state.P = A @ A.T
    out = augment_state(state, 7)
    P = out.P
    assert P.shape == (CUR + 6, CUR + 6)
    assert np.array_equal(P, P.T)
    # the clone block equals the current (theta, p) block and is fully correlated with it
    sel = np.r_[0:3, 6:9]
    assert np.allclose(P[:6, :6], state.P[np.ix_(sel, sel)])
    assert np.allclose(P[:6, 6:], state.P[sel])
    assert np.allclose(P[6:, 6:], state.P)
    assert out.clone_idx == [7] and np.array_equal(out.clone_pos[0], state.pos)


def test_propagate_with_clone_matches_two_steps(rng):
    state = augment_state(initial_state(np.eye(3), np.zeros(3), np.zeros(3)), 0)
    s = ImuSample(0.0, rng.normal(size=3), -GRAVITY + rng.normal(size=3))
    one = propagate(state, s, 1 / RATE, augment=True, sample_index=1)
    two = augment_state(propagate(state, s, 1 / RATE), 1)
    assert np.allclose(one.P, two.P, atol=1e-15)
    assert np.allclose(one.clone_rot[-1], two.clone_rot[-1])


def test_drop_clones_marginalizes():
    state = initial_state(np.eye(3), np.zeros(3), np.zeros(3))
    for k in range(3):
        state = augment_state(state, k)
    out = drop_clones(state, 2)
    assert out.n_clones == 1 and out.clone_idx == [2]
    assert np.array_equal(out.P, state.P[12:, 12:])
    assert drop_clones(state, 0) is state


# ---------------------------------------------------------------- update


def two_clone_state(p_j, sigma_p=0.5):
    state = initial_state(np.eye(3), np.zeros(3), np.zeros(3), sigmas=(1e-4, 1e-2, sigma_p, 1e-3, 1e-2))
    state = augment_state(state, 0)
    state.pos = np.asarray(p_j, dtype=float)
    # uncertainty accrued between the clones, standing in for propagation
    state.P[6 + 6:6 + 9, 6 + 6:6 + 9] += sigma_p**2 * np.eye(3)
    return augment_state(state, 1)


def test_perfect_measurement_reduces_error():
    truth = np.array([1.2, -0.4, 0.1])
    state = two_clone_state([1.0, 0.0, 0.0])
    out, info = measurement_update(state, truth, 1e-6 * np.eye(3), 0, 1)
    assert info.applied
    before = np.linalg.norm(state.clone_pos[1] - state.clone_pos[0] - truth)
    after = np.linalg.norm(out.clone_pos[1] - out.clone_pos[0] - truth)
    assert after < 1e-2 * before
    assert np.trace(out.P) < np.trace(state.P)


def test_uninformative_measurement_leaves_state():
    state = two_clone_state([1.0, 0.0, 0.0])
    out, info = measurement_update(state, [5.0, 5.0, 5.0], 1e14 * np.eye(3), 0, 1)
    assert info.applied
    assert np.max(np.abs(out.pos - state.pos)) < 1e-10
    assert np.max(np.abs(out.P - state.P)) < 1e-10


def test_innovation_sign_is_measurement_minus_prediction():
    state = two_clone_state([1.0, 0.0, 0.0])
    _, info = measurement_update(state, [1.5, 0.0, 0.0], np.eye(3), 0, 1)
    assert np.allclose(info.innovation, [0.5, 0.0, 0.0])


def test_covariance_floor_and_scale():
    S = floor_covariance(np.diag([1e-9, 2.0, -1.0]), floor=1e-6, scale=3.0)
    assert np.allclose(np.diag(S), [3e-6, 6.0, 3e-6])


def test_pitch_guard_skips_update():
    state = two_clone_state([1.0, 0.0, 0.0])
    state.clone_rot[0] = exp_so3([0.0, np.deg2rad(88.0), 0.0])
    out, info = measurement_update(state, [1.0, 0.0, 0.0], np.eye(3), 0, 1)
    assert not info.applied and out is state


def test_thousand_updates_keep_covariance_psd(rng):
    state = augment_state(initial_state(np.eye(3), np.zeros(3), np.zeros(3)), 0)
    for k in range(1, 1001):
        for _ in range(3):
            s = ImuSample(0.0, rng.normal(size=3) * 0.3, -GRAVITY + rng.normal(size=3))
            state = propagate(state, s, 1 / RATE)
        state = augment_state(state, k)
        A = rng.normal(size=(3, 3))
        sigma = A @ A.T * 10.0 ** rng.uniform(-6, 0)
        state, _ = measurement_update(state, rng.normal(size=3) * 0.05, sigma, state.n_clones - 2,
                                      state.n_clones - 1)
        state = drop_clones(state, state.n_clones - 4)
        assert np.array_equal(state.P, state.P.T)
        assert is_psd(state.P), k


# ------------------------------------------------------------ full filter


def test_filter_is_deterministic(walk):
    poses, imu = walk
    a = run_filter(imu, ground_truth_prior(poses, 200), truth_init(poses))
    b = run_filter(imu, ground_truth_prior(poses, 200), truth_init(poses))
    assert np.array_equal(a.poses.pos, b.poses.pos) and np.array_equal(a.P_last, b.P_last)


def test_ground_truth_prior_beats_strapdown(walk):
    poses, imu = walk
    fused = run_filter(imu, ground_truth_prior(poses, 200), truth_init(poses))
    dead = run_filter(imu, None, truth_init(poses))
    assert fused.skipped == 0 and fused.updates == (len(imu) - 1 - 200) // 20 + 1
    assert ate(fused.poses.pos, poses.pos) * 10 <= ate(dead.poses.pos, poses.pos)


def test_gyro_bias_estimate_within_three_sigma(walk):
    poses, imu = walk
    res = run_filter(imu, ground_truth_prior(poses, 200), truth_init(poses))
    m = res.P_last.shape[0] - CUR
    std = np.sqrt(np.diag(res.P_last)[m + 9:m + 12])
    assert np.all(np.abs(res.bg[-1] - imu.bias_gyro[-1]) <= 3 * std)


def test_yaw_rotated_world_gives_rotated_trajectory(walk):
    poses, imu = walk
    theta = 1.1
    moved = rotate_world(poses, theta)
    a = run_filter(imu, ground_truth_prior(poses, 200), truth_init(poses))
    b = run_filter(imu, ground_truth_prior(moved, 200), truth_init(moved))
    assert np.max(np.abs(b.poses.pos - a.poses.pos @ rot_z(theta).T)) < 1e-6
