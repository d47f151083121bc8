import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqnio.group import (R90, YawFrame, act_accel, act_cov, act_omega, cov_rep, lift3, sample_frames, vec)

angles = st.floats(-np.pi, np.pi, allow_nan=False)
frames = st.builds(lambda th, refl: YawFrame.rotation(th) @ (YawFrame.reflection(0.0) if refl else YawFrame.identity()),
                   angles, st.booleans())
vec3 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)

ROT90 = YawFrame.rotation(np.pi / 2)
FLIP_Y = YawFrame(np.diag([1.0, -1.0]))


def random_psd(rng):
    A = rng.normal(size=(3, 3))
    return A @ A.T + 0.1 * np.eye(3)


def test_lift3_examples():
    assert np.array_equal(lift3(YawFrame.identity()), np.eye(3))
    np.testing.assert_allclose(lift3(ROT90), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_array_equal(lift3(FLIP_Y), np.diag([1.0, -1.0, 1.0]))


def test_act_accel_examples():
    np.testing.assert_array_equal(act_accel(YawFrame.identity(), [1, 2, 3]), [1, 2, 3])
    np.testing.assert_allclose(act_accel(ROT90, [1, 0, 5]), [0, 1, 5], atol=1e-15)
    np.testing.assert_array_equal(act_accel(FLIP_Y, [1, 2, 3]), [1, -2, 3])


def test_act_omega_examples():
    w = np.array([0.3, -1.2, 2.0])
    np.testing.assert_array_equal(act_omega(YawFrame.identity(), w), w)
    f = YawFrame.rotation(0.7)
    np.testing.assert_array_equal(act_omega(f, w), act_accel(f, w))
    np.testing.assert_array_equal(act_omega(FLIP_Y, [0, 0, 1]), [0, 0, -1])


def test_act_cov_examples(rng):
    S = np.diag([1.0, 4.0, 9.0])
    np.testing.assert_array_equal(act_cov(YawFrame.identity(), S), S)
    np.testing.assert_allclose(act_cov(ROT90, S), np.diag([4.0, 1.0, 9.0]), atol=1e-14)
    P = random_psd(rng)
    out = act_cov(YawFrame.rotation(1.1) @ FLIP_Y, P)
    np.testing.assert_allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(P), rtol=1e-12)


def test_cov_rep_is_kron_of_lift(rng):
    f = YawFrame.rotation(0.4) @ FLIP_Y
    P = random_psd(rng)
    np.testing.assert_allclose(cov_rep(f) @ vec(P), vec(act_cov(f, P)), atol=1e-13)


@given(frames, frames, vec3)
def test_homomorphism(f, g, x):
    fg = f @ g
    np.testing.assert_allclose(act_accel(fg, x), act_accel(f, act_accel(g, x)), atol=1e-12)
    np.testing.assert_allclose(act_omega(fg, x), act_omega(f, act_omega(g, x)), atol=1e-12)
    S = np.outer(x, x) + np.eye(3)
    np.testing.assert_allclose(act_cov(fg, S), act_cov(f, act_cov(g, S)), atol=1e-10)


@given(frames, vec3)
def test_omega_vs_accel_and_z(f, x):
    a, w = act_accel(f, x), act_omega(f, x)
    assert a[2] == x[2]
    np.testing.assert_allclose(w, f.det * a, atol=0)


@given(frames, st.integers(0, 2**31))
def test_act_cov_preserves_invariants(f, seed):
    P = random_psd(np.random.default_rng(seed))
    out = act_cov(f, P)
    np.testing.assert_allclose(out, out.T, atol=1e-12)
    assert abs(np.trace(out) - np.trace(P)) < 1e-10
    assert abs(np.linalg.det(out) - np.linalg.det(P)) < 1e-10 * max(1.0, abs(np.linalg.det(P)))


def test_frame_orthogonality_and_reorthonormalization():
    for f in sample_frames(np.random.default_rng(0), 16):
        assert np.allclose(f.m.T @ f.m, np.eye(2), atol=1e-12)
        assert abs(abs(np.linalg.det(f.m)) - 1) < 1e-12
    noisy = YawFrame(np.array([[1.0, 1e-3], [0.0, 1.0]]))
    np.testing.assert_allclose(noisy.m.T @ noisy.m, np.eye(2), atol=1e-12)
    with pytest.raises(ValueError):
        YawFrame(np.array([[np.nan, 0], [0, 1]]))
    np.testing.assert_allclose(R90, [[0, -1], [1, 0]])


def test_sample_frames_mixes_reflections():
    fs = sample_frames(np.random.default_rng(3), 16)
    dets = [f.det for f in fs]
    assert dets.count(-1.0) == 8 and dets.count(1.0) == 8
    assert all(f.det == 1.0 for f in sample_frames(np.random.default_rng(3), 8, reflections=False))
