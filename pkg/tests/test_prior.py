import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqnio.canonical import PriorOutput, decanonicalize
from eqnio.group import YawFrame, act_accel, act_cov, sample_frames
from eqnio.imu import SimConfig, simulate_trajectory
from eqnio.prior import (Adam, AugmentConfig, ModelConfig, PriorModel, TrainConfig, WindowSet, augment,
                         build_windows, evaluate_mse, loss_mle, loss_mse, mle_canonical, mse_canonical,
                         outputs_to_world, pca_frames, pearson_cov, train)

TINY = dict(window=40, frame_hidden=4, frame_blocks=1, frame_kernel=3, width=8, blocks=1, kernel=3)


def random_frames(rng, B, reflections=True):
    return np.stack([f.m for f in sample_frames(rng, B, reflections)])


@pytest.fixture(scope="module")
def small_data():
    poses, imu = simulate_trajectory(SimConfig(duration=12.0), 5)
    return build_windows(poses, imu, n=40, stride=20)


# ---------------------------------------------------------------- losses


def test_mse_worked_example():
    assert loss_mse([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]) == pytest.approx(14.0 / 3.0)


def test_mle_worked_examples():
    ident = PriorOutput(np.zeros(3), np.eye(3))
    assert loss_mle(ident, [1.0, 0.0, 0.0]) == pytest.approx(0.5)
    wide = PriorOutput(np.zeros(3), np.diag(np.exp([1.0, 0.0, 0.0])))
    assert loss_mle(wide, [1.0, 0.0, 0.0]) == pytest.approx(0.5 * np.exp(-1.0) + 0.5)


@pytest.mark.parametrize("cov", ["eq", "invariant", "pearson"])
def test_canonical_mle_matches_world_frame_loss(cov, rng):
    B = 6
    cfg = ModelConfig(mode="o2", cov=cov)
    F = random_frames(rng, B)
    d_c = rng.normal(size=(B, 3))
    u = 0.3 * rng.normal(size=(B, 6 if cov == "pearson" else 3))
    target = rng.normal(size=(B, 3))
    if cov == "pearson":
        u[:, 3:] *= 0.3  # keep the correlation matrix well inside the PD cone
    loss, *_ = mle_canonical(d_c, u, F, target, cov)
    world = outputs_to_world(cfg, d_c, u, F)
    assert loss == pytest.approx(loss_mle(world, target), abs=1e-10)


def test_canonical_mse_matches_world_frame_loss(rng):
    F = random_frames(rng, 5)
    d_c, target = rng.normal(size=(2, 5, 3))
    loss, _, _ = mse_canonical(d_c, F, target)
    world = decanonicalize(d_c, np.zeros((5, 3)), F)
    assert loss == pytest.approx(loss_mse(world.d, target), abs=1e-12)


@given(seed=st.integers(0, 2**16), theta=st.floats(-np.pi, np.pi), reflect=st.booleans())
def test_mle_invariant_under_joint_rotation(seed, theta, reflect):
    r = np.random.default_rng(seed)
    A = r.normal(size=(3, 3))
    S = A @ A.T + 0.1 * np.eye(3)
    pred = PriorOutput(r.normal(size=3), S)
    target = r.normal(size=3)
    f = YawFrame.rotation(theta)
    if reflect:
        f = f @ YawFrame.reflection(0.4)
    moved = PriorOutput(act_accel(f, pred.d), act_cov(f, pred.sigma))
    assert abs(loss_mle(moved, act_accel(f, target)) - loss_mle(pred, target)) < 1e-10


def test_pearson_covariance_can_leave_the_pd_cone():
    # three strong correlations of inconsistent sign have no valid joint covariance
    u = np.array([0.0, 0.0, 0.0, np.arctanh(0.99), np.arctanh(-0.99), np.arctanh(0.99)])
    S, rho, _ = pearson_cov(u)
    assert np.allclose(np.diag(S), 1.0) and np.allclose(rho, [0.99, -0.99, 0.99])
    assert np.linalg.eigvalsh(S).min() < 0


def test_invariant_covariance_ignores_frame(rng):
    cfg = ModelConfig(mode="so2", cov="invariant")
    u = rng.normal(size=(1, 3))
    a = outputs_to_world(cfg, np.zeros((1, 3)), u, random_frames(rng, 1, False))
    b = outputs_to_world(cfg, np.zeros((1, 3)), u, np.eye(2)[None])
    assert np.allclose(a.sigma, b.sigma)
    assert np.allclose(a.sigma[0], np.diag(np.exp(2 * u[0])))


# ----------------------------------------------------------- augmentation


def test_augment_disabled_is_identity(rng):
    a, w, t = rng.normal(size=(3, 4, 10, 3))
    out = augment(a, w, t[:, 0], rng, AugmentConfig())
    assert out[0] is a and out[1] is w


def test_quarter_turn_augmentation_rotates_target():
    class Quarter:
        # stands in for a generator whose uniform draw is always +pi/2
        def uniform(self, lo, hi):
            return np.pi / 2

        def random(self):
            return 1.0

    accel = np.tile([1.0, 0.0, 9.81], (1, 5, 1))
    gyro = np.tile([0.1, 0.0, 0.3], (1, 5, 1))
    target = np.array([[2.0, 0.0, 0.5]])
    a, w, t = augment(accel, gyro, target, Quarter(), AugmentConfig(yaw=True))
    assert np.allclose(t, [[0.0, 2.0, 0.5]])
    assert np.allclose(a[0, 0], [0.0, 1.0, 9.81])
    assert np.allclose(w[0, 0], [0.0, 0.1, 0.3])


def test_tilt_augmentation_bounded_and_target_untouched(rng):
    g = 9.81
    accel = np.tile([0.0, 0.0, g], (50, 4, 1))
    target = rng.normal(size=(50, 3))
    a, _, t = augment(accel, np.zeros_like(accel), target, rng, AugmentConfig(tilt_deg=5.0))
    horiz = np.linalg.norm(a[..., :2], axis=-1)
    assert horiz.max() <= np.sin(np.deg2rad(5.0)) * g + 1e-12
    assert horiz.max() > 0
    assert np.array_equal(t, target)


def test_reflection_augmentation_flips_gyro_pseudovector():
    class Mirror:
        def uniform(self, lo, hi):
            return 0.0

        def random(self):
            return 0.0

    w = np.array([[[0.0, 0.0, 1.0]]])
    _, w_out, _ = augment(np.zeros_like(w), w, np.zeros((1, 3)), Mirror(), AugmentConfig(reflect=True))
    # a yaw rate changes handedness under a mirror
    assert np.allclose(w_out[0, 0], [0.0, 0.0, -1.0])


# --------------------------------------------------------------- training


def test_zero_learning_rate_keeps_parameters(small_data):
    cfg = ModelConfig(mode="o2", dtype="float64", **TINY)
    res = train(small_data, cfg, TrainConfig(epochs_mse=1, epochs_mle=1, lr=0.0, batch=8))
    init = PriorModel.init(cfg, 0)
    for k, v in init.params.items():
        assert np.array_equal(res.model.params[k], v)


def test_training_reduces_loss(small_data):
    cfg = ModelConfig(mode="so2", **TINY)
    res = train(small_data, cfg, TrainConfig(epochs_mse=6, epochs_mle=0, lr=3e-3, batch=8))
    losses = [h["loss"] for h in res.history]
    assert losses[-1] < losses[0]
    assert evaluate_mse(res.model, small_data) < evaluate_mse(PriorModel.init(cfg, 0), small_data)


def test_training_is_deterministic(small_data):
    cfg = ModelConfig(mode="o2", **TINY)
    tc = TrainConfig(epochs_mse=1, epochs_mle=1, batch=8, augment=AugmentConfig(yaw=True, reflect=True))
    a = train(small_data, cfg, tc).model.params
    b = train(small_data, cfg, tc).model.params
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_resume_matches_uninterrupted_run(small_data):
    cfg = ModelConfig(mode="o2", **TINY)
    tc = TrainConfig(epochs_mse=1, epochs_mle=2, batch=8, augment=AugmentConfig(yaw=True, tilt_deg=2.0))
    saved = {}

    def snapshot(epoch, model, adam, row):
        if epoch == 1:
            saved["params"] = {k: v.copy() for k, v in model.params.items()}
            saved["adam"] = {k: np.copy(v) for k, v in adam.state().items()}

    full = train(small_data, cfg, tc, on_epoch=snapshot)
    adam = Adam()
    adam.load(saved["adam"])
    resumed = train(small_data, cfg, tc, model=PriorModel(cfg, saved["params"]), adam=adam, start_epoch=2)
    assert resumed.epochs_done == 3
    for k, v in full.model.params.items():
        assert np.array_equal(resumed.model.params[k], v), k


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs_mse=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch=0)
    assert [TrainConfig(epochs_mse=2, epochs_mle=1).stage(e) for e in range(3)] == ["mse", "mse", "mle"]


def test_window_set_shapes(small_data):
    assert small_data.accel.shape == (len(small_data), 40, 3)
    assert small_data.target.shape == (len(small_data), 3)
    sub = small_data.subset([0, 2])
    assert len(sub) == 2
    with pytest.raises(ValueError):
        WindowSet(np.zeros((2, 4, 3)), np.zeros((2, 5, 3)), np.zeros((2, 3)))


# ---------------------------------------------------------- frame variants


def test_identity_frame_model(small_data):
    model = PriorModel.init(ModelConfig(mode="so2", frame="identity", **TINY), 0)
    _, F, bad = model.predict_batch(small_data.accel[:3], small_data.gyro[:3])
    assert np.array_equal(F, np.repeat(np.eye(2)[None], 3, axis=0)) and not bad.any()


def test_pca_frame_follows_dominant_axis(rng):
    theta = 0.7
    axis = np.array([np.cos(theta), np.sin(theta)])
    s = rng.normal(size=200)
    accel = np.zeros((1, 200, 3))
    accel[0, :, :2] = 3.0 * s[:, None] * axis + 0.1 * rng.normal(size=(200, 2)) + 0.5 * axis
    F, bad = pca_frames(accel)
    assert not bad[0]
    assert np.allclose(F[0][:, 0], axis, atol=0.02)
    assert np.isclose(np.linalg.det(F[0]), 1.0)


def test_pca_frame_degenerate_input_flags():
    F, bad = pca_frames(np.zeros((1, 10, 3)))
    assert bad[0] and np.array_equal(F[0], np.eye(2))


def test_noneq_parameter_count_matches(rng):
    for mode in ("so2", "o2"):
        eq = PriorModel.init(ModelConfig(mode=mode), 0).n_params("frame.")
        ne = PriorModel.init(ModelConfig(mode=mode, frame="noneq"), 0).n_params("frame.")
        assert abs(ne - eq) / eq < 0.02
