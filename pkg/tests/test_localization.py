import math

import numpy as np
import pytest

from rovinspect.dynamics import BodyVelocity
from rovinspect.localization import (
    GATE_CHI2,
    FusedEstimate,
    MeasurementNoise,
    NoiseParams,
    ProcessNoise,
    Tag,
    TagMap,
    TagObservation,
    UnknownTag,
    ekf_predict,
    ekf_update,
    forward_camera,
    observe_tags,
    pose_from_tag,
    propagate,
    propagation_jacobian,
    wall_tag_pose,
)
from rovinspect.scenario import tank_tag_map
from rovinspect.se3 import PlanarPose, RigidTransform, axis_angle_matrix, compose, invert, to_planar

CAM = forward_camera((0.1, 0.0, 0.0))
ONE_TAG = TagMap([Tag(7, wall_tag_pose((2.0, 0.0, 0.5), math.pi))])  # faces -x


def rig_at(x, y, z, psi):
    return RigidTransform.from_yaw(psi, (x, y, z))


def test_tag_ahead_exact_relative_transform():
    true_pose = rig_at(1.0, 0.0, 0.5, 0.0)
    obs = observe_tags(true_pose, ONE_TAG, forward_camera(), fov_limit=1.0, range_limit=3.0)
    assert len(obs) == 1
    expected = invert(true_pose) @ ONE_TAG.pose(7)
    expected = compose(forward_camera(), expected)  # camera coincides with rig origin
    assert obs[0].camera_from_tag.allclose(expected, atol=1e-15)
    assert np.allclose(obs[0].camera_from_tag.translation, [0, 0, 1.0], atol=1e-15)


def test_tag_behind_camera_excluded():
    assert observe_tags(rig_at(1.0, 0.0, 0.5, math.pi), ONE_TAG, CAM) == []


def test_tag_back_side_and_range_excluded():
    assert observe_tags(rig_at(3.0, 0.0, 0.5, math.pi), ONE_TAG, CAM) == []
    assert observe_tags(rig_at(-2.0, 0.0, 0.5, 0.0), ONE_TAG, CAM, range_limit=3.0) == []


def test_translation_noise_statistics():
    rng = np.random.default_rng(123)
    noise = NoiseParams(sigma_t=0.01, sigma_r=0.0)
    pose = rig_at(1.0, 0.2, 0.5, 0.1)
    clean = observe_tags(pose, ONE_TAG, CAM)[0].camera_from_tag.translation
    errs = np.array(
        [observe_tags(pose, ONE_TAG, CAM, noise, rng=rng)[0].camera_from_tag.translation - clean for _ in range(10_000)]
    )
    std = errs.std(axis=0)
    assert np.all(np.abs(std - 0.01) < 0.001)


def test_rotation_noise_magnitude():
    rng = np.random.default_rng(5)
    noise = NoiseParams(sigma_t=0.0, sigma_r=0.01)
    pose = rig_at(1.0, 0.0, 0.5, 0.0)
    clean = observe_tags(pose, ONE_TAG, CAM)[0].camera_from_tag.rotation
    angles = []
    for _ in range(4000):
        R = observe_tags(pose, ONE_TAG, CAM, noise, rng=rng)[0].camera_from_tag.rotation
        c = (np.trace(R @ clean.T) - 1.0) / 2.0
        angles.append(math.acos(min(1.0, c)))
    # |N(0, s)| has mean s*sqrt(2/pi)
    assert np.mean(angles) == pytest.approx(0.01 * math.sqrt(2 / math.pi), rel=0.05)


def test_pose_from_tag_identity():
    m = TagMap([Tag(0, RigidTransform.identity())])
    obs = TagObservation(0, RigidTransform.identity())
    assert pose_from_tag(obs, m, RigidTransform.identity()).allclose(RigidTransform.identity())


def test_pose_from_tag_matches_homogeneous_oracle():
    tag = wall_tag_pose((2.0, 0.0, 0.0), math.pi)
    m = TagMap([Tag(1, tag)])
    # camera 1 m in front of the tag, camera frame = rig frame
    cam_pose = RigidTransform(tag.rotation, tag.translation + tag.rotation[:, 2] * 1.0)
    obs = TagObservation(1, invert(cam_pose) @ tag)
    got = pose_from_tag(obs, m, RigidTransform.identity())
    H = tag.matrix() @ np.linalg.inv(obs.camera_from_tag.matrix()) @ np.eye(4)
    assert np.allclose(got.matrix(), H, atol=1e-12)
    assert np.allclose(got.translation, [1.0, 0.0, 0.0], atol=1e-12)


def test_pose_from_tag_unknown_id():
    with pytest.raises(UnknownTag):
        pose_from_tag(TagObservation(99, RigidTransform.identity()), ONE_TAG, CAM)


def test_noiseless_round_trip_tank():
    tags = tank_tag_map()
    rng = np.random.default_rng(0)
    seen = 0
    for _ in range(200):
        pose = rig_at(rng.uniform(0.4, 2.2), rng.uniform(0.4, 1.3), 0.35, rng.uniform(-math.pi, math.pi))
        for obs in observe_tags(pose, tags, CAM, fov_limit=1.05):
            seen += 1
            est = pose_from_tag(obs, tags, CAM)
            assert np.max(np.abs(est.matrix() - pose.matrix())) <= 1e-12
    assert seen > 100


def test_tag_map_round_trip_and_validation():
    tags = tank_tag_map()
    back = TagMap.loads(tags.dumps())
    assert len(back) == 8
    for a, b in zip(tags, back):
        assert a.id == b.id and np.array_equal(a.pose.matrix(), b.pose.matrix())
    with pytest.raises(ValueError):
        TagMap([Tag(1, RigidTransform.identity()), Tag(1, RigidTransform.identity())])
    with pytest.raises(ValueError):
        TagMap.loads("1 2 3\n")
    text = "# comment\n3, 1,0,0, 0,1,0, 0,0,1, 1,2,3  # trailing\n"
    assert np.array_equal(TagMap.loads(text).pose(3).translation, [1, 2, 3])


def test_predict_static():
    P0 = np.diag([1e-3] * 4 + [0.0] * 4)
    est = FusedEstimate(np.array([1.0, 2.0, 3.0, 0.4, 0, 0, 0, 0]), P0)
    q = ProcessNoise()
    out = ekf_predict(est, np.zeros(4), 0.1, q)
    assert np.array_equal(out.x, est.x)
    assert np.allclose(out.covariance, P0 + q.matrix(0.1), rtol=0, atol=1e-18)
    # velocity uncertainty leaks into position on top of Q
    est = FusedEstimate(est.x, np.eye(8) * 1e-3)
    grown = ekf_predict(est, np.zeros(4), 0.1, q).covariance - est.covariance
    assert np.trace(grown) > np.trace(q.matrix(0.1))


def test_predict_constant_velocity():
    est = FusedEstimate.from_pose(PlanarPose(0, 0, 0, 0), BodyVelocity(u=0.1))
    out = ekf_predict(est, np.zeros(4), 1.0)
    assert out.x[0] == pytest.approx(0.1)


def test_predict_rejects_bad_dt():
    with pytest.raises(ValueError):
        ekf_predict(FusedEstimate.from_pose(PlanarPose()), np.zeros(4), 0.0)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        x = np.concatenate((rng.normal(size=3), [rng.uniform(-3, 3)], rng.normal(size=4)))
        a = rng.normal(size=4)
        dt = 0.05
        F = propagation_jacobian(x, a, dt)
        Fd = np.zeros((8, 8))
        h = 1e-6
        for j in range(8):
            e = np.zeros(8)
            e[j] = h
            Fd[:, j] = (propagate(x + e, a, dt) - propagate(x - e, a, dt)) / (2 * h)
        worst = max(worst, np.max(np.abs(F - Fd)) / np.max(np.abs(Fd)))
    assert worst < 1e-5


def test_update_with_matching_measurement():
    est = FusedEstimate.from_pose(PlanarPose(1, 2, 3, 0.5))
    out = ekf_update(est, PlanarPose(1, 2, 3, 0.5))
    assert np.allclose(out.x, est.x)
    assert np.trace(out.covariance) < np.trace(est.covariance)
    assert not out.rejected and out.mahalanobis2 == 0.0


def test_update_tiny_noise_snaps_to_measurement():
    est = FusedEstimate.from_pose(PlanarPose(0, 0, 0, 0))
    meas = PlanarPose(0.05, -0.03, 0.02, 0.04)
    out = ekf_update(est, meas, MeasurementNoise((1e-9,) * 4))
    assert np.allclose(out.x[:4], meas.as_array(), atol=1e-9)
    exact = ekf_update(est, meas, MeasurementNoise((0.0,) * 4))
    assert np.allclose(exact.x[:4], meas.as_array(), atol=1e-9)


def test_update_wraps_yaw_innovation():
    est = FusedEstimate.from_pose(PlanarPose(0, 0, 0, math.pi - 0.01))
    out = ekf_update(est, PlanarPose(0, 0, 0, -math.pi + 0.01))
    assert out.mahalanobis2 < 1.0
    assert abs(out.x[3]) > math.pi - 0.02


def test_update_gate_rejects_outlier():
    est = FusedEstimate.from_pose(PlanarPose(0, 0, 0, 0), covariance=np.eye(8) * 1e-4)
    out = ekf_update(est, PlanarPose(1.0, 0, 0, 0), MeasurementNoise((0.01,) * 4))
    assert out.rejected and out.mahalanobis2 > GATE_CHI2
    assert np.array_equal(out.x, est.x) and np.array_equal(out.covariance, est.covariance)


def test_fusion_beats_prediction_only():
    rng = np.random.default_rng(42)
    dt, sigma = 0.1, 0.02
    truth = np.array([0.0, 0.0, 0.3, 0.0, 0.1, 0.05, 0.0, 0.02])
    q = ProcessNoise((1e-6,) * 4, (1e-4,) * 4)
    r = MeasurementNoise((sigma,) * 4)
    fused = FusedEstimate(truth.copy() + np.r_[0.05, -0.05, 0.02, 0.05, 0.01, -0.01, 0, 0], np.eye(8) * 1e-2)
    pred = FusedEstimate(fused.x.copy(), fused.covariance.copy())
    ef, ep = [], []
    for _ in range(100):
        a = rng.normal(size=4) * 0.01
        truth = propagate(truth, a, dt)
        imu = a + rng.normal(size=4) * 0.01
        fused = ekf_predict(fused, imu, dt, q)
        pred = ekf_predict(pred, imu, dt, q)
        meas = PlanarPose.from_array(truth[:4] + rng.normal(size=4) * sigma)
        fused = ekf_update(fused, meas, r)
        ef.append(fused.x[:4] - truth[:4])
        ep.append(pred.x[:4] - truth[:4])
    rm_f = np.sqrt(np.mean(np.square(ef), axis=0))
    rm_p = np.sqrt(np.mean(np.square(ep), axis=0))
    assert np.all(rm_f < rm_p)


def test_covariance_stays_psd_short():
    rng = np.random.default_rng(1)
    est = FusedEstimate.from_pose(PlanarPose())
    for k in range(2000):
        est = ekf_predict(est, rng.normal(size=4) * 0.1, 0.01)
        if k % 10 == 0:
            est = ekf_update(est, PlanarPose.from_array(est.x[:4] + rng.normal(size=4) * 0.01))
    P = est.covariance
    assert np.max(np.abs(P - P.T)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(P)) >= -1e-12
