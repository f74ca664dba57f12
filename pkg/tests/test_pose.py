import math

import numpy as np
import pytest

from validmark.core import DataError, DegenerateGeometryError, LandmarkSet
from validmark.pose import (PoseFit, RigidTransform, Template3D, alignment_residual,
                            euler_from_rotation, exp_so3, fit_head_pose, kabsch,
                            load_template_csv, make_face_template, quat_from_rotation,
                            rotation_angle_rad, rotation_distance, rotation_from_euler,
                            save_template_csv, translation_distance)


def random_rotation(rng):
    return rotation_from_euler(rng.uniform(-np.pi, np.pi),
                               rng.uniform(-np.pi / 2 + 0.05, np.pi / 2 - 0.05),
                               rng.uniform(-np.pi, np.pi))


def test_rigid_transform_invariants():
    with pytest.raises(DataError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    bad = np.eye(3)
    bad[2, 2] = -1.0
    with pytest.raises(DataError):
        RigidTransform(bad, np.zeros(3))


def test_kabsch_identity():
    p = np.random.default_rng(0).normal(size=(6, 3))
    fit = kabsch(p, p)
    np.testing.assert_allclose(fit.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(fit.translation, 0.0, atol=1e-12)


def test_kabsch_known_rotation_translation():
    p = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    rz90 = rotation_from_euler(0.0, 0.0, math.pi / 2)
    q = p @ rz90.T + np.array([1.0, 2.0, 3.0])
    fit = kabsch(p, q)
    np.testing.assert_allclose(fit.rotation, rz90, atol=1e-9)
    np.testing.assert_allclose(fit.translation, [1.0, 2.0, 3.0], atol=1e-9)


def test_kabsch_reflection_returns_proper_rotation():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(8, 3))
    q = p.copy()
    q[:, 2] *= -1.0
    fit = kabsch(p, q)
    assert np.linalg.det(fit.rotation) == pytest.approx(1.0, abs=1e-9)
    assert alignment_residual(p, q, fit) > 0.0


def test_kabsch_noisy_recovery():
    rng = np.random.default_rng(2)
    angular_errors = []
    for _ in range(200):
        p = rng.normal(size=(68, 3))
        r = random_rotation(rng)
        t = rng.normal(size=3)
        q = p @ r.T + t + rng.normal(scale=0.01, size=p.shape)
        fit = kabsch(p, q)
        angular_errors.append(math.degrees(rotation_angle_rad(fit.rotation, r)))
    assert max(angular_errors) < 0.5


def test_kabsch_weighted_ignores_zero_weight_outlier():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(10, 3))
    r = random_rotation(rng)
    t = rng.normal(size=3)
    q = p @ r.T + t
    q[0] += 50.0    # gross outlier
    w = np.ones(10)
    w[0] = 0.0
    fit = kabsch(p, q, weights=w)
    assert rotation_angle_rad(fit.rotation, r) < 1e-12
    np.testing.assert_allclose(fit.translation, t, atol=1e-10)


def test_kabsch_degenerate_inputs():
    line = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
    with pytest.raises(DegenerateGeometryError, match="collinear|coincident"):
        kabsch(line, line)
    with pytest.raises(DegenerateGeometryError):
        kabsch(np.zeros((2, 3)), np.zeros((2, 3)))


def test_kabsch_equivariance():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(7, 3))
    r = random_rotation(rng)
    t = rng.normal(size=3)
    q = p @ r.T + t + rng.normal(scale=0.05, size=p.shape)
    base = kabsch(p, q)
    s = random_rotation(rng)
    # pre-rotate both sets by S: solution conjugates to S R S^T etc.
    fit = kabsch(p @ s.T, q @ s.T)
    np.testing.assert_allclose(fit.rotation, s @ base.rotation @ s.T, atol=1e-9)
    np.testing.assert_allclose(fit.translation, s @ base.translation, atol=1e-9)


def test_kabsch_beats_random_search():
    rng = np.random.default_rng(5)
    p = rng.normal(size=(12, 3))
    r = random_rotation(rng)
    q = p @ r.T + rng.normal(scale=0.1, size=p.shape) + np.array([0.3, -0.2, 0.9])
    w = rng.uniform(0.2, 2.0, size=12)
    fit = kabsch(p, q, weights=w)
    best = alignment_residual(p, q, fit, weights=w)
    for _ in range(1000):
        cand_r = random_rotation(rng)
        cand_t = (w[:, None] * (q - p @ cand_r.T)).sum(axis=0) / w.sum()
        cand = alignment_residual(p, q, RigidTransform(cand_r, cand_t), weights=w)
        assert cand >= best - 1e-12


def test_kabsch_noiseless_residual_tiny():
    rng = np.random.default_rng(6)
    for _ in range(50):
        p = rng.normal(size=(9, 3))
        r = random_rotation(rng)
        t = rng.normal(size=3)
        fit = kabsch(p, p @ r.T + t)
        assert alignment_residual(p, p @ r.T + t, fit) < 1e-12


def test_rotation_distance_examples():
    assert rotation_distance(np.eye(3), np.eye(3)) == 0.0
    rz90 = rotation_from_euler(0.0, 0.0, math.pi / 2)
    assert rotation_distance(rz90, np.eye(3)) == pytest.approx(90.0, abs=1e-9)


def test_rotation_distance_matches_quaternion_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        r1, r2 = random_rotation(rng), random_rotation(rng)
        via_quat = math.degrees(rotation_angle_rad(r1, r2))
        assert rotation_distance(r1, r2) == pytest.approx(via_quat, abs=1e-9)


def test_translation_distance():
    assert translation_distance([0, 0, 0], [3, 4, 0]) == pytest.approx(5.0)


def test_quaternion_unit_norm():
    rng = np.random.default_rng(8)
    for _ in range(50):
        q = quat_from_rotation(random_rotation(rng))
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)


def test_euler_round_trip():
    assert euler_from_rotation(np.eye(3))[:3] == pytest.approx((0.0, 0.0, 0.0))
    yaw30 = rotation_from_euler(math.radians(30), 0.0, 0.0)
    y, p, r, locked = euler_from_rotation(yaw30)
    assert not locked
    assert (y, p, r) == pytest.approx((math.radians(30), 0.0, 0.0), abs=1e-12)

    rng = np.random.default_rng(9)
    for _ in range(200):
        angles = (rng.uniform(-np.pi, np.pi),
                  rng.uniform(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3),
                  rng.uniform(-np.pi, np.pi))
        rot = rotation_from_euler(*angles)
        back = rotation_from_euler(*euler_from_rotation(rot)[:3])
        np.testing.assert_allclose(back, rot, atol=1e-9)


def test_euler_gimbal_lock_flagged():
    rot = rotation_from_euler(0.3, math.pi / 2, 0.0)
    _, pitch, _, locked = euler_from_rotation(rot)
    assert locked
    assert abs(pitch) == pytest.approx(math.pi / 2, abs=1e-9)


def test_exp_so3_matches_euler_for_axis_rotations():
    np.testing.assert_allclose(exp_so3(np.array([0.0, 0.4, 0.0])),
                               rotation_from_euler(0.4, 0.0, 0.0), atol=1e-12)


def test_face_template_shapes_and_eyes():
    t5 = make_face_template(5)
    assert t5.count == 5
    t68 = make_face_template(68)
    assert t68.count == 68
    left = t68.points[36:42].mean(axis=0)
    right = t68.points[42:48].mean(axis=0)
    assert left[0] < 0 < right[0]
    assert abs(left[1] - right[1]) < 1e-9
    t9 = make_face_template(9)
    assert t9.count == 9
    with pytest.raises(DataError):
        make_face_template(3)


def test_template_csv_round_trip(tmp_path):
    template = make_face_template(9)
    path = tmp_path / "tpl.csv"
    save_template_csv(template, path)
    loaded = load_template_csv(path)
    np.testing.assert_allclose(loaded.points, template.points, atol=1e-6)
    (tmp_path / "bad.csv").write_text("x,y,z\n1,2,3\n")
    with pytest.raises(DataError):
        load_template_csv(tmp_path / "bad.csv")


def test_template_collinear_rejected():
    with pytest.raises(DegenerateGeometryError):
        Template3D(np.column_stack([np.arange(6.0), np.arange(6.0), np.zeros(6)]))


def project_weak(template, r, t, f):
    cam = template.points @ r.T + t
    return f * cam[:, :2] / t[2]


def test_fit_head_pose_identity_self_consistency():
    template = make_face_template(5)
    f = 300.0
    t = np.array([0.0, 0.0, 400.0])
    uv = project_weak(template, np.eye(3), t, f)
    fit = fit_head_pose(LandmarkSet(uv), template, focal=f)
    assert rotation_angle_rad(fit.transform.rotation, np.eye(3)) < 1e-6
    assert fit.residual_rms < 1e-9
    assert fit.converged


def test_fit_head_pose_known_yaw():
    template = make_face_template(68)
    f = 500.0
    r = rotation_from_euler(math.radians(30), 0.0, 0.0)
    t = np.array([5.0, -3.0, 450.0])
    uv = project_weak(template, r, t, f)
    fit = fit_head_pose(LandmarkSet(uv), template, focal=f)
    yaw = euler_from_rotation(fit.transform.rotation)[0]
    assert yaw == pytest.approx(math.radians(30), abs=1e-3)
    np.testing.assert_allclose(fit.transform.translation, t, rtol=1e-6)


def test_fit_head_pose_noise_robustness():
    template = make_face_template(68)
    rng = np.random.default_rng(10)
    f = 400.0
    errors = []
    for _ in range(200):
        r = rotation_from_euler(math.radians(rng.uniform(-45, 45)),
                                math.radians(rng.uniform(-15, 15)),
                                math.radians(rng.uniform(-10, 10)))
        t = np.array([rng.uniform(-10, 10), rng.uniform(-10, 10),
                      rng.uniform(300, 600)])
        uv = project_weak(template, r, t, f)
        face_size = uv[:, 0].max() - uv[:, 0].min()
        noisy = uv + rng.normal(scale=0.01 * face_size, size=uv.shape)
        fit = fit_head_pose(LandmarkSet(noisy), template, focal=f)
        errors.append(math.degrees(rotation_angle_rad(fit.transform.rotation, r)))
    assert float(np.median(errors)) < 2.0


def test_fit_head_pose_orthographic_mode():
    # focal omitted: pose still recovered, translation under the 1/s convention
    template = make_face_template(5)
    r = rotation_from_euler(math.radians(-20), math.radians(4), 0.0)
    scale = 1.7
    uv = scale * (template.points @ r.T)[:, :2] + np.array([40.0, 32.0])
    fit = fit_head_pose(LandmarkSet(uv), template, focal=None)
    assert rotation_angle_rad(fit.transform.rotation, r) < 1e-6
    assert fit.transform.translation[2] == pytest.approx(1.0 / scale, rel=1e-6)


def test_fit_head_pose_weights_discard_corrupt_landmark():
    template = make_face_template(68)
    f = 400.0
    r = rotation_from_euler(math.radians(15), math.radians(-5), math.radians(3))
    t = np.array([2.0, 1.0, 380.0])
    uv = project_weak(template, r, t, f)
    uv[10] += 80.0      # corrupted landmark
    w = np.ones(68)
    w[10] = 0.0
    fit = fit_head_pose(LandmarkSet(uv), template, focal=f, weights=w)
    assert rotation_angle_rad(fit.transform.rotation, r) < 1e-9
    corrupted = fit_head_pose(LandmarkSet(uv), template, focal=f)
    assert rotation_angle_rad(corrupted.transform.rotation, r) > \
        rotation_angle_rad(fit.transform.rotation, r)


def test_fit_head_pose_count_mismatch():
    template = make_face_template(5)
    with pytest.raises(DataError):
        fit_head_pose(LandmarkSet(np.zeros((4, 2))), template)
