import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tipseg.kinematics import (
    KinematicsSample,
    KinematicsStream,
    Pose7,
    load_kinematics_csv,
    nearest_sample,
    pose_apply,
    pose_compose,
    pose_inverse,
    quat_from_axis_angle,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    save_kinematics_csv,
)

SQ2 = np.sqrt(2) / 2


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def test_quat_rotate_identity():
    out = quat_rotate(np.array([1.0, 0, 0, 0]), np.array([3.0, 4.0, 5.0]))
    assert np.allclose(out, [3, 4, 5], atol=1e-15)


def test_quat_rotate_z90_matches_matrix_oracle():
    q = np.array([SQ2, 0.0, 0.0, SQ2])
    out = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(out, [0, 1, 0], atol=1e-12)
    # explicit quaternion-to-matrix construction as the oracle
    assert np.allclose(out, quat_to_matrix(q) @ np.array([1.0, 0, 0]), atol=1e-14)


def test_quat_rotate_x180():
    q = np.array([0.0, 1.0, 0.0, 0.0])
    out = quat_rotate(q, np.array([0.0, 1.0, 0.0]))
    assert np.allclose(out, [0, -1, 0], atol=1e-12)


def test_quat_rotate_matches_matrix_on_random_inputs(rng):
    for _ in range(50):
        q = random_quat(rng)
        p = rng.normal(size=3) * 10
        assert np.allclose(quat_rotate(q, p), quat_to_matrix(q) @ p, atol=1e-12)


def test_quat_rotate_preserves_norm(rng):
    for _ in range(50):
        q = random_quat(rng)
        p = rng.normal(size=3)
        assert abs(np.linalg.norm(quat_rotate(q, p)) - np.linalg.norm(p)) < 1e-12


def test_quat_rotate_rejects_nonfinite():
    with pytest.raises(ValueError):
        quat_rotate(np.array([1.0, 0, 0, 0]), np.array([np.nan, 0, 0]))


def test_quat_normalize_rejects_corrupt_norm():
    with pytest.raises(ValueError, match="norm"):
        quat_normalize(np.array([10.0, 0, 0, 0]))
    with pytest.raises(ValueError, match="norm"):
        quat_normalize(np.array([0.1, 0, 0, 0]))


def test_pose_apply_identity():
    assert np.allclose(pose_apply(Pose7.identity(), np.array([1.0, 2, 3])), [1, 2, 3])


def test_pose_apply_pure_translation():
    pose = Pose7(np.array([10.0, 0, 0]), np.array([1.0, 0, 0, 0]))
    assert np.allclose(pose_apply(pose, np.array([1.0, 0, 0])), [11, 0, 0])


def test_pose_apply_rotate_then_translate():
    pose = Pose7(np.array([0.0, 0, 1]), np.array([SQ2, 0, 0, SQ2]))
    assert np.allclose(pose_apply(pose, np.array([1.0, 0, 0])), [0, 1, 1], atol=1e-12)


def test_pose_inverse_identity_and_translation():
    inv = pose_inverse(Pose7.identity())
    assert np.allclose(inv.position, 0) and np.allclose(inv.orientation, [1, 0, 0, 0])
    t = Pose7(np.array([3.0, -2, 5]), np.array([1.0, 0, 0, 0]))
    ti = pose_inverse(t)
    assert np.allclose(ti.position, [-3, 2, -5])


def test_pose_inverse_roundtrip_on_random_points(rng):
    for _ in range(100):
        pose = Pose7(rng.normal(size=3) * 50, random_quat(rng))
        inv = pose_inverse(pose)
        p = rng.normal(size=3) * 100
        assert np.allclose(pose_apply(inv, pose_apply(pose, p)), p, atol=1e-9)


def test_pose_compose_matches_sequential_application(rng):
    for _ in range(25):
        a = Pose7(rng.normal(size=3) * 10, random_quat(rng))
        b = Pose7(rng.normal(size=3) * 10, random_quat(rng))
        p = rng.normal(size=3) * 10
        assert np.allclose(pose_apply(pose_compose(a, b), p), pose_apply(a, pose_apply(b, p)), atol=1e-10)


def _stream(times):
    ident = Pose7.identity()
    samples = tuple(
        KinematicsSample(t, ((ident, ident, ident),), ident) for t in times
    )
    return KinematicsStream(samples, rate_hz=5.0)


def test_nearest_sample_basic():
    s = _stream([0.0, 0.2, 0.4])
    assert nearest_sample(s, 0.19).timestamp == 0.2


def test_nearest_sample_tie_goes_earlier():
    s = _stream([0.0, 0.2, 0.4])
    assert nearest_sample(s, 0.1).timestamp == 0.0


def test_nearest_sample_empty_stream_errors():
    with pytest.raises(ValueError):
        nearest_sample(KinematicsStream(()), 0.0)


@given(st.integers(0, 10_000), st.floats(0.0, 100.0, allow_nan=False))
def test_nearest_sample_half_period_bound(start, t):
    # 5 Hz stream: matched timestamp within half the 0.2 s period
    times = [start * 0.001 + 0.2 * k for k in range(51)]
    s = _stream(times)
    t_query = times[0] + (t / 100.0) * (times[-1] - times[0])
    got = nearest_sample(s, t_query)
    assert abs(got.timestamp - t_query) <= 0.1 + 1e-12


def test_stream_requires_increasing_timestamps():
    with pytest.raises(ValueError):
        _stream([0.0, 0.0])


def test_sample_requires_three_part_poses():
    ident = Pose7.identity()
    with pytest.raises(ValueError):
        KinematicsSample(0.0, ((ident, ident),), ident)


def test_kinematics_csv_roundtrip(tmp_path, rng):
    ident = Pose7.identity()
    samples = []
    for k in range(4):
        parts = tuple(
            Pose7(rng.normal(size=3) * 20, random_quat(rng)) for _ in range(3)
        )
        cam = Pose7(rng.normal(size=3), random_quat(rng))
        samples.append(KinematicsSample(0.2 * k, (parts,), cam))
    stream = KinematicsStream(tuple(samples), 5.0)
    path = tmp_path / "log.csv"
    save_kinematics_csv(path, stream)
    loaded = load_kinematics_csv(path)
    assert len(loaded.samples) == 4
    for orig, got in zip(stream.samples, loaded.samples):
        assert got.timestamp == orig.timestamp
        for po, pg in zip(orig.instruments[0], got.instruments[0]):
            assert np.allclose(po.position, pg.position, atol=1e-12)
            # loader renormalizes; compare up to sign-free rotation equality
            assert np.allclose(quat_to_matrix(po.orientation), quat_to_matrix(pg.orientation), atol=1e-12)


def test_kinematics_csv_missing_camera_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.0,0,0,0,0,0,1,0,0,0\n0.0,0,1,0,0,0,1,0,0,0\n0.0,0,2,0,0,0,1,0,0,0\n")
    with pytest.raises(ValueError, match="camera"):
        load_kinematics_csv(path)


def test_kinematics_csv_missing_part_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.0,0,-1,0,0,0,1,0,0,0\n0.0,0,0,0,0,0,1,0,0,0\n")
    with pytest.raises(ValueError, match="missing parts"):
        load_kinematics_csv(path)
