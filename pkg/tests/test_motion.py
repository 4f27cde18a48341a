import math

import numpy as np
import pytest

from hoisynth import motion as mo


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


# -- 6D rotations --------------------------------------------------------------


def test_rot6d_identity():
    assert np.array_equal(mo.rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))


def test_rot6d_recovers_rotation_columns():
    rng = np.random.default_rng(0)
    for _ in range(50):
        R = random_rotation(rng)
        r6 = np.concatenate([R[:, 0], R[:, 1]])
        assert np.abs(mo.rot6d_to_matrix(r6) - R).max() < 1e-9


def test_rot6d_scale_invariance():
    assert np.allclose(mo.rot6d_to_matrix([2, 0, 0, 0, 3, 0]), np.eye(3), atol=1e-12)


def test_rot6d_degenerate_inputs():
    with pytest.raises(ValueError):
        mo.rot6d_to_matrix([0, 0, 0, 0, 1, 0])
    with pytest.raises(ValueError):
        mo.rot6d_to_matrix([1, 0, 0, 2, 0, 0])  # parallel halves


def test_rot6d_output_orthonormal_right_handed():
    rng = np.random.default_rng(1)
    for _ in range(200):
        R = mo.rot6d_to_matrix(rng.standard_normal(6))
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1) < 1e-9


def test_matrix_to_rot6d_identity():
    assert np.array_equal(mo.matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])


def test_matrix_roundtrip_1000_random():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        R = random_rotation(rng)
        back = mo.rot6d_to_matrix(mo.matrix_to_rot6d(R))
        worst = max(worst, float(np.abs(back - R).max()))
    assert worst < 1e-6


def test_matrix_to_rot6d_180_about_z():
    R = mo.yaw_matrix(math.pi)
    r6 = mo.matrix_to_rot6d(R)
    assert np.allclose(r6, [-1, 0, 0, 0, -1, 0], atol=1e-12)


def test_matrix_to_rot6d_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        mo.matrix_to_rot6d(np.eye(3) * 1.01)


def test_project_rotation_restores_validity():
    rng = np.random.default_rng(3)
    R = random_rotation(rng)
    noisy = R + rng.standard_normal((3, 3)) * 0.05
    P = mo.project_rotation(noisy)
    assert np.abs(P.T @ P - np.eye(3)).max() < 1e-12
    assert np.abs(P - R).max() < 0.2


# -- rigid transforms -------------------------------------------------------------


def test_transform_identity_and_shift():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((10, 3))
    assert np.array_equal(mo.transform_object_vertices(v, np.eye(3), np.zeros(3)), v)
    shifted = mo.transform_object_vertices(v, np.eye(3), [0, 0, 1])
    assert np.allclose(shifted[:, 2], v[:, 2] + 1)


def test_transform_preserves_pairwise_distances():
    rng = np.random.default_rng(5)
    v = rng.standard_normal((12, 3))
    R = random_rotation(rng)
    t = rng.standard_normal(3)
    out = mo.transform_object_vertices(v, R, t)
    d_in = np.linalg.norm(v[:, None] - v[None], axis=2)
    d_out = np.linalg.norm(out[:, None] - out[None], axis=2)
    assert np.abs(d_in - d_out).max() < 1e-9


def test_transforms_compose():
    rng = np.random.default_rng(6)
    v = rng.standard_normal((7, 3))
    R1, R2 = random_rotation(rng), random_rotation(rng)
    t1, t2 = rng.standard_normal(3), rng.standard_normal(3)
    a = mo.transform_object_vertices(mo.transform_object_vertices(v, R1, t1), R2, t2)
    b = mo.transform_object_vertices(v, R2 @ R1, R2 @ t1 + t2)
    assert np.abs(a - b).max() < 1e-9


# -- skeleton / FK ------------------------------------------------------------------


def _identity_rot6d():
    return np.tile([1.0, 0, 0, 0, 1, 0], (22, 1))


def test_fk_rest_pose_cumulative_offsets():
    sk = mo.DEFAULT_SKELETON
    pos = mo.forward_kinematics(sk, np.zeros(3), _identity_rot6d())
    expected = np.zeros((24, 3))
    for i in range(1, 24):
        expected[i] = expected[sk.parents[i]] + sk.offsets[i]
    assert np.abs(pos - expected).max() < 1e-12


def test_fk_root_translation_adds_everywhere():
    sk = mo.DEFAULT_SKELETON
    base = mo.forward_kinematics(sk, np.zeros(3), _identity_rot6d())
    moved = mo.forward_kinematics(sk, [1.0, 2.0, 3.0], _identity_rot6d())
    assert np.abs(moved - base - np.array([1.0, 2.0, 3.0])).max() < 1e-12


def test_fk_root_yaw_rotates_children():
    sk = mo.DEFAULT_SKELETON
    rot = _identity_rot6d()
    R = mo.yaw_matrix(math.pi / 2)
    rot[0] = mo.matrix_to_rot6d(R)
    base = mo.forward_kinematics(sk, np.zeros(3), _identity_rot6d())
    turned = mo.forward_kinematics(sk, np.zeros(3), rot)
    assert np.abs(turned - base @ R.T).max() < 1e-9


def test_fk_two_bone_chain_hand_computed():
    # left shoulder->elbow->wrist with a 90 deg yaw at the shoulder: the elbow
    # offset (0.26, 0, 0) must land rotated to (0, 0.26, 0) relative to it
    sk = mo.DEFAULT_SKELETON
    rot = _identity_rot6d()
    rot[16] = mo.matrix_to_rot6d(mo.yaw_matrix(math.pi / 2))
    pos = mo.forward_kinematics(sk, np.zeros(3), rot)
    rest = mo.forward_kinematics(sk, np.zeros(3), _identity_rot6d())
    elbow_rel = pos[18] - pos[16]
    assert np.abs(elbow_rel - [0.0, 0.26, 0.0]).max() < 1e-12
    assert np.abs(pos[16] - rest[16]).max() < 1e-12  # shoulder itself unmoved


def test_fk_degenerate_rotation_propagates():
    rot = _identity_rot6d()
    rot[5] = 0.0
    with pytest.raises(ValueError):
        mo.forward_kinematics(mo.DEFAULT_SKELETON, np.zeros(3), rot)


# -- packing -----------------------------------------------------------------------


def test_pack_unpack_roundtrip_random():
    rng = np.random.default_rng(7)
    for _ in range(20):
        jp = rng.standard_normal((24, 3))
        r6 = rng.standard_normal((22, 6))
        vec = mo.pack_frame(jp, r6)
        assert vec.shape == (204,)
        jp2, r62 = mo.unpack_frame(vec)
        assert np.array_equal(jp, jp2) and np.array_equal(r6, r62)


def test_pack_layout_positions_first():
    jp = np.arange(72, dtype=np.float64).reshape(24, 3)
    r6 = np.zeros((22, 6))
    vec = mo.pack_frame(jp, r6)
    assert np.array_equal(vec[:72], np.arange(72))


def test_unpack_wrong_length():
    with pytest.raises(ValueError):
        mo.unpack_frame(np.zeros(203))


def test_zero_frame_decodes_to_origin_and_degenerate_rotations():
    jp, r6 = mo.unpack_frame(np.zeros(204))
    assert np.abs(jp).max() == 0.0
    with pytest.raises(ValueError):
        mo.rot6d_to_matrix(r6[0])


# -- masked condition -----------------------------------------------------------------


def _simple_sequences(T, rng):
    human = mo.HumanSequence(joint_pos=rng.standard_normal((T, 24, 3)),
                             rot6d=np.tile([1.0, 0, 0, 0, 1, 0], (T, 22, 1)))
    obj = mo.ObjectSequence(translation=rng.standard_normal((T, 3)),
                            rotation=np.tile(np.eye(3).reshape(9), (T, 1)), mesh_id="m")
    contacts = mo.ContactIndicators(np.zeros((T, 4)))
    return human, obj, contacts


def test_masked_condition_constrained_frames_T120():
    rng = np.random.default_rng(8)
    human, obj, contacts = _simple_sequences(120, rng)
    cond = mo.build_masked_condition(mo.human_frames(human)[0], obj, contacts, 30)
    assert cond.constrained_frames() == [0, 30, 60, 90, 119]


def test_masked_condition_row_layout():
    rng = np.random.default_rng(9)
    human, obj, contacts = _simple_sequences(90, rng)
    contacts.flags[0] = [1, 0, 1, 0]
    frame0 = mo.human_frames(human)[0]
    cond = mo.build_masked_condition(frame0, obj, contacts, 30)
    # frame 0: full initial state
    assert np.array_equal(cond.grid[0, :3], obj.translation[0])
    assert np.array_equal(cond.grid[0, 3:12], obj.rotation[0])
    assert np.array_equal(cond.grid[0, 12:216], frame0)
    assert np.array_equal(cond.grid[0, 216:], [1, 0, 1, 0])
    # intermediate: planar only, z slot zero
    assert np.array_equal(cond.grid[30, :2], obj.translation[30, :2])
    assert cond.grid[30, 2] == 0.0
    assert np.abs(cond.grid[30, 3:]).max() == 0.0
    # final: full 3-D position
    assert np.array_equal(cond.grid[89, :3], obj.translation[89])
    assert np.abs(cond.grid[89, 3:]).max() == 0.0


def test_masked_condition_unconstrained_rows_exactly_zero():
    rng = np.random.default_rng(10)
    human, obj, contacts = _simple_sequences(100, rng)
    cond = mo.build_masked_condition(mo.human_frames(human)[0], obj, contacts, 30)
    constrained = set(cond.constrained_frames())
    for t in range(100):
        if t not in constrained:
            assert np.abs(cond.grid[t]).max() == 0.0


def test_masked_condition_count_formula():
    rng = np.random.default_rng(11)
    for T in (60, 61, 90, 119, 120, 121, 150):
        human, obj, contacts = _simple_sequences(T, rng)
        cond = mo.build_masked_condition(mo.human_frames(human)[0], obj, contacts, 30)
        assert len(cond.constrained_frames()) == (T - 2) // 30 + 2, T


def test_masked_condition_rejects_tiny_T():
    rng = np.random.default_rng(12)
    human, obj, contacts = _simple_sequences(1, rng)
    with pytest.raises(ValueError):
        mo.build_masked_condition(mo.human_frames(human)[0], obj, contacts, 30)


def test_object_sequence_enforces_orthonormality():
    with pytest.raises(ValueError):
        mo.ObjectSequence(translation=np.zeros((2, 3)),
                          rotation=np.tile((np.eye(3) * 1.2).reshape(9), (2, 1)))


def test_state_roundtrip_and_rotation_projection():
    rng = np.random.default_rng(13)
    human, obj, contacts = _simple_sequences(8, rng)
    state = mo.seq_to_state(human, obj)
    assert state.shape == (8, 216)
    h2, o2 = mo.state_to_seq(state, mesh_id="m")
    assert np.abs(h2.joint_pos - human.joint_pos).max() < 1e-12
    assert np.abs(o2.translation - obj.translation).max() < 1e-12
    # noisy rotations are projected back to SO(3)
    noisy = state.copy()
    noisy[:, 207:216] += rng.standard_normal((8, 9)) * 0.05
    _, o3 = mo.state_to_seq(noisy, mesh_id="m")
    R = o3.matrices()
    assert np.abs(np.einsum("tij,tkj->tik", R, R) - np.eye(3)).max() < 1e-9


def test_motion_json_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    human, obj, contacts = _simple_sequences(12, rng)
    contacts.flags[3:, 1] = 1.0
    path = tmp_path / "seq.json"
    mo.save_motion_json(path, human, obj, contacts, "push the drum")
    h2, o2, c2, text = mo.load_motion_json(path)
    assert text == "push the drum"
    assert np.array_equal(h2.joint_pos, human.joint_pos)
    assert np.array_equal(h2.rot6d, human.rot6d)
    assert np.array_equal(o2.translation, obj.translation)
    assert np.array_equal(c2.flags, contacts.flags)
