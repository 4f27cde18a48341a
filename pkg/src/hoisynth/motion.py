"""Human/object state representations: 6D rotation conversions, a fixed
24-joint skeleton with forward kinematics, frame packing, the masked
waypoint-condition grid, and the motion-sequence JSON schema.

Layouts (fixed across the project):
  human frame  (204) = joint positions (24*3) ++ joint rotations (22*6)
  object frame (12)  = centroid translation (3) ++ row-major rotation (9)
  model state  (216) = human frame ++ object frame
  condition row(220) = object frame ++ human frame ++ contact flags (4)
Axes: z is up; the ground plane is z = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

HUMAN_DIM = 204
OBJECT_DIM = 12
STATE_DIM = HUMAN_DIM + OBJECT_DIM  # 216
CONTACT_DIM = 4
COND_DIM = OBJECT_DIM + HUMAN_DIM + CONTACT_DIM  # 220

NUM_JOINTS = 24
NUM_ROT_JOINTS = 22


# -- rotations ----------------------------------------------------------------


def rot6d_to_matrix(r):
    """Gram-Schmidt reconstruction: the 6-vector holds the first two matrix
    columns; b3 = b1 x b2 completes a right-handed orthonormal frame."""
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-8:
        raise ValueError("degenerate 6D rotation: first column is (near) zero")
    b1 = a1 / n1
    u = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u)
    if n2 < 1e-8:
        raise ValueError("degenerate 6D rotation: columns are (near) parallel")
    b2 = u / n2
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def rot6d_to_matrix_batch(r):
    """Vectorized version over (..., 6). Degeneracy is reported with the
    offending flat index."""
    r = np.asarray(r, dtype=np.float64)
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if (n1 < 1e-8).any():
        raise ValueError(f"degenerate 6D rotation at index {int(np.argmax(n1.ravel() < 1e-8))}")
    b1 = a1 / n1
    u = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u, axis=-1, keepdims=True)
    if (n2 < 1e-8).any():
        raise ValueError(f"degenerate 6D rotation at index {int(np.argmax(n2.ravel() < 1e-8))}")
    b2 = u / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R):
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-4 or np.linalg.det(R) < 0:
        raise ValueError("matrix is not orthonormal within 1e-4")
    return np.concatenate([R[:, 0], R[:, 1]])


def project_rotation(M):
    """Nearest rotation matrix (polar projection via SVD, det corrected).
    Used when decoding raw model output into valid object rotations."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64).reshape(3, 3))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


def yaw_matrix(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def transform_object_vertices(vertices, R, t):
    """Rigid transform v' = R v + t applied to (V,3) vertices (or a Mesh)."""
    v = vertices.vertices if hasattr(vertices, "vertices") else np.asarray(vertices, dtype=np.float64)
    return v @ np.asarray(R, dtype=np.float64).T + np.asarray(t, dtype=np.float64)


# -- skeleton -----------------------------------------------------------------


@dataclass(frozen=True)
class Skeleton:
    parents: tuple  # parent index per joint, -1 for the root
    offsets: np.ndarray  # (24, 3) bone offsets in the parent frame, meters
    hand_radius: float = 0.03  # proxy sphere standing in for hand vertices
    foot_joints: tuple = (10, 11)  # left foot, right foot
    hand_joints: tuple = (22, 23)  # left hand, right hand
    root_height: float = 0.93  # pelvis height with feet on the ground


_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

_OFFSETS = np.array(
    [
        [0.00, 0.00, 0.00],   # 0 pelvis (root)
        [0.10, 0.00, -0.05],  # 1 left hip
        [-0.10, 0.00, -0.05], # 2 right hip
        [0.00, 0.00, 0.11],   # 3 spine1
        [0.00, 0.00, -0.40],  # 4 left knee
        [0.00, 0.00, -0.40],  # 5 right knee
        [0.00, 0.00, 0.12],   # 6 spine2
        [0.00, 0.00, -0.42],  # 7 left ankle
        [0.00, 0.00, -0.42],  # 8 right ankle
        [0.00, 0.00, 0.12],   # 9 spine3
        [0.00, 0.12, -0.06],  # 10 left foot
        [0.00, 0.12, -0.06],  # 11 right foot
        [0.00, 0.00, 0.14],   # 12 neck
        [0.07, 0.00, 0.09],   # 13 left collar
        [-0.07, 0.00, 0.09],  # 14 right collar
        [0.00, 0.00, 0.12],   # 15 head
        [0.10, 0.00, 0.02],   # 16 left shoulder
        [-0.10, 0.00, 0.02],  # 17 right shoulder
        [0.26, 0.00, 0.00],   # 18 left elbow
        [-0.26, 0.00, 0.00],  # 19 right elbow
        [0.25, 0.00, 0.00],   # 20 left wrist
        [-0.25, 0.00, 0.00],  # 21 right wrist
        [0.08, 0.00, 0.00],   # 22 left hand
        [-0.08, 0.00, 0.00],  # 23 right hand
    ]
)

DEFAULT_SKELETON = Skeleton(parents=_PARENTS, offsets=_OFFSETS)


def forward_kinematics(skeleton, root_pos, rot6d):
    """Joint positions from the root position and 22 local joint rotations
    (joints 22/23 are unrotated end-effectors). pos_i = pos_parent +
    R_chain(parent) @ offset_i."""
    rot6d = np.asarray(rot6d, dtype=np.float64).reshape(NUM_ROT_JOINTS, 6)
    local = np.empty((NUM_JOINTS, 3, 3))
    local[:NUM_ROT_JOINTS] = rot6d_to_matrix_batch(rot6d)
    local[NUM_ROT_JOINTS:] = np.eye(3)
    pos = np.empty((NUM_JOINTS, 3))
    chain = np.empty((NUM_JOINTS, 3, 3))
    pos[0] = np.asarray(root_pos, dtype=np.float64)
    chain[0] = local[0]
    for i in range(1, NUM_JOINTS):
        p = skeleton.parents[i]
        pos[i] = pos[p] + chain[p] @ skeleton.offsets[i]
        chain[i] = chain[p] @ local[i]
    return pos


# -- sequences ----------------------------------------------------------------


@dataclass
class HumanSequence:
    joint_pos: np.ndarray  # (T, 24, 3)
    rot6d: np.ndarray  # (T, 22, 6)
    fps: float = 30.0

    def __post_init__(self):
        self.joint_pos = np.asarray(self.joint_pos, dtype=np.float64).reshape(-1, NUM_JOINTS, 3)
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64).reshape(-1, NUM_ROT_JOINTS, 6)
        if len(self.joint_pos) != len(self.rot6d):
            raise ValueError("joint_pos/rot6d frame counts differ")
        if not (np.isfinite(self.joint_pos).all() and np.isfinite(self.rot6d).all()):
            raise ValueError("non-finite human sequence data")

    @property
    def T(self):
        return len(self.joint_pos)


@dataclass
class ObjectSequence:
    translation: np.ndarray  # (T, 3)
    rotation: np.ndarray  # (T, 9) row-major
    mesh_id: str = ""

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(-1, 3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(-1, 9)
        if len(self.translation) != len(self.rotation):
            raise ValueError("translation/rotation frame counts differ")
        R = self.rotation.reshape(-1, 3, 3)
        err = np.abs(np.einsum("tij,tkj->tik", R, R) - np.eye(3)).max()
        if err > 1e-4:
            raise ValueError(f"object rotations not orthonormal within 1e-4 (max dev {err:.2e})")
        if np.linalg.det(R).min() < 0.9:
            raise ValueError("object rotation with non-positive determinant")

    @property
    def T(self):
        return len(self.translation)

    def frames(self):
        """(T, 12) object block: translation ++ rotation."""
        return np.concatenate([self.translation, self.rotation], axis=1)

    def matrices(self):
        return self.rotation.reshape(-1, 3, 3)


@dataclass
class ContactIndicators:
    flags: np.ndarray  # (T, 4): left hand, right hand, left foot, right foot

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=np.float64).reshape(-1, CONTACT_DIM)
        if not np.isin(self.flags, (0.0, 1.0)).all():
            raise ValueError("contact flags must be binary")

    @property
    def T(self):
        return len(self.flags)


def pack_frame(joint_pos, rot6d):
    """(24,3) + (22,6) -> (204,). Inverse of unpack_frame; exact round-trip."""
    return np.concatenate(
        [np.asarray(joint_pos, dtype=np.float64).reshape(72),
         np.asarray(rot6d, dtype=np.float64).reshape(132)]
    )


def unpack_frame(vec):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (HUMAN_DIM,):
        raise ValueError(f"human frame must have {HUMAN_DIM} dims, got {vec.shape}")
    return vec[:72].reshape(NUM_JOINTS, 3), vec[72:].reshape(NUM_ROT_JOINTS, 6)


def human_frames(human):
    """(T, 204) packed view of a HumanSequence."""
    return np.concatenate(
        [human.joint_pos.reshape(human.T, 72), human.rot6d.reshape(human.T, 132)], axis=1
    )


def seq_to_state(human, obj):
    """(T, 216) model state: human frame ++ object frame."""
    if human.T != obj.T:
        raise ValueError("human/object frame counts differ")
    return np.concatenate([human_frames(human), obj.frames()], axis=1)


def state_to_seq(state, mesh_id="", fps=30.0):
    """Decode raw (T, 216) model output. Object rotations are projected back
    onto SO(3) (raw denoiser output is not orthonormal)."""
    state = np.asarray(state, dtype=np.float64).reshape(-1, STATE_DIM)
    T = len(state)
    joint_pos = state[:, :72].reshape(T, NUM_JOINTS, 3)
    rot6d = state[:, 72:204].reshape(T, NUM_ROT_JOINTS, 6)
    trans = state[:, 204:207]
    rot = np.stack([project_rotation(state[t, 207:216]) for t in range(T)])
    human = HumanSequence(joint_pos=joint_pos, rot6d=rot6d, fps=fps)
    obj = ObjectSequence(translation=trans, rotation=rot.reshape(T, 9), mesh_id=mesh_id)
    return human, obj


# -- masked condition -----------------------------------------------------------


@dataclass
class MaskedCondition:
    grid: np.ndarray  # (T, 220)
    interval: int

    @property
    def T(self):
        return len(self.grid)

    def constrained_frames(self):
        """Frame indices carrying values: 0, k*interval (strictly before the
        final frame), and T-1."""
        T = self.T
        inner = [t for t in range(self.interval, T - 1, self.interval)]
        return [0] + inner + [T - 1]

    def contacts(self):
        return self.grid[:, OBJECT_DIM + HUMAN_DIM :]


def build_masked_condition(human0, obj, contacts, interval=30):
    """Zero-padded condition grid: frame 0 carries the full initial state
    (object + human + contact flags), intermediate waypoint frames carry the
    object x,y only, the final frame carries the full 3-D object position.
    All other rows are exactly zero."""
    if interval < 1:
        raise ValueError("waypoint interval must be >= 1")
    T = obj.T
    if T < 2:
        raise ValueError("need at least 2 frames for a start and an end constraint")
    if contacts.T != T:
        raise ValueError("contacts frame count does not match the object sequence")
    human0 = np.asarray(human0, dtype=np.float64).reshape(HUMAN_DIM)
    grid = np.zeros((T, COND_DIM))
    obj_frames = obj.frames()
    grid[0, :OBJECT_DIM] = obj_frames[0]
    grid[0, OBJECT_DIM : OBJECT_DIM + HUMAN_DIM] = human0
    grid[0, OBJECT_DIM + HUMAN_DIM :] = contacts.flags[0]
    for t in range(interval, T - 1, interval):
        grid[t, 0:2] = obj.translation[t, 0:2]  # planar waypoint, z slot stays zero
    grid[T - 1, 0:3] = obj.translation[T - 1]
    return MaskedCondition(grid=grid, interval=int(interval))


# -- JSON schema ----------------------------------------------------------------


def save_motion_json(path, human, obj, contacts, text=""):
    doc = {
        "fps": human.fps,
        "T": human.T,
        "text": text,
        "human": {
            "joint_pos": human.joint_pos.tolist(),
            "rot6d": human.rot6d.tolist(),
        },
        "object": {
            "mesh": obj.mesh_id,
            "translation": obj.translation.tolist(),
            "rotation": obj.rotation.tolist(),
        },
        "contacts": contacts.flags.astype(int).tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_motion_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    T = int(doc["T"])
    human = HumanSequence(
        joint_pos=np.asarray(doc["human"]["joint_pos"], dtype=np.float64),
        rot6d=np.asarray(doc["human"]["rot6d"], dtype=np.float64),
        fps=float(doc["fps"]),
    )
    obj = ObjectSequence(
        translation=np.asarray(doc["object"]["translation"], dtype=np.float64),
        rotation=np.asarray(doc["object"]["rotation"], dtype=np.float64),
        mesh_id=str(doc["object"]["mesh"]),
    )
    contacts = ContactIndicators(np.asarray(doc["contacts"], dtype=np.float64))
    if not (human.T == obj.T == contacts.T == T):
        raise ValueError(f"{path}: length fields disagree with T={T}")
    return human, obj, contacts, str(doc.get("text", ""))
