"""Evaluation suite over generated-vs-reference sequence pairs: waypoint
matching, foot metrics, contact/penetration, ground-truth differences,
distribution distance, retrieval precision, task success, and hand-surface
distance. Lengths are reported in centimeters unless noted.

Conventions pinned here (referenced by the report header):
  * foot sliding accumulates per-frame horizontal foot displacement when the
    foot height at the arriving frame is under 2.5 cm and the displacement
    exceeds 0.1 cm, weighted by clamp(2 - 2^(h/0.025), 0, 1), and is
    normalized by the sequence duration in seconds;
  * hand-object distance is measured from the hand proxy sphere surface
    (clamped at zero for penetrating hands);
  * empty means report 0.0; dataset-level metrics (FID, R_prec, TSR) fill
    only the aggregate row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import sdf_query
from .motion import DEFAULT_SKELETON, rot6d_to_matrix

CONTACT_TAU = 0.004  # meters
FOOT_HEIGHT_THRESHOLD = 0.025  # meters
FOOT_SPEED_TOLERANCE = 0.001  # meters per frame
TSR_REACH = 0.20  # meters
TSR_HOLD = 0.15  # meters
FEATURE_DIM = 128

METRIC_KEYS = (
    "T_s", "T_e", "T_xy", "FS", "H_feet",
    "C_prec", "C_rec", "C_F1", "C%", "P_hand",
    "MPJPE", "T_root", "T_obj", "O_root", "O_obj",
    "FID", "R_prec", "TSR", "D_hand",
)

# fixed sample directions on the hand proxy sphere (axes + corner/edge
# diagonals of the cube, normalized), standing in for hand mesh vertices
_AXES = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
_CORNERS = [(x, y, z) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
_EDGES = [(x, y, 0) for x in (-1, 1) for y in (-1, 1)] + \
         [(x, 0, z) for x in (-1, 1) for z in (-1, 1)] + \
         [(0, y, z) for y in (-1, 1) for z in (-1, 1)]
PROXY_DIRECTIONS = np.array(_AXES + _CORNERS + _EDGES, dtype=np.float64)
PROXY_DIRECTIONS /= np.linalg.norm(PROXY_DIRECTIONS, axis=1, keepdims=True)


@dataclass
class EvalPair:
    gen_human: "HumanSequence"
    gen_obj: "ObjectSequence"
    ref_human: "HumanSequence"
    ref_obj: "ObjectSequence"
    cond: "MaskedCondition"
    mesh: "Mesh"
    sdf: "SdfGrid"
    ref_contacts: np.ndarray  # (T, 4) GT flags

    def __post_init__(self):
        if not (self.gen_human.T == self.ref_human.T == self.gen_obj.T == self.ref_obj.T):
            raise ValueError("generated/reference frame counts differ")


# -- condition matching ----------------------------------------------------------


def condition_matching(gen_obj, cond):
    """(T_s, T_e, T_xy) in cm. Start/end are 3-D errors at the first/last
    frame; T_xy averages planar error over the intermediate constrained
    frames (0.0 when there are none)."""
    frames = cond.constrained_frames()
    T = cond.T
    t_s = float(np.linalg.norm(gen_obj.translation[0] - cond.grid[0, 0:3]))
    t_e = float(np.linalg.norm(gen_obj.translation[T - 1] - cond.grid[T - 1, 0:3]))
    inner = [t for t in frames if 0 < t < T - 1]
    if inner:
        errs = [np.linalg.norm(gen_obj.translation[t, 0:2] - cond.grid[t, 0:2]) for t in inner]
        t_xy = float(np.mean(errs))
    else:
        t_xy = 0.0
    return t_s * 100.0, t_e * 100.0, t_xy * 100.0


# -- human motion -----------------------------------------------------------------


def foot_metrics(human, skeleton=DEFAULT_SKELETON):
    """(FS, H_feet) in cm. See the module docstring for the FS convention."""
    pos = human.joint_pos[:, list(skeleton.foot_joints), :]  # (T, 2, 3)
    heights = pos[:, :, 2]
    total = 0.0
    for f in range(pos.shape[1]):
        disp = np.linalg.norm(np.diff(pos[:, f, :2], axis=0), axis=1)  # (T-1,)
        h = heights[1:, f]
        active = (h < FOOT_HEIGHT_THRESHOLD) & (disp > FOOT_SPEED_TOLERANCE)
        weight = np.clip(2.0 - np.power(2.0, h / FOOT_HEIGHT_THRESHOLD), 0.0, 1.0)
        total += float((disp * weight * active).sum())
    seconds = human.T / human.fps
    return total / seconds * 100.0, float(heights.mean()) * 100.0


# -- interaction ------------------------------------------------------------------


def hand_surface_distances(human, obj, mesh, skeleton=DEFAULT_SKELETON):
    """(T, n_hands) distances from each hand proxy sphere surface to the
    object surface (negative when the proxy center is inside the proxy radius
    band). Hands are transformed into the canonical object frame."""
    hands = human.joint_pos[:, list(skeleton.hand_joints), :]  # (T, 2, 3)
    T, H, _ = hands.shape
    R = obj.matrices()  # (T, 3, 3)
    local = np.einsum("tji,thj->thi", R, hands - obj.translation[:, None, :])
    a, b, c = mesh.triangle_corners()
    _, dist, _ = kernels.closest_points(local.reshape(T * H, 3), a, b, c)
    return dist.reshape(T, H) - skeleton.hand_radius


def contact_metrics(gen_pair, ref_pair, mesh, tau=CONTACT_TAU, skeleton=DEFAULT_SKELETON):
    """(C_prec, C_rec, C_F1, C%) from per-frame min hand-surface distance
    thresholded at tau, generated vs reference. Identical empty sets score as
    perfect agreement."""
    gen_d = hand_surface_distances(*gen_pair, mesh, skeleton).min(axis=1)
    ref_d = hand_surface_distances(*ref_pair, mesh, skeleton).min(axis=1)
    gen_c = gen_d < tau
    ref_c = ref_d < tau
    tp = float((gen_c & ref_c).sum())
    prec = tp / gen_c.sum() if gen_c.any() else (1.0 if not ref_c.any() else 0.0)
    rec = tp / ref_c.sum() if ref_c.any() else (1.0 if not gen_c.any() else 0.0)
    f1 = 2 * prec * rec / (prec + rec) if (prec + rec) > 0 else 0.0
    return prec, rec, f1, float(gen_c.mean())


def penetration_score(human, obj, sdf, skeleton=DEFAULT_SKELETON):
    """Mean per-frame sum of |min(d, 0)| over hand proxy sample points, in cm.
    Samples live on the proxy spheres and are queried against the object-frame
    SDF grid."""
    hands = human.joint_pos[:, list(skeleton.hand_joints), :]  # (T, 2, 3)
    T, H, _ = hands.shape
    samples = hands[:, :, None, :] + skeleton.hand_radius * PROXY_DIRECTIONS[None, None, :, :]
    R = obj.matrices()
    local = np.einsum("tji,thkj->thki", R, samples - obj.translation[:, None, None, :])
    d = sdf_query(sdf, local.reshape(-1, 3)).reshape(T, -1)
    return float(np.abs(np.minimum(d, 0.0)).sum(axis=1).mean()) * 100.0


def d_hand(human, obj, mesh, active_frames, skeleton=DEFAULT_SKELETON):
    """Mean over active frames of the min hand-proxy-to-surface distance
    (clamped at 0), in cm. Returns (value, has_active)."""
    active_frames = np.asarray(active_frames, dtype=bool)
    if not active_frames.any():
        return 0.0, False
    d = hand_surface_distances(human, obj, mesh, skeleton).min(axis=1)
    return float(np.maximum(d[active_frames], 0.0).mean()) * 100.0, True


def tsr(final_errors, hold_distances, reach_cm=TSR_REACH * 100, hold_cm=TSR_HOLD * 100):
    """Success rate: final object error under reach_cm AND max transport-phase
    hand-object distance under hold_cm (both in cm)."""
    final_errors = np.asarray(final_errors, dtype=np.float64)
    hold_distances = np.asarray(hold_distances, dtype=np.float64)
    if final_errors.shape != hold_distances.shape:
        raise ValueError("per-sequence error arrays must align")
    ok = (final_errors < reach_cm) & (hold_distances < hold_cm)
    return float(ok.mean())


# -- ground-truth difference --------------------------------------------------------


def gt_difference(gen_human, gen_obj, ref_human, ref_obj):
    """(MPJPE, T_root, T_obj, O_root, O_obj); positions in cm, orientation
    errors as Frobenius norms of R_pred R_gt^T - I."""
    mpjpe = float(np.linalg.norm(gen_human.joint_pos - ref_human.joint_pos, axis=2).mean()) * 100.0
    t_root = float(np.linalg.norm(gen_human.joint_pos[:, 0] - ref_human.joint_pos[:, 0], axis=1).mean()) * 100.0
    t_obj = float(np.linalg.norm(gen_obj.translation - ref_obj.translation, axis=1).mean()) * 100.0

    def rot_err(Rp, Rg):
        return float(np.linalg.norm(Rp @ Rg.T - np.eye(3)))

    o_root = float(np.mean([
        rot_err(rot6d_to_matrix(gen_human.rot6d[t, 0]), rot6d_to_matrix(ref_human.rot6d[t, 0]))
        for t in range(gen_human.T)
    ]))
    Rp, Rg = gen_obj.matrices(), ref_obj.matrices()
    o_obj = float(np.mean([rot_err(Rp[t], Rg[t]) for t in range(gen_obj.T)]))
    return mpjpe, t_root, t_obj, o_root, o_obj


# -- distribution metrics --------------------------------------------------------------


def fid(features_a, features_b, eps=1e-6):
    """Fréchet distance between Gaussian fits of two feature sets, with
    eps-regularized covariances and the matrix square root taken by symmetric
    eigendecomposition of S_a^(1/2) S_b S_a^(1/2). Clamped at 0 (tiny negative
    round-off is possible on near-identical sets)."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be (n, F) with matching F")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    f = a.shape[1]
    cov_a = np.cov(a, rowvar=False).reshape(f, f) + eps * np.eye(f)
    cov_b = np.cov(b, rowvar=False).reshape(f, f) + eps * np.eye(f)

    wa, va = np.linalg.eigh(cov_a)
    root_a = va @ np.diag(np.sqrt(np.maximum(wa, 0.0))) @ va.T
    middle = root_a @ cov_b @ root_a
    wm = np.linalg.eigvalsh((middle + middle.T) / 2.0)
    tr_sqrt = np.sqrt(np.maximum(wm, 0.0)).sum()

    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    if not math.isfinite(value):
        raise ValueError("non-finite distribution distance")
    return max(value, 0.0)


def r_precision(motion_feats, text_feats, rng, pool=32, k=3):
    """Top-k retrieval precision: each motion ranks its matched text feature
    against pool-1 sampled mismatches by Euclidean distance."""
    m = np.asarray(motion_feats, dtype=np.float64)
    t = np.asarray(text_feats, dtype=np.float64)
    n = len(m)
    if n < pool:
        raise ValueError(f"need at least {pool} items, got {n}")
    if len(t) != n:
        raise ValueError("motion/text feature counts differ")
    hits = 0
    for i in range(n):
        others = rng.permutation(n - 1)[: pool - 1]
        others = np.where(others >= i, others + 1, others)
        d_match = np.linalg.norm(m[i] - t[i])
        d_others = np.linalg.norm(m[i] - t[others], axis=1)
        if (d_others < d_match).sum() <= k - 1:
            hits += 1
    return hits / n


# -- handcrafted features ----------------------------------------------------------------


_FEATURE_JOINTS = (15, 20, 21, 22, 23, 10, 11)  # head, wrists, hands, feet
_SPEED_JOINTS = (0, 15, 20, 21, 22, 23, 10, 11)
_ROT_JOINTS = (0, 16, 17, 18, 19)


def feature_vector(human, obj, mesh, skeleton=DEFAULT_SKELETON):
    """Deterministic 128-dim summary of one sequence (layout below); used by
    the distribution and retrieval metrics when no external features are
    supplied.

      [0:21]    mean root-relative position, 7 joints x 3
      [21:42]   std  root-relative position
      [42:50]   mean speed, 8 joints (m/s)
      [50:58]   std  speed
      [58:62]   root: mean height, net planar displacement (2), path length
      [62:72]   object: net displacement (3), path length, mean/std offset to root (6)
      [72:82]   object rotation: mean of the 9 entries, mean per-frame delta norm
      [82:87]   hand-surface distance: mean, std, min, max, frac below 5 cm
      [87:91]   foot heights: mean/std per foot
      [91:121]  mean 6D rotation, 5 joints x 6
      [121:123] object vertical speed: mean, std
      [123:125] mean hand heights
      [125]     duration in seconds
      [126:128] unit heading of the net object displacement
    """
    T = human.T
    fps = human.fps
    root = human.joint_pos[:, 0]
    rel = human.joint_pos[:, list(_FEATURE_JOINTS)] - root[:, None, :]
    parts = [rel.mean(axis=0).ravel(), rel.std(axis=0).ravel()]

    speed = np.linalg.norm(np.diff(human.joint_pos[:, list(_SPEED_JOINTS)], axis=0), axis=2) * fps
    parts.append(speed.mean(axis=0))
    parts.append(speed.std(axis=0))

    net_xy = root[-1, :2] - root[0, :2]
    path = float(np.linalg.norm(np.diff(root[:, :2], axis=0), axis=1).sum())
    parts.append(np.array([root[:, 2].mean(), net_xy[0], net_xy[1], path]))

    off = obj.translation - root
    obj_net = obj.translation[-1] - obj.translation[0]
    obj_path = float(np.linalg.norm(np.diff(obj.translation, axis=0), axis=1).sum())
    parts.append(np.concatenate([obj_net, [obj_path], off.mean(axis=0), off.std(axis=0)]))

    rot_delta = np.linalg.norm(np.diff(obj.rotation, axis=0), axis=1)
    parts.append(np.concatenate([obj.rotation.mean(axis=0), [rot_delta.mean() if T > 1 else 0.0]]))

    d = hand_surface_distances(human, obj, mesh, skeleton).min(axis=1)
    parts.append(np.array([d.mean(), d.std(), d.min(), d.max(), float((d < 0.05).mean())]))

    feet_h = human.joint_pos[:, list(skeleton.foot_joints), 2]
    parts.append(np.concatenate([feet_h.mean(axis=0), feet_h.std(axis=0)]))

    parts.append(human.rot6d[:, list(_ROT_JOINTS)].mean(axis=0).ravel())

    vz = np.diff(obj.translation[:, 2]) * fps
    parts.append(np.array([vz.mean() if T > 1 else 0.0, vz.std() if T > 1 else 0.0]))
    parts.append(human.joint_pos[:, list(skeleton.hand_joints), 2].mean(axis=0))
    parts.append(np.array([T / fps]))
    heading = obj_net[:2]
    norm = np.linalg.norm(heading)
    parts.append(heading / norm if norm > 1e-9 else np.zeros(2))

    out = np.concatenate(parts)
    if out.shape != (FEATURE_DIM,):
        raise AssertionError(f"feature layout drifted: {out.shape}")
    return out


# -- per-pair evaluation -------------------------------------------------------------------


def evaluate_pair(pair, skeleton=DEFAULT_SKELETON):
    """Per-sequence metric dict (dataset-level keys left out)."""
    t_s, t_e, t_xy = condition_matching(pair.gen_obj, pair.cond)
    fs, h_feet = foot_metrics(pair.gen_human, skeleton)
    prec, rec, f1, c_pct = contact_metrics(
        (pair.gen_human, pair.gen_obj), (pair.ref_human, pair.ref_obj), pair.mesh,
        skeleton=skeleton,
    )
    p_hand = penetration_score(pair.gen_human, pair.gen_obj, pair.sdf, skeleton)
    mpjpe, t_root, t_obj, o_root, o_obj = gt_difference(
        pair.gen_human, pair.gen_obj, pair.ref_human, pair.ref_obj
    )
    active = pair.ref_contacts[:, 0:2].max(axis=1) > 0.5
    dh, has_active = d_hand(pair.gen_human, pair.gen_obj, pair.mesh, active, skeleton)
    report = {
        "T_s": t_s, "T_e": t_e, "T_xy": t_xy, "FS": fs, "H_feet": h_feet,
        "C_prec": prec, "C_rec": rec, "C_F1": f1, "C%": c_pct, "P_hand": p_hand,
        "MPJPE": mpjpe, "T_root": t_root, "T_obj": t_obj, "O_root": o_root, "O_obj": o_obj,
        "D_hand": dh,
    }
    return report, has_active


def aggregate_reports(per_seq, dataset_level):
    """Mean over sequences plus the dataset-level values."""
    agg = {}
    for key in METRIC_KEYS:
        if key in dataset_level:
            agg[key] = dataset_level[key]
        else:
            agg[key] = float(np.mean([r[key] for r in per_seq])) if per_seq else 0.0
    return agg


def write_report_csv(path, per_seq, aggregate, names):
    """One row per sequence plus an `aggregate` row; dataset-level columns are
    blank on per-sequence rows."""
    lines = [
        "# units: lengths cm; FS normalized per second; contact/ratio metrics in [0,1]",
        "# D_hand active frames = reference contact-flag frames",
        "sequence," + ",".join(METRIC_KEYS),
    ]
    for name, rep in zip(names, per_seq):
        cells = [f"{rep[k]:.6f}" if k in rep else "" for k in METRIC_KEYS]
        lines.append(name + "," + ",".join(cells))
    lines.append("aggregate," + ",".join(f"{aggregate[k]:.6f}" for k in METRIC_KEYS))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
