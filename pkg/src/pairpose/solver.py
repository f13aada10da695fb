"""Pose recovery from correspondences and pose-set fusion.

Two solvers are provided: a weighted least-squares (Kabsch/SVD) alignment,
and the local-frame pair alignment that recovers a rigid transform from a
single oriented point-pair correspondence by moving both reference points
into a canonical frame (origin, normal on the x-axis) and resolving the
leftover in-plane angle.  The second is the production path; the first is
its independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AllPairsDegenerate,
    DegenerateConfiguration,
    DegeneratePair,
    EmptySet,
    NonFiniteInput,
)
from .geom import (
    OrientedPoint,
    Pose,
    pose_compose,
    pose_invert,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_normalize,
)

IN_PLANE_RADIUS_TOL = 1e-9

DIRECTIONS = ("scene_to_model", "model_to_scene")

PROVENANCES = ("direct", "scene-branch", "model-branch")


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Per-point predicted matches: source points paired with targets in the
    opposite frame.  direction says which frame the targets live in."""

    source_positions: np.ndarray
    source_normals: np.ndarray
    target_positions: np.ndarray
    target_normals: np.ndarray
    direction: str

    def __post_init__(self):
        arrays = {}
        for name in ("source_positions", "source_normals",
                     "target_positions", "target_normals"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), np.float64))
            if a.ndim != 2 or a.shape[1] != 3:
                raise ValueError(f"{name} must be (N, 3), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise NonFiniteInput(f"{name} contains non-finite values")
            arrays[name] = a
        n = arrays["source_positions"].shape[0]
        if n < 1:
            raise ValueError("correspondence set needs at least one pair")
        if any(a.shape[0] != n for a in arrays.values()):
            raise ValueError("correspondence arrays disagree in length")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)
            a.flags.writeable = False

    def __len__(self):
        return self.source_positions.shape[0]

    def model_scene_sides(self):
        """Return ((model_pos, model_nrm), (scene_pos, scene_nrm))."""
        if self.direction == "scene_to_model":
            return ((self.target_positions, self.target_normals),
                    (self.source_positions, self.source_normals))
        return ((self.source_positions, self.source_normals),
                (self.target_positions, self.target_normals))


@dataclass(frozen=True, eq=False)
class PoseSet:
    """Poses with a provenance tag per entry (direct / scene-branch / model-branch)."""

    poses: tuple
    provenance: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        prov = tuple(self.provenance)
        if len(poses) != len(prov):
            raise ValueError("poses and provenance lengths differ")
        if any(p not in PROVENANCES for p in prov):
            raise ValueError(f"unknown provenance tag in {prov}")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "provenance", prov)

    def __len__(self):
        return len(self.poses)

    @staticmethod
    def union(*sets: "PoseSet") -> "PoseSet":
        poses, prov = [], []
        for s in sets:
            poses.extend(s.poses)
            prov.extend(s.provenance)
        return PoseSet(tuple(poses), tuple(prov))


def kabsch_points(src: np.ndarray, tgt: np.ndarray,
                  weights: np.ndarray | None = None) -> Pose:
    """Least-squares rigid transform: argmin_T sum w |T(src) - tgt|^2.

    Needs >= 3 pairs whose centered sources span rank >= 2; the reflection
    case is resolved by a determinant sign correction so the rotation is
    always proper.
    """
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"src/tgt must be matching (N, 3), got {src.shape}, {tgt.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 pairs, got {n}")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()

    cs = w @ src
    ct = w @ tgt
    src_c = src - cs
    tgt_c = tgt - ct
    sv = np.linalg.svd(src_c * np.sqrt(w)[:, None], compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-30):
        raise DegenerateConfiguration("centered source points span rank < 2")

    H = (src_c * w[:, None]).T @ tgt_c
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = ct - R @ cs
    return Pose(quat_from_matrix(R), t)


def kabsch_align(c: CorrespondenceSet, weights=None) -> Pose:
    """Kabsch over a correspondence set, mapping its sources onto its targets."""
    return kabsch_points(c.source_positions, c.target_positions, weights)


def local_frame(p: OrientedPoint) -> Pose:
    """Transform taking p.position to the origin and p.normal to +x.

    The free in-plane rotation is fixed by rotating about normal x (+x) by
    the angle between them; the antipodal normal (-x) rotates pi about +z.
    """
    x_axis = np.array([1.0, 0.0, 0.0])
    n = p.normal
    axis = np.cross(n, x_axis)
    s = np.linalg.norm(axis)
    c = float(n @ x_axis)
    if s < 1e-12:
        if c > 0.0:
            q = np.array([1.0, 0.0, 0.0, 0.0])
        else:
            q = quat_from_axis_angle([0.0, 0.0, 1.0], np.pi)
    else:
        q = quat_from_axis_angle(axis / s, np.arctan2(s, c))
    rot = Pose(q, np.zeros(3))
    return Pose(q, -rot.rotation_matrix() @ p.position)


def pair_alignment_pose(model_pair, scene_pair) -> Pose:
    """Pose (model -> scene) from one oriented point-pair correspondence.

    model_pair, scene_pair: (reference OrientedPoint, second OrientedPoint).
    Both reference points are moved into the canonical frame, the second
    points' in-plane angles about +x fix the remaining rotation, and the
    result is composed back.  Raises DegeneratePair when a second point has
    no in-plane component (the angle is undefined).
    """
    m_r, m_i = model_pair
    s_r, s_i = scene_pair
    t_mg = local_frame(m_r)
    t_sg = local_frame(s_r)
    m2 = t_mg.apply_point(m_i.position)
    s2 = t_sg.apply_point(s_i.position)
    rm = np.hypot(m2[1], m2[2])
    rs = np.hypot(s2[1], s2[2])
    if rm < IN_PLANE_RADIUS_TOL or rs < IN_PLANE_RADIUS_TOL:
        raise DegeneratePair("second point lies on the reference normal axis")
    alpha = np.arctan2(s2[2], s2[1]) - np.arctan2(m2[2], m2[1])
    r_g = Pose(quat_from_axis_angle([1.0, 0.0, 0.0], alpha), np.zeros(3))
    return pose_compose(pose_invert(t_sg), pose_compose(r_g, t_mg))


def poses_from_matches(c: CorrespondenceSet, num_pairs: int, seed: int) -> PoseSet:
    """Sample point pairs from a correspondence set and solve each by local-
    frame alignment; degenerate pairs are skipped."""
    if len(c) < 2:
        raise ValueError("need at least 2 correspondences to form a pair")
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    (mp, mn), (sp, sn) = c.model_scene_sides()
    tag = "scene-branch" if c.direction == "scene_to_model" else "model-branch"
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(num_pairs):
        i, j = rng.choice(len(c), size=2, replace=False)
        try:
            pose = pair_alignment_pose(
                (OrientedPoint(mp[i], mn[i]), OrientedPoint(mp[j], mn[j])),
                (OrientedPoint(sp[i], sn[i]), OrientedPoint(sp[j], sn[j])))
        except DegeneratePair:
            continue
        poses.append(pose)
    if not poses:
        raise AllPairsDegenerate(f"all {num_pairs} sampled pairs were degenerate")
    return PoseSet(tuple(poses), (tag,) * len(poses))


def average_poses(s: PoseSet) -> Pose:
    """Fuse a pose set: mean translation + eigen (chordal L2) quaternion mean.

    The rotation mean maximizes sum (q . q_i)^2, i.e. the top eigenvector of
    sum q_i q_i^T, which is invariant to per-quaternion sign flips.
    """
    if len(s) == 0:
        raise EmptySet("cannot average an empty pose set")
    t = np.mean([p.t for p in s.poses], axis=0)
    acc = np.zeros((4, 4))
    for p in s.poses:
        acc += np.outer(p.q, p.q)
    evals, evecs = np.linalg.eigh(acc)
    q = quat_normalize(evecs[:, np.argmax(evals)])
    return Pose(q, t)
