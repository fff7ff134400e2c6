"""Camera-trajectory accuracy metrics with closed-form similarity alignment.

Poses are camera-to-world: ``rotation`` maps camera axes into the world and
``position`` is the camera center.  Before computing metrics the estimated
trajectory is aligned to the reference by the least-squares similarity
transform (scale, rotation, translation) over camera centers; the metrics
are then

* absolute error: RMSE over per-frame center distances (denominator n)
* relative translation error: RMSE over consecutive relative-motion
  translation differences (denominator n - 1)
* relative rotation error: RMSE over consecutive relative-rotation
  geodesic angles in degrees (denominator n - 1)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PoseTrajectory",
    "Sim3Transform",
    "align_sim3",
    "ate",
    "rpe_t",
    "rpe_r",
    "load_pose_file",
    "save_pose_file",
    "pose_trajectory_from_cameras",
    "quat_to_matrix",
    "matrix_to_quat",
]

_ORTHO_TOL = 1e-9


class TrajectoryError(ValueError):
    """Raised for malformed trajectories or degenerate alignments."""


@dataclass(frozen=True)
class PoseTrajectory:
    """Ordered camera-to-world poses."""

    rotations: np.ndarray  # (n, 3, 3)
    positions: np.ndarray  # (n, 3)
    timestamps: np.ndarray | None = None

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotations, dtype=np.float64)
        pos = np.asarray(self.positions, dtype=np.float64)
        if rot.ndim != 3 or rot.shape[1:] != (3, 3) or pos.shape != (rot.shape[0], 3):
            raise TrajectoryError("rotations must be (n, 3, 3) and positions (n, 3)")
        if rot.shape[0] < 2:
            raise TrajectoryError("a trajectory needs at least two poses")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(pos))):
            raise TrajectoryError("poses must be finite")
        for i, r in enumerate(rot):
            if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
                raise TrajectoryError(f"pose {i}: rotation is not a proper rotation matrix")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "positions", pos)
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
            if ts.size != rot.shape[0]:
                raise TrajectoryError("timestamps must match the pose count")
            object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return int(self.positions.shape[0])


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity transform x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise TrajectoryError("scale must be finite and positive")
        rot = np.asarray(self.rotation, dtype=np.float64)
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
            raise TrajectoryError("similarity rotation is not orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def apply(self, trajectory: PoseTrajectory) -> PoseTrajectory:
        positions = trajectory.positions @ (self.scale * self.rotation).T + self.translation
        rotations = np.einsum("ij,njk->nik", self.rotation, trajectory.rotations)
        return PoseTrajectory(rotations=rotations, positions=positions, timestamps=trajectory.timestamps)


def _check_lengths(est: PoseTrajectory, ref: PoseTrajectory) -> int:
    if len(est) != len(ref):
        raise TrajectoryError(f"length mismatch: {len(est)} vs {len(ref)}")
    return len(est)


def align_sim3(est: PoseTrajectory, ref: PoseTrajectory) -> tuple[PoseTrajectory, Sim3Transform]:
    """Least-squares similarity alignment of est onto ref (Umeyama form).

    Minimizes sum ||ref_i - (s R est_i + t)||^2 over camera centers; the
    recovered transform therefore maps estimated coordinates into the
    reference frame (a trajectory built as 2x the reference recovers
    s = 0.5).  Needs n >= 3 with non-collinear reference centers.
    """
    n = _check_lengths(est, ref)
    if n < 3:
        raise TrajectoryError("alignment needs at least 3 poses")
    x = est.positions
    y = ref.positions
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = float((xc**2).sum()) / n
    if var_x < 1e-18:
        raise TrajectoryError("alignment underdetermined: estimated centers coincide")
    cov = (yc.T @ xc) / n
    u, d, vt = np.linalg.svd(cov)
    # Non-collinear centers on both sides leave at most one zero singular value.
    if d[1] <= max(d[0] * 1e-9, 1e-18):
        raise TrajectoryError("alignment underdetermined: centers are collinear or coincident")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s_fix[2, 2] = -1.0
    rotation = u @ s_fix @ vt
    scale = float(np.trace(np.diag(d) @ s_fix)) / var_x
    if scale <= 0.0:
        raise TrajectoryError("alignment produced a non-positive scale")
    translation = mu_y - scale * rotation @ mu_x
    transform = Sim3Transform(scale=scale, rotation=rotation, translation=translation)
    return transform.apply(est), transform


def ate(est_aligned: PoseTrajectory, ref: PoseTrajectory) -> tuple[float, np.ndarray]:
    """Absolute trajectory error: (RMSE, per-frame center distances)."""
    n = _check_lengths(est_aligned, ref)
    per_frame = np.linalg.norm(ref.positions - est_aligned.positions, axis=1)
    return float(np.sqrt((per_frame**2).sum() / n)), per_frame


def _relative_motions(traj: PoseTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-step relative rotations and translations T_i^-1 T_{i+1}."""
    rot = traj.rotations
    pos = traj.positions
    rel_rot = np.einsum("nij,nik->njk", rot[:-1], rot[1:])  # R_i^T R_{i+1}
    rel_t = np.einsum("nij,ni->nj", rot[:-1], pos[1:] - pos[:-1])  # R_i^T (p_{i+1} - p_i)
    return rel_rot, rel_t


def rpe_t(est_aligned: PoseTrajectory, ref: PoseTrajectory) -> tuple[float, np.ndarray]:
    """Relative translation error: (RMSE, per-step differences)."""
    n = _check_lengths(est_aligned, ref)
    _, rel_ref = _relative_motions(ref)
    _, rel_est = _relative_motions(est_aligned)
    per_step = np.linalg.norm(rel_ref - rel_est, axis=1)
    return float(np.sqrt((per_step**2).sum() / (n - 1))), per_step


def rpe_r(est_aligned: PoseTrajectory, ref: PoseTrajectory) -> tuple[float, np.ndarray]:
    """Relative rotation error in degrees: (RMSE, per-step geodesic angles)."""
    n = _check_lengths(est_aligned, ref)
    rel_ref, _ = _relative_motions(ref)
    rel_est, _ = _relative_motions(est_aligned)
    combined = np.einsum("nij,nik->njk", rel_ref, rel_est)  # ref^T est
    traces = np.trace(combined, axis1=1, axis2=2)
    angles = np.degrees(np.arccos(np.clip((traces - 1.0) / 2.0, -1.0, 1.0)))
    return float(np.sqrt((angles**2).sum() / (n - 1))), angles


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion (normalized internally)."""
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4)
    norm = np.sqrt(w * w + x * x + y * y + z * z)
    if norm < 1e-12:
        raise TrajectoryError("zero quaternion")
    w, x, y, z = w / norm, x / norm, y / norm, z / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternion from a rotation matrix, w >= 0."""
    rot = np.asarray(rot, dtype=np.float64)
    tr = float(np.trace(rot))
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (rot[2, 1] - rot[1, 2]) / s, (rot[0, 2] - rot[2, 0]) / s, (rot[1, 0] - rot[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(rot)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(rot[i, i] - rot[j, j] - rot[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (rot[k, j] - rot[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (rot[j, i] + rot[i, j]) / s
        q[1 + k] = (rot[k, i] + rot[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def load_pose_file(path) -> PoseTrajectory:
    """Read one pose per line; ``#`` starts a comment.

    Two line layouts are accepted:
    * ``timestamp tx ty tz qw qx qy qz`` (8 fields, quaternion)
    * ``timestamp tx ty tz r00 r01 r02 r10 ... r22`` (13 fields, row-major matrix)
    """
    stamps, rots, poss = [], [], []
    with open(path) as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) == 8:
                vals = [float(p) for p in parts]
                rot = quat_to_matrix(vals[4:8])
            elif len(parts) == 13:
                vals = [float(p) for p in parts]
                rot = np.asarray(vals[4:13], dtype=np.float64).reshape(3, 3)
            else:
                raise TrajectoryError(f"{path}:{line_no}: expected 8 or 13 fields, got {len(parts)}")
            stamps.append(vals[0])
            poss.append(vals[1:4])
            rots.append(rot)
    if len(rots) < 2:
        raise TrajectoryError(f"{path}: fewer than two poses")
    return PoseTrajectory(
        rotations=np.asarray(rots), positions=np.asarray(poss), timestamps=np.asarray(stamps)
    )


def save_pose_file(path, trajectory: PoseTrajectory) -> None:
    """Write quaternion-form pose lines (``timestamp tx ty tz qw qx qy qz``)."""
    with open(path, "w") as handle:
        for i in range(len(trajectory)):
            ts = trajectory.timestamps[i] if trajectory.timestamps is not None else float(i)
            q = matrix_to_quat(trajectory.rotations[i])
            p = trajectory.positions[i]
            handle.write(
                f"{ts:.6f} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                f"{q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g}\n"
            )


def pose_trajectory_from_cameras(cameras) -> PoseTrajectory:
    """Camera-to-world trajectory from world-to-camera pinhole poses."""
    rots = np.stack([cam.rotation.T for cam in cameras])
    poss = np.stack([cam.center for cam in cameras])
    return PoseTrajectory(rotations=rots, positions=poss)
