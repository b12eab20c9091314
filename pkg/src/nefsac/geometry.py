"""Two-view geometry: poses, epipolar models, Sampson error, cheirality.

Conventions
-----------
* A correspondence is a row ``(u1, v1, u2, v2)`` in pixels; arrays of them
  have shape ``(n, 4)``.
* A pose ``(R, t)`` maps camera-1 coordinates to camera-2 coordinates,
  ``X2 = R @ X1 + t``, so ``E = [t]x R`` and ``q2^T E q1 = 0`` for
  calibrated homogeneous points.
* ``F = K2^-T E K1^-1``; fundamental matrices are kept at unit Frobenius
  norm with a canonical sign (largest-magnitude entry positive).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModel, NearParallelRays

ORTHO_TOL = 1e-9
PARALLEL_COND = 1e12

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def normalize(self, uv: np.ndarray) -> np.ndarray:
        """Pixel coordinates ``(..., 2)`` to calibrated homogeneous ``(..., 3)``."""
        uv = np.asarray(uv, dtype=float)
        out = np.ones(uv.shape[:-1] + (3,))
        out[..., 0] = (uv[..., 0] - self.cx) / self.fx
        out[..., 1] = (uv[..., 1] - self.cy) / self.fy
        return out

    def project(self, X: np.ndarray) -> np.ndarray:
        """Camera-frame points ``(..., 3)`` to pixels ``(..., 2)``."""
        X = np.asarray(X, dtype=float)
        z = X[..., 2]
        return np.stack(
            [self.fx * X[..., 0] / z + self.cx, self.fy * X[..., 1] / z + self.cy], axis=-1
        )

    def as_tuple(self):
        return (self.fx, self.fy, self.cx, self.cy)


@dataclass(frozen=True, eq=False)
class Pose:
    """Relative pose with a unit-norm translation direction."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose must be finite")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("R is not a rotation")
        norm = np.linalg.norm(t)
        if norm == 0:
            raise ValueError("translation must be nonzero")
        t = t / norm
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def __repr__(self):
        return f"Pose(R={self.R.tolist()}, t={self.t.tolist()})"


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Rotation angle in radians; works on ``(3, 3)`` or ``(..., 3, 3)``.

    Uses atan2 of the skew and trace parts, accurate near 0 and pi.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.sqrt(
        (R[..., 2, 1] - R[..., 1, 2]) ** 2
        + (R[..., 0, 2] - R[..., 2, 0]) ** 2
        + (R[..., 1, 0] - R[..., 0, 1]) ** 2
    )
    c = 0.5 * (R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0)
    return np.arctan2(s, c)


def rotation_axis(R: np.ndarray) -> np.ndarray | None:
    """Unit rotation axis, or None for (numerically) the identity."""
    angle = float(rotation_angle(R))
    if angle < 1e-9:
        return None
    if angle < np.pi - 1e-6:
        a = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return a / np.linalg.norm(a)
    # near pi: axis from the symmetric part
    S = 0.5 * (R + np.eye(3))
    a = S[np.argmax(np.diag(S))]
    return a / np.linalg.norm(a)


def canonical_sign(M: np.ndarray) -> np.ndarray:
    """Scale to unit Frobenius norm and make the largest-magnitude entry positive."""
    M = np.asarray(M, dtype=float)
    flat = M.reshape(M.shape[:-2] + (9,))
    norm = np.linalg.norm(flat, axis=-1)
    idx = np.argmax(np.abs(flat), axis=-1)
    pivot = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    sign = np.where(pivot < 0, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = flat * (sign / norm)[..., None]
    return out.reshape(M.shape)


def enforce_rank2(M: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(M)
    s[..., 2] = 0.0
    return (U * s[..., None, :]) @ Vt


def homogeneous_pairs(corr: np.ndarray):
    corr = np.asarray(corr, dtype=float)
    ones = np.ones(corr.shape[:-1] + (1,))
    return (
        np.concatenate([corr[..., 0:2], ones], axis=-1),
        np.concatenate([corr[..., 2:4], ones], axis=-1),
    )


def sampson_error(F: np.ndarray, corr) -> np.ndarray | float:
    """Sampson distance in pixels of one correspondence ``(4,)`` or many ``(n, 4)``.

    Returns +inf where both epipolar-line gradients vanish.
    """
    c = np.asarray(corr, dtype=float)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    F = np.asarray(F, dtype=float)
    u1, v1, u2, v2 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    # F x1 and F^T x2 expanded by hand; this runs inside the RANSAC inner loop
    l2a = F[0, 0] * u1 + F[0, 1] * v1 + F[0, 2]
    l2b = F[1, 0] * u1 + F[1, 1] * v1 + F[1, 2]
    l2c = F[2, 0] * u1 + F[2, 1] * v1 + F[2, 2]
    l1a = F[0, 0] * u2 + F[1, 0] * v2 + F[2, 0]
    l1b = F[0, 1] * u2 + F[1, 1] * v2 + F[2, 1]
    r = u2 * l2a + v2 * l2b + l2c
    den = l2a * l2a + l2b * l2b + l1a * l1a + l1b * l1b
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(r) / np.sqrt(den)
    err = np.where(den < 1e-300, np.inf, err)
    return float(err[0]) if single else err


def sampson_error_batch(F: np.ndarray, corr: np.ndarray) -> np.ndarray:
    """Sampson errors for stacked models ``F (..., 3, 3)`` and points ``(..., n, 4)``."""
    x1, x2 = homogeneous_pairs(corr)
    Fx1 = np.einsum("...ij,...nj->...ni", F, x1)
    Ftx2 = np.einsum("...ji,...nj->...ni", F, x2)
    r = np.sum(x2 * Fx1, axis=-1)
    den = Fx1[..., 0] ** 2 + Fx1[..., 1] ** 2 + Ftx2[..., 0] ** 2 + Ftx2[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(r) / np.sqrt(den)
    return np.where(den < 1e-300, np.inf, err)


def essential_from_pose(pose: Pose) -> np.ndarray:
    return skew(pose.t) @ pose.R


def essential_to_fundamental(E, K1: CameraIntrinsics, K2: CameraIntrinsics) -> np.ndarray:
    """``K2^-T E K1^-1`` at unit Frobenius norm; accepts stacked ``(..., 3, 3)``."""
    F = K2.K_inv.T @ np.asarray(E, dtype=float) @ K1.K_inv
    return canonical_sign(F)


def fundamental_to_essential(F, K1: CameraIntrinsics, K2: CameraIntrinsics, project=True):
    """``K2^T F K1``, optionally projected onto the essential manifold."""
    E = K2.K.T @ np.asarray(F, dtype=float) @ K1.K
    if project:
        E = project_to_essential(E)
    return canonical_sign(E)


def project_to_essential(E: np.ndarray) -> np.ndarray:
    """Closest essential matrix: equal leading singular values, rank 2."""
    U, s, Vt = np.linalg.svd(E)
    mean = 0.5 * (s[..., 0] + s[..., 1])
    d = np.zeros_like(s)
    d[..., 0] = mean
    d[..., 1] = mean
    return (U * d[..., None, :]) @ Vt


def decompose_essential(E: np.ndarray):
    """Four-fold decomposition of stacked essential matrices.

    Returns ``R (..., 4, 3, 3)``, ``t (..., 4, 3)`` ordered
    ``(Ra, t), (Ra, -t), (Rb, t), (Rb, -t)`` and the relative gap between
    the two leading singular values.
    """
    E = np.asarray(E, dtype=float)
    U, s, Vt = np.linalg.svd(E)
    U = U * np.where(np.linalg.det(U) < 0, -1.0, 1.0)[..., None, None]
    Vt = Vt * np.where(np.linalg.det(Vt) < 0, -1.0, 1.0)[..., None, None]
    Ra = U @ _W @ Vt
    Rb = U @ _W.T @ Vt
    t = U[..., :, 2]
    R = np.stack([Ra, Ra, Rb, Rb], axis=-3)
    T = np.stack([t, -t, t, -t], axis=-2)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = (s[..., 0] - s[..., 1]) / s[..., 0]
    return R, T, gap


def pose_from_essential(E) -> list[Pose]:
    E = np.asarray(E, dtype=float)
    R, T, gap = decompose_essential(E)
    if not np.isfinite(gap) or gap > 0.1:
        raise DegenerateModel(f"leading singular values differ by {gap:.3g} (relative)")
    return [Pose(R[i], T[i]) for i in range(4)]


def triangulate_depths_normalized(R, t, q1, q2):
    """Signed depths of calibrated rays by linear least squares.

    Solves ``l1 * R q1 - l2 * q2 = -t`` for ``(l1, l2)``; with ``q`` at unit
    z, the multipliers are depths along each optical axis. Broadcasts over
    leading dimensions. Returns ``(d1, d2, cond)`` where ``cond`` is the
    condition number of the 2x2 normal matrix.
    """
    a = np.einsum("...ij,...j->...i", R, q1)
    b = -np.asarray(q2, dtype=float)
    aa = np.sum(a * a, axis=-1)
    bb = np.sum(b * b, axis=-1)
    ab = np.sum(a * b, axis=-1)
    t = np.asarray(t, dtype=float)
    ta = -np.sum(t * a, axis=-1)
    tb = -np.sum(t * b, axis=-1)
    det = aa * bb - ab * ab
    tr = aa + bb
    # eigenvalues of the 2x2 symmetric normal matrix give its condition number
    disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
    lmax = 0.5 * tr + disc
    lmin = 0.5 * tr - disc
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lmin > 0, lmax / lmin, np.inf)
        d1 = (bb * ta - ab * tb) / det
        d2 = (aa * tb - ab * ta) / det
    return d1, d2, cond


def triangulate_depths(pose: Pose, c, K1: CameraIntrinsics, K2: CameraIntrinsics):
    c = np.asarray(c, dtype=float)
    q1 = K1.normalize(c[0:2])
    q2 = K2.normalize(c[2:4])
    d1, d2, cond = triangulate_depths_normalized(pose.R, pose.t, q1[None], q2[None])
    if not cond[0] < PARALLEL_COND:
        raise NearParallelRays(f"condition number {cond[0]:.3g}")
    return float(d1[0]), float(d2[0])


def positive_depth_counts(R, t, q1, q2):
    """Count of points in front of both cameras for stacked candidate poses.

    ``R (..., 3, 3)``, ``t (..., 3)``, ``q1, q2 (..., n, 3)`` broadcastable.
    """
    d1, d2, cond = triangulate_depths_normalized(R[..., None, :, :], t[..., None, :], q1, q2)
    ok = (d1 > 0) & (d2 > 0) & (cond < PARALLEL_COND)
    return ok.sum(axis=-1)


def cheirality_select(candidates, sample, K1: CameraIntrinsics, K2: CameraIntrinsics):
    """Candidate with the most positive-depth points; None without a strict majority."""
    if not candidates:
        return None
    sample = np.asarray(sample, dtype=float)
    q1 = K1.normalize(sample[:, 0:2])
    q2 = K2.normalize(sample[:, 2:4])
    R = np.stack([p.R for p in candidates])
    t = np.stack([p.t for p in candidates])
    counts = positive_depth_counts(R, t, q1[None], q2[None])
    best = int(np.argmax(counts))  # argmax keeps the lowest index on ties
    if 2 * counts[best] <= len(sample):
        return None
    return candidates[best]


def cheirality_select_batch(E, q1, q2):
    """Vectorized :func:`cheirality_select` over stacked essential matrices.

    ``E (..., 3, 3)``; ``q1, q2 (..., n, 3)`` broadcast against ``E``'s
    leading dims. Returns ``R (..., 3, 3)``, ``t (..., 3)`` and ``ok (...)``
    (strict majority of points in front of both cameras).
    """
    R, T, _ = decompose_essential(E)
    counts = positive_depth_counts(R, T, q1[..., None, :, :], q2[..., None, :, :])
    best = np.argmax(counts, axis=-1)
    n = q1.shape[-2]
    ok = 2 * np.take_along_axis(counts, best[..., None], axis=-1)[..., 0] > n
    Rb = np.take_along_axis(R, best[..., None, None, None], axis=-3)[..., 0, :, :]
    tb = np.take_along_axis(T, best[..., None, None], axis=-2)[..., 0, :]
    return Rb, tb, ok


def pose_error(estimated: Pose, ground_truth: Pose):
    """``(rot_deg, trans_deg)``; translation error ignores the sign of t."""
    rot = np.degrees(float(rotation_angle(estimated.R @ ground_truth.R.T)))
    return rot, _translation_angle_deg(estimated.t, ground_truth.t)


def _translation_angle_deg(ta, tb):
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    na = np.linalg.norm(ta, axis=-1)
    nb = np.linalg.norm(tb, axis=-1)
    cos = np.abs(np.sum(ta * tb, axis=-1)) / (na * nb)
    sin = np.linalg.norm(np.cross(ta, tb), axis=-1) / (na * nb)
    out = np.degrees(np.arctan2(sin, cos))
    return float(out) if np.ndim(out) == 0 else out


def pose_error_batch(R, t, R_gt, t_gt):
    """Max of rotation and translation error (degrees), stacked over leading dims."""
    rot = np.degrees(rotation_angle(R @ np.swapaxes(R_gt, -1, -2)))
    return np.maximum(rot, _translation_angle_deg(t, t_gt))
