"""Training labels for minimal samples and the labeled-dataset container."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NotEnoughData
from .geometry import (
    cheirality_select_batch,
    pose_error_batch,
    rotation_angle,
    sampson_error_batch,
)
from .sampler import draw_uniform
from .solvers import solve_minimal_batch

EXPERTS = ("none", "driving", "collection")
SAMPLE_SIZE = {"essential": 5, "fundamental": 7}


@dataclass(frozen=True)
class LabelThresholds:
    sampson_min: float = 2.0
    sampson_max: float = 5.0
    pose_min: float = 5.0
    pose_max: float = 30.0

    def __post_init__(self):
        if not (0 < self.sampson_min < self.sampson_max and 0 < self.pose_min < self.pose_max):
            raise ValueError("thresholds need 0 < min < max")


DEFAULT_THRESHOLDS = LabelThresholds()


def interpolate_label(error, e_min, e_max):
    """1 at or below ``e_min``, 0 at or above ``e_max``, linear in between.

    NaN errors map to 0, like a failed solve.
    """
    e = np.asarray(error, dtype=float)
    out = np.clip((e_max - e) / (e_max - e_min), 0.0, 1.0)
    out = np.where(np.isnan(e), 0.0, out)
    return float(out) if out.ndim == 0 else out


def sampson_label(sample, gt_F, thresholds: LabelThresholds = DEFAULT_THRESHOLDS):
    """Label from the largest Sampson error of the sample's correspondences."""
    err = sampson_error_batch(np.asarray(gt_F, dtype=float), np.asarray(sample, dtype=float)).max(axis=-1)
    return interpolate_label(err, thresholds.sampson_min, thresholds.sampson_max)


def solve_poses(samples, problem, K1, K2):
    """Solve stacked samples and pick each candidate's pose by cheirality.

    Returns ``R (B, S, 3, 3)``, ``t (B, S, 3)`` and ``ok (B, S)``.
    """
    samples = np.asarray(samples, dtype=float)
    models, valid = solve_minimal_batch(samples, problem, K1, K2)
    if problem == "fundamental":
        models = K2.K.T @ models @ K1.K
    q1 = K1.normalize(samples[..., 0:2])[:, None]
    q2 = K2.normalize(samples[..., 2:4])[:, None]
    R, t, ok = cheirality_select_batch(models, q1, q2)
    return R, t, ok & valid


def pose_labels_batch(samples, gt_pose, problem, K1, K2, thresholds=DEFAULT_THRESHOLDS, expert="none"):
    """Pose labels (best candidate) and optional expert labels for stacked samples."""
    R, t, ok = solve_poses(samples, problem, K1, K2)
    err = np.where(ok, pose_error_batch(R, t, gt_pose.R, gt_pose.t), np.inf)
    l2 = interpolate_label(err.min(axis=1), thresholds.pose_min, thresholds.pose_max)
    if expert == "none":
        return np.atleast_1d(l2), None
    fn = expert_label_driving if expert == "driving" else expert_label_collection
    le = np.where(ok, fn((R, t), thresholds), 0.0).max(axis=1)
    return np.atleast_1d(l2), le


def pose_label(sample, gt_pose, problem, K1, K2, thresholds=DEFAULT_THRESHOLDS) -> float:
    """Pose label of one sample; a failed solve labels as 0."""
    l2, _ = pose_labels_batch(np.asarray(sample, dtype=float)[None], gt_pose, problem, K1, K2, thresholds)
    return float(l2[0])


def _as_rt(pose):
    if isinstance(pose, tuple):
        return np.asarray(pose[0], dtype=float), np.asarray(pose[1], dtype=float)
    return pose.R, pose.t


def expert_label_driving(pose, thresholds=DEFAULT_THRESHOLDS):
    """Conformity with planar driving motion: yaw-only rotation, level translation.

    The deviation is the larger of the tilt of the vertical axis under ``R``
    (rotation left after removing yaw) and the translation elevation.
    Accepts a :class:`Pose` or a stacked ``(R, t)`` tuple.
    """
    R, t = _as_rt(pose)
    swing = np.degrees(np.arccos(np.clip(R[..., 1, 1], -1.0, 1.0)))
    ty = np.abs(t[..., 1]) / np.linalg.norm(t, axis=-1)
    elevation = np.degrees(np.arcsin(np.clip(ty, 0.0, 1.0)))
    return interpolate_label(np.maximum(swing, elevation), thresholds.pose_min, thresholds.pose_max)


def expert_label_collection(pose, thresholds=DEFAULT_THRESHOLDS):
    """Conformity with rotation about a near-vertical or near-horizontal axis."""
    R, _ = _as_rt(pose)
    angle = rotation_angle(R)
    axis = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    # near pi the skew part vanishes; recover the axis from the symmetric part
    S = 0.5 * (R + np.eye(3))
    diag = np.argmax(np.diagonal(S, axis1=-2, axis2=-1), axis=-1)
    sym_axis = np.take_along_axis(S, diag[..., None, None], axis=-2)[..., 0, :]
    axis = np.where((angle > np.pi - 1e-6)[..., None], sym_axis, axis)
    norm = np.linalg.norm(axis, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ay = np.clip(np.abs(axis[..., 1]) / norm, 0.0, 1.0)
    from_vertical = np.degrees(np.arccos(ay))
    dev = np.minimum(from_vertical, 90.0 - from_vertical)
    out = np.where(angle < 1e-9, 1.0, interpolate_label(dev, thresholds.pose_min, thresholds.pose_max))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class LabeledSample:
    sample: np.ndarray
    l1: float
    l2: float
    l2_valid: bool
    l_expert: float | None = None


@dataclass
class LabeledDataset:
    samples: np.ndarray  # (S, m, 4)
    l1: np.ndarray
    l2: np.ndarray
    l2_valid: np.ndarray
    l_expert: np.ndarray | None
    expert: str
    seed: int
    image_size: tuple

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> LabeledSample:
        le = None if self.l_expert is None else float(self.l_expert[i])
        return LabeledSample(self.samples[i], float(self.l1[i]), float(self.l2[i]), bool(self.l2_valid[i]), le)

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def targets(self) -> np.ndarray:
        """Branch targets with NaN where a term is excluded from the loss."""
        cols = [self.l1, np.where(self.l2_valid, self.l2, np.nan)]
        if self.l_expert is not None:
            cols.append(self.l_expert)
        return np.column_stack(cols)

    @property
    def aggregate_targets(self) -> np.ndarray:
        return self.l1 * self.l2


def _near_duplicates(X, rows, rng):
    """Replace the last correspondence of ``rows`` by a copy of the first, jittered < 2 px."""
    jitter = np.clip(rng.normal(0.0, 0.5, size=(len(rows), 4)), -1.4, 1.4)
    X[rows, -1] = X[rows, 0] + jitter


def label_scene(scene, count, problem="essential", expert="none", rng=None, thresholds=DEFAULT_THRESHOLDS,
                near_duplicate_fraction=0.0, chunk=4096):
    """Draw ``count`` uniform samples from one scene and label them.

    With ``near_duplicate_fraction > 0`` that share of samples gets a
    near-copy of one of its own correspondences, exposing the network to
    ill-conditioned samples.
    """
    m = SAMPLE_SIZE[problem]
    n = len(scene.correspondences)
    if n < m:
        raise NotEnoughData(f"scene has {n} correspondences, need {m}")
    idx = draw_uniform(n, m, rng, count)
    X = scene.correspondences[idx]
    if near_duplicate_fraction > 0:
        _near_duplicates(X, np.flatnonzero(rng.random(count) < near_duplicate_fraction), rng)
    l1 = sampson_label(X, scene.F, thresholds)
    l2 = np.empty(count)
    le = np.empty(count) if expert != "none" else None
    for s in range(0, count, chunk):
        a, b = pose_labels_batch(X[s : s + chunk], scene.pose, problem, scene.K1, scene.K2, thresholds, expert)
        l2[s : s + chunk] = a
        if le is not None:
            le[s : s + chunk] = b
    return X, np.atleast_1d(l1), l2, le


def build_dataset(scenes, samples_per_pair, expert="none", seed=0, problem="essential",
                  thresholds=DEFAULT_THRESHOLDS, near_duplicate_fraction=0.0) -> LabeledDataset:
    """Label ``samples_per_pair`` uniform samples per scene.

    Scene ``i`` draws from its own stream seeded by ``(seed, i)``, so the
    result does not depend on processing order.
    """
    if expert not in EXPERTS:
        raise ValueError(f"expert must be one of {EXPERTS}")
    m = SAMPLE_SIZE[problem]
    parts = []
    for i, scene in enumerate(scenes):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        parts.append(label_scene(scene, samples_per_pair, problem, expert, rng, thresholds, near_duplicate_fraction))
    if not parts:
        X = np.zeros((0, m, 4))
        l1 = l2 = np.zeros(0)
        le = np.zeros(0) if expert != "none" else None
        size = (1.0, 1.0)
    else:
        X = np.concatenate([p[0] for p in parts])
        l1 = np.concatenate([p[1] for p in parts])
        l2 = np.concatenate([p[2] for p in parts])
        le = np.concatenate([p[3] for p in parts]) if expert != "none" else None
        size = tuple(float(v) for v in scenes[0].image_size)
    return LabeledDataset(X, l1, l2, l1 == 1.0, le, expert, int(seed), size)


def save_dataset(ds: LabeledDataset, path) -> None:
    head = f"# nefsac-dataset m={ds.m} expert={ds.expert} seed={ds.seed} width={ds.image_size[0]!r} height={ds.image_size[1]!r}"
    lines = [head]
    for i in range(len(ds)):
        vals = [repr(float(v)) for v in ds.samples[i].ravel()]
        vals += [repr(float(ds.l1[i])), repr(float(ds.l2[i])), str(int(ds.l2_valid[i]))]
        if ds.l_expert is not None:
            vals.append(repr(float(ds.l_expert[i])))
        lines.append(",".join(vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> LabeledDataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# nefsac-dataset"):
        raise FormatError(f"{path}: missing dataset header")
    try:
        meta = dict(item.split("=", 1) for item in lines[0].split()[2:])
        m, expert, seed = int(meta["m"]), meta["expert"], int(meta["seed"])
        size = (float(meta["width"]), float(meta["height"]))
        width = 4 * m + 3 + (expert != "none")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, width)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if expert not in EXPERTS:
        raise FormatError(f"{path}: unknown expert mode {expert!r}")
    le = rows[:, 4 * m + 3].copy() if expert != "none" else None
    return LabeledDataset(
        rows[:, : 4 * m].reshape(-1, m, 4), rows[:, 4 * m].copy(), rows[:, 4 * m + 1].copy(),
        rows[:, 4 * m + 2] == 1.0, le, expert, seed, size,
    )
