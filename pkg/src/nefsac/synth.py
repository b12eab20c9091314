"""Synthetic two-view scenes with motion priors, noise and outliers.

Camera frame: x right, y down, z forward, so "vertical" is the y axis.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, GenerationFailed
from .geometry import (
    CameraIntrinsics,
    Pose,
    essential_from_pose,
    essential_to_fundamental,
    rotation_from_axis_angle,
    sampson_error,
)

MOTIONS = ("general", "driving", "collection")
OUTLIER_MIN_LINE_DIST = 10.0
OUTLIER_MIN_SAMPSON = 5.0
HEADER = "NEFSCENE v1"
PLANE_ATTEMPTS = 20


@dataclass
class SceneConfig:
    n_points: int = 1000
    depth_min: float = 4.0
    depth_max: float = 40.0
    width: float = 1024.0
    height: float = 768.0
    fx: float = 700.0
    fy: float = 700.0
    cx: float = 512.0
    cy: float = 384.0
    baseline: float = 1.0
    noise_sigma: float = 0.5
    outlier_ratio: float = 0.5
    motion: str = "driving"
    planar_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8:
            raise ConfigError("n_points", "must be an integer >= 8")
        if not 0 < self.depth_min < self.depth_max:
            raise ConfigError("depth_min", "need 0 < depth_min < depth_max")
        for name in ("width", "height", "fx", "fy", "baseline"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma", "must be nonnegative")
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise ConfigError("outlier_ratio", f"must lie in [0, 1), got {self.outlier_ratio}")
        if self.motion not in MOTIONS:
            raise ConfigError("motion", f"must be one of {MOTIONS}")
        if not 0.0 <= self.planar_fraction <= 1.0:
            raise ConfigError("planar_fraction", "must lie in [0, 1]")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)

    @property
    def image_size(self):
        return (self.width, self.height)


@dataclass(eq=False)
class SyntheticScene:
    correspondences: np.ndarray  # (n, 4) pixels
    quality: np.ndarray
    inlier: np.ndarray  # bool
    pose: Pose
    E: np.ndarray
    F: np.ndarray
    K1: CameraIntrinsics
    K2: CameraIntrinsics
    config: SceneConfig
    planar: bool = False

    @property
    def image_size(self):
        return self.config.image_size

    def __len__(self):
        return len(self.correspondences)


def _unit(v):
    return v / np.linalg.norm(v)


def _direction(azimuth, elevation):
    """Unit vector from azimuth about the vertical axis (0 = forward) and elevation (up > 0)."""
    ce = np.cos(elevation)
    return np.array([np.sin(azimuth) * ce, -np.sin(elevation), np.cos(azimuth) * ce])


def _tilted(axis, max_tilt, rng):
    """Random unit vector within ``max_tilt`` radians of ``axis``."""
    axis = _unit(np.asarray(axis, dtype=float))
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = _unit(np.cross(axis, helper))
    v = np.cross(axis, u)
    phi = rng.uniform(0, 2 * np.pi)
    tilt = rng.uniform(0, max_tilt)
    return np.cos(tilt) * axis + np.sin(tilt) * (np.cos(phi) * u + np.sin(phi) * v)


def sample_motion(kind: str, rng: np.random.Generator) -> Pose:
    """Relative pose ``X2 = R X1 + t`` drawn from a motion prior."""
    deg = np.radians
    if kind == "driving":
        yaw = rng.uniform(-deg(10), deg(10))
        R = rotation_from_axis_angle([0, 1, 0], yaw)
        # small pitch/roll disturbance about a horizontal axis
        h = rng.uniform(0, 2 * np.pi)
        R = rotation_from_axis_angle([np.cos(h), 0, np.sin(h)], rng.uniform(0, deg(1))) @ R
        c = _direction(rng.uniform(-deg(15), deg(15)), rng.uniform(-deg(2), deg(2)))
    elif kind == "collection":
        if rng.random() < 0.5:
            axis = _tilted([0, 1, 0], deg(5), rng)
        else:
            h = rng.uniform(0, 2 * np.pi)
            axis = _tilted([np.cos(h), 0, np.sin(h)], deg(5), rng)
        R = rotation_from_axis_angle(axis, rng.uniform(0, deg(30)))
        c = _direction(rng.uniform(-np.pi, np.pi), rng.uniform(-deg(20), deg(20)))
    elif kind == "general":
        R = rotation_from_axis_angle(_unit(rng.normal(size=3)), rng.uniform(0, deg(30)))
        c = _unit(rng.normal(size=3))
    else:
        raise ValueError(f"unknown motion kind {kind!r}")
    return Pose(R, -R @ c)


def _points(cfg: SceneConfig, K: CameraIntrinsics, count, planar, rng):
    uv = rng.uniform([0, 0], [cfg.width, cfg.height], size=(count, 2))
    rays = K.normalize(uv)
    if planar:
        normal = _tilted([0, 0, 1], np.radians(60), rng)
        d0 = rng.uniform(cfg.depth_min, cfg.depth_max)
        anchor = K.normalize(rng.uniform([0, 0], [cfg.width, cfg.height]))
        depth = (normal @ (d0 * anchor)) / (rays @ normal)
    else:
        depth = rng.uniform(cfg.depth_min, cfg.depth_max, size=count)
    return rays * depth[:, None], depth


def _line_distance(F, x1, x2):
    l = np.c_[x1, np.ones(len(x1))] @ F.T
    return np.abs(np.sum(l[:, :2] * x2, axis=1) + l[:, 2]) / np.hypot(l[:, 0], l[:, 1])


def generate_scene(config: SceneConfig, rng: np.random.Generator | None = None) -> SyntheticScene:
    cfg = config
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    K = cfg.intrinsics
    pose = sample_motion(cfg.motion, rng)
    planar = bool(rng.random() < cfg.planar_fraction)
    n = cfg.n_points
    W, H = cfg.width, cfg.height
    # a random plane can sit mostly outside the depth range or graze the
    # view, so the point set (and plane) is redrawn a few times
    for _ in range(PLANE_ATTEMPTS if planar else 1):
        X1, depth = _points(cfg, K, 10 * n, planar, rng)
        X2 = X1 @ pose.R.T + cfg.baseline * pose.t
        with np.errstate(divide="ignore", invalid="ignore"):
            p1 = K.project(X1)
            p2 = K.project(X2)
        ok = (
            (depth >= cfg.depth_min)
            & (depth <= cfg.depth_max)
            & (X2[:, 2] > 1e-3)
            & np.all(np.isfinite(p2), axis=1)
            & (p2[:, 0] >= 0) & (p2[:, 0] <= W) & (p2[:, 1] >= 0) & (p2[:, 1] <= H)
        )
        keep = np.flatnonzero(ok)
        if len(keep) >= n:
            break
    if len(keep) < n:
        raise GenerationFailed(f"only {len(keep)} of {n} points visible after 10x oversampling")
    keep = keep[:n]
    corr = np.c_[p1[keep], p2[keep]]
    if cfg.noise_sigma > 0:
        corr = corr + rng.normal(0.0, cfg.noise_sigma, size=corr.shape)
        corr = np.clip(corr, 0.0, [W, H, W, H])

    E = essential_from_pose(pose)
    F = essential_to_fundamental(E, K, K)
    inlier = np.ones(n, dtype=bool)
    n_out = int(round(cfg.outlier_ratio * n))
    out_idx = np.sort(rng.choice(n, size=n_out, replace=False))
    inlier[out_idx] = False
    clean = corr.copy()
    tried = ~inlier
    todo = out_idx
    for attempt in range(1000):
        if len(todo) == 0:
            break
        if attempt % 50 == 49:
            # near the epipole no second-image point reaches the Sampson
            # margin, so hand the outlier role to an untried correspondence
            spare = np.flatnonzero(~tried)
            if len(spare) < len(todo):
                break
            corr[todo] = clean[todo]
            inlier[todo] = True
            todo = np.sort(rng.choice(spare, size=len(todo), replace=False))
            inlier[todo] = False
            tried[todo] = True
        corr[todo, 2:] = rng.uniform([0, 0], [W, H], size=(len(todo), 2))
        far = (_line_distance(F, corr[todo, :2], corr[todo, 2:]) >= OUTLIER_MIN_LINE_DIST) & (
            sampson_error(F, corr[todo]) > OUTLIER_MIN_SAMPSON
        )
        todo = todo[~far]
    if len(todo):
        raise GenerationFailed("could not place outliers away from their epipolar lines")

    quality = np.where(inlier, rng.beta(5, 2, size=n), rng.beta(2, 5, size=n))
    return SyntheticScene(corr, quality, inlier, pose, E, F, K, K, cfg, planar)


def scene_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index)])


def generate_scenes(config: SceneConfig, count: int, seed: int | None = None):
    """``count`` scenes with independent streams derived from ``(seed, index)``."""
    seed = config.seed if seed is None else seed
    return [generate_scene(config, np.random.default_rng(scene_seed(seed, i))) for i in range(count)]


# ---------------------------------------------------------------------------
# text format


def _fmt(values):
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_scene(scene: SyntheticScene, path) -> None:
    cfg = dataclasses.asdict(scene.config)
    lines = [HEADER, "config " + " ".join(f"{k}={v}" for k, v in cfg.items()), f"planar {int(scene.planar)}"]
    lines += [
        "gt F " + _fmt(scene.F),
        "gt R " + _fmt(scene.pose.R),
        "gt t " + _fmt(scene.pose.t),
        "gt K1 " + _fmt(scene.K1.as_tuple()),
        "gt K2 " + _fmt(scene.K2.as_tuple()),
        f"points {len(scene)}",
    ]
    for c, q, f in zip(scene.correspondences, scene.quality, scene.inlier):
        lines.append(f"{_fmt(c)} {float(q)!r} {int(f)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_config(text):
    fields = {f.name: f.type for f in dataclasses.fields(SceneConfig)}
    kw = {}
    for item in text.split():
        key, _, value = item.partition("=")
        if key not in fields:
            raise FormatError(f"unknown config key {key!r}")
        if key == "motion":
            kw[key] = value
        elif key in ("n_points", "seed"):
            kw[key] = int(value)
        else:
            kw[key] = float(value)
    return SceneConfig(**kw)


def load_scene(path) -> SyntheticScene:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise FormatError(f"{path}: missing {HEADER!r} header")
    gt, cfg, planar, i = {}, None, False, 1
    try:
        while i < len(lines) and not lines[i].startswith("points"):
            tag, _, rest = lines[i].partition(" ")
            if tag == "config":
                cfg = _parse_config(rest)
            elif tag == "planar":
                planar = bool(int(rest))
            elif tag == "gt":
                name, _, vals = rest.partition(" ")
                gt[name] = np.array([float(v) for v in vals.split()])
            else:
                raise FormatError(f"{path}: unexpected line {lines[i]!r}")
            i += 1
        sizes = {"F": 9, "R": 9, "t": 3, "K1": 4, "K2": 4}
        for name, size in sizes.items():
            if name not in gt or gt[name].size != size:
                raise FormatError(f"{path}: missing or malformed gt block {name!r}")
        if cfg is None:
            raise FormatError(f"{path}: missing config line")
        if i >= len(lines):
            raise FormatError(f"{path}: missing points section")
        n = int(lines[i].split()[1])
        rows = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1 : i + 1 + n]]).reshape(-1, 6)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(rows) != n:
        raise FormatError(f"{path}: expected {n} points, found {len(rows)}")
    try:
        pose = Pose(gt["R"].reshape(3, 3), gt["t"])
        K1 = CameraIntrinsics(*gt["K1"])
        K2 = CameraIntrinsics(*gt["K2"])
    except ValueError as exc:
        raise FormatError(f"{path}: invalid ground truth: {exc}") from exc
    return SyntheticScene(
        correspondences=rows[:, :4].copy(),
        quality=rows[:, 4].copy(),
        inlier=rows[:, 5].astype(bool),
        pose=pose,
        E=essential_from_pose(pose),
        F=gt["F"].reshape(3, 3),
        K1=K1,
        K2=K2,
        config=cfg,
        planar=planar,
    )
