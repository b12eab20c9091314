"""Experiment drivers: pool precision of the filter and paired RANSAC runs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import pose_error, pose_error_batch, sampson_error_batch
from .labels import SAMPLE_SIZE, build_dataset, sampson_label, solve_poses
from .nnfilter import TrainConfig, score_batch, train
from .sampler import draw_uniform
from .synth import SceneConfig, generate_scenes

GOOD_POSE_DEG = 10.0
GOOD_SAMPSON_PX = 2.0
KEEP_RATES = (1, 2, 4, 8, 16, 32, 64, 128, 256)


def good_samples(samples, scene, problem="essential", pose_deg=GOOD_POSE_DEG, sampson_px=GOOD_SAMPSON_PX):
    """Samples that are outlier-free (< 2 px) and yield a pose within 10 degrees."""
    samples = np.asarray(samples, dtype=float)
    good = np.zeros(len(samples), dtype=bool)
    if len(samples) == 0:
        return good
    clean = np.flatnonzero(sampson_error_batch(scene.F, samples).max(axis=1) < sampson_px)
    if len(clean):
        R, t, ok = solve_poses(samples[clean], problem, scene.K1, scene.K2)
        err = np.where(ok, pose_error_batch(R, t, scene.pose.R, scene.pose.t), np.inf)
        good[clean] = err.min(axis=1) < pose_deg
    return good


def ranked_pool(scene, net, pool_size, rng, problem="essential"):
    """Draw a uniform pool and order it by descending network score (stable)."""
    m = SAMPLE_SIZE[problem]
    idx = draw_uniform(len(scene.correspondences), m, rng, pool_size)
    pool = scene.correspondences[idx]
    if net is None:
        return pool
    scores = score_batch(net, pool)
    return pool[np.argsort(-scores, kind="stable")]


def filter_precision(scenes, net, pool_size=2**16, keep_rates=KEEP_RATES, seed=0, problem="essential", seeds=None):
    """Rows ``(scene, keep_rate, kept, good, precision)`` per scene and keep rate.

    Scene ``i`` draws its pool from a stream seeded by ``(seed, i)`` unless
    explicit ``seeds`` are given.
    """
    rows = []
    for i, scene in enumerate(scenes):
        ss = seeds[i] if seeds is not None else np.random.SeedSequence([int(seed), i])
        rng = np.random.default_rng(ss)
        pool = ranked_pool(scene, net, pool_size, rng, problem)
        good = good_samples(pool, scene, problem)
        for r in keep_rates:
            kept = max(pool_size // r, 1)
            g = int(good[:kept].sum())
            rows.append(dict(scene=i, keep_rate=r, kept=kept, good=g, precision=g / kept))
    return rows


def pooled_precision(rows, keep_rate):
    """Total good over total kept across scenes at one keep rate."""
    sel = [r for r in rows if r["keep_rate"] == keep_rate]
    kept = sum(r["kept"] for r in sel)
    return sum(r["good"] for r in sel) / kept if kept else float("nan")


@dataclass
class BenchRow:
    scene: int
    mode: str
    ok: bool
    rot_deg: float = float("nan")
    trans_deg: float = float("nan")
    models_tested: int = 0
    samples_scored: int = 0
    inliers: int = 0
    wall_ms: float = float("nan")
    error: str = ""

    @property
    def max_err(self):
        return max(self.rot_deg, self.trans_deg)


def run_estimate(scene, config, net=None, oracle=False, index=0, mode=None):
    """One RANSAC run on ``scene``; failures are captured in the row."""
    from .ransac import estimate  # local import keeps module load light

    quality = scene.inlier.astype(float) if oracle else scene.quality
    mode = mode or ("on" if net is not None else "off")
    t0 = time.perf_counter()
    try:
        res = estimate(scene.correspondences, quality, scene.K1, scene.K2, config, net)
    except Exception as exc:  # noqa: BLE001 - recorded per pair
        return BenchRow(index, mode, False, error=f"{type(exc).__name__}: {exc}")
    wall = 1000.0 * (time.perf_counter() - t0)
    rot, trans = pose_error(res.pose, scene.pose)
    return BenchRow(index, mode, True, rot, trans, res.models_tested, res.samples_scored, len(res.inliers), wall)


def run_pairs(scenes, config, net=None, oracle=False, modes=("off", "on"), seed_offset=0):
    """Paired runs per scene; run ``i`` uses seed ``seed_offset + i`` in both modes."""
    from dataclasses import replace

    out = {m: [] for m in modes}
    for i, scene in enumerate(scenes):
        for m in modes:
            cfg = replace(config, filter=m, seed=seed_offset + i)
            out[m].append(run_estimate(scene, cfg, net if m == "on" else None, oracle, i, m))
    return out


# ---------------------------------------------------------------------------
# the driving prior used by the experiments


@dataclass
class PriorSetup:
    """Training scenes and schedule for the driving-motion filter network."""

    scenes: int = 500
    seed: int = 1000
    outlier_ratio: float = 0.5
    planar_fraction: float = 0.1
    samples_per_pair: int = 1000
    near_duplicate_fraction: float = 0.1
    expert: str = "driving"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(seed=1000))

    def scene_config(self) -> SceneConfig:
        return SceneConfig(outlier_ratio=self.outlier_ratio, motion="driving", planar_fraction=self.planar_fraction)


def train_prior(setup: PriorSetup | None = None):
    """Generate, label and train; returns ``(net, history, seconds)``."""
    setup = setup or PriorSetup()
    t0 = time.perf_counter()
    scenes = generate_scenes(setup.scene_config(), setup.scenes, seed=setup.seed)
    ds = build_dataset(scenes, setup.samples_per_pair, setup.expert, setup.seed,
                       near_duplicate_fraction=setup.near_duplicate_fraction)
    net, history = train(ds, setup.train)
    return net, history, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# ill-conditioned samples


def min_pair_distance(samples):
    """Smallest distance between two correspondences of each sample (worse of the two images)."""
    X = np.asarray(samples, dtype=float)
    d1 = np.linalg.norm(X[:, :, None, 0:2] - X[:, None, :, 0:2], axis=-1)
    d2 = np.linalg.norm(X[:, :, None, 2:4] - X[:, None, :, 2:4], axis=-1)
    d = np.maximum(d1, d2)
    m = X.shape[1]
    d[:, np.arange(m), np.arange(m)] = np.inf
    return d.min(axis=(1, 2))


def inlier_samples(scene, count, rng, m=5):
    """Uniform samples drawn from the scene's true inliers."""
    inl = np.flatnonzero(scene.inlier)
    return scene.correspondences[inl[draw_uniform(len(inl), m, rng, count)]]


def with_close_neighbour(scene, samples, rng, radius=1.0, noise=0.3):
    """Replace each sample's last correspondence by a new scene point next to its first.

    The new point sits at the first point's depth, shifted by at most
    ``radius`` pixels in the first image, and is reprojected through the
    true pose, so it is a genuine inlier rather than a jittered copy.
    """
    from .geometry import triangulate_depths_normalized

    X = np.array(samples, dtype=float)
    K1, K2, pose = scene.K1, scene.K2, scene.pose
    q1 = K1.normalize(X[:, 0, 0:2])
    q2 = K2.normalize(X[:, 0, 2:4])
    d1, _, _ = triangulate_depths_normalized(pose.R, pose.t, q1, q2)
    ang = rng.uniform(0, 2 * np.pi, len(X))
    r = radius * np.sqrt(rng.uniform(0, 1, len(X)))
    uv = X[:, 0, 0:2] + np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    P = K1.normalize(uv) * d1[:, None]
    uv2 = K2.project(P @ pose.R.T + pose.t)
    X[:, -1, 0:2] = uv + rng.normal(0, noise, uv.shape)
    X[:, -1, 2:4] = uv2 + rng.normal(0, noise, uv2.shape)
    return X


def conditioning_groups(scenes, net, per_scene, rng, near_px=2.0, spread_px=50.0):
    """Scores of all-inlier samples with a close pair vs. well-spread ones.

    Both groups keep only samples whose Sampson label under the true model
    is 1. Returns ``(close_scores, spread_scores)``.
    """
    close, spread = [], []
    for scene in scenes:
        base = inlier_samples(scene, per_scene, rng)
        near = with_close_neighbour(scene, base, rng)
        for X, sink, keep in ((near, close, lambda d: d < near_px), (base, spread, lambda d: d > spread_px)):
            ok = (np.atleast_1d(sampson_label(X, scene.F)) == 1.0) & keep(min_pair_distance(X))
            sink.append(X[ok])
    close, spread = np.concatenate(close), np.concatenate(spread)
    return score_batch(net, close), score_batch(net, spread)
