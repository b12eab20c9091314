import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nefsac.geometry import CameraIntrinsics, Pose, essential_from_pose, essential_to_fundamental
from nefsac.synth import SceneConfig, generate_scene, sample_motion

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("NEFSAC_HYPOTHESIS_PROFILE", "default"))

K_DEFAULT = CameraIntrinsics(700.0, 700.0, 512.0, 384.0)
IMAGE_SIZE = (1024.0, 768.0)

# acceptance lines collected by test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def K():
    return CameraIntrinsics(700.0, 700.0, 512.0, 384.0)


def make_scene(seed=0, **kw):
    kw.setdefault("n_points", 300)
    return generate_scene(SceneConfig(**kw), np.random.default_rng(seed))


@pytest.fixture
def clean_scene():
    return make_scene(1, motion="general", noise_sigma=0.0, outlier_ratio=0.0)


def random_pose(rng, max_angle=np.pi / 6):
    axis = rng.normal(size=3)
    angle = rng.uniform(0, max_angle)
    from nefsac.geometry import rotation_from_axis_angle

    return Pose(rotation_from_axis_angle(axis, angle), rng.normal(size=3))


def random_fundamental(rng, K=None):
    K = K or CameraIntrinsics(700.0, 700.0, 512.0, 384.0)
    return essential_to_fundamental(essential_from_pose(random_pose(rng)), K, K)


def minimal_samples(rng, count, m, K=None):
    """Noise-free correspondences of ``count`` random general-motion scenes."""
    K = K or K_DEFAULT
    out = np.empty((count, m, 4))
    poses = []
    for i in range(count):
        pose = sample_motion("general", rng)
        while True:
            uv = rng.uniform((0, 0), IMAGE_SIZE, size=(m, 2))
            depth = rng.uniform(4.0, 40.0, size=m)
            X1 = K.normalize(uv) * depth[:, None]
            X2 = X1 @ pose.R.T + pose.t
            if np.all(X2[:, 2] > 0.5):
                break
        out[i, :, 0:2] = uv
        out[i, :, 2:4] = K.project(X2)
        poses.append(pose)
    return out, poses
