import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nefsac.errors import DegenerateModel, NearParallelRays
from nefsac.geometry import (
    CameraIntrinsics,
    Pose,
    cheirality_select,
    decompose_essential,
    essential_from_pose,
    essential_to_fundamental,
    fundamental_to_essential,
    pose_error,
    pose_from_essential,
    project_to_essential,
    rotation_angle,
    rotation_axis,
    rotation_from_axis_angle,
    sampson_error,
    sampson_error_batch,
    triangulate_depths,
)

from conftest import make_scene, random_fundamental, random_pose
from oracles import displace_perpendicular, point_line_distance, reprojection_distance, sampson_direct

seeds = st.integers(0, 2**32 - 1)


class TestPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), [1, 0, 0])
        with pytest.raises(ValueError):
            Pose(2 * np.eye(3), [1, 0, 0])

    def test_rejects_zero_or_nan_translation(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3), [0, 0, 0])
        with pytest.raises(ValueError):
            Pose(np.eye(3), [np.nan, 0, 1])

    def test_translation_is_normalized_and_frozen(self):
        p = Pose(np.eye(3), [0, 0, 5])
        assert np.allclose(p.t, [0, 0, 1])
        with pytest.raises(ValueError):
            p.t[0] = 1.0

    def test_intrinsics_need_positive_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 700.0, 512, 384)


class TestRotations:
    @given(seeds)
    def test_axis_angle_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(1e-3, np.pi - 1e-3)
        R = rotation_from_axis_angle(axis, angle)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert float(rotation_angle(R)) == pytest.approx(angle, abs=1e-10)
        assert np.allclose(rotation_axis(R), axis, atol=1e-8)

    def test_angle_accurate_near_zero_and_pi(self):
        assert float(rotation_angle(rotation_from_axis_angle([0, 1, 0], 1e-9))) == pytest.approx(1e-9, rel=1e-6)
        R = rotation_from_axis_angle([1, 2, 3], np.pi)
        assert float(rotation_angle(R)) == pytest.approx(np.pi, abs=1e-12)
        a = rotation_axis(R)
        assert abs(abs(a @ np.array([1, 2, 3]) / np.sqrt(14)) - 1) < 1e-10
        assert rotation_axis(np.eye(3)) is None


class TestEpipolar:
    def test_scene_points_satisfy_constraint(self):
        s = make_scene(3, motion="general", noise_sigma=0.0, outlier_ratio=0.0)
        assert sampson_error(s.F, s.correspondences).max() < 1e-8

    def test_fundamental_normalization(self):
        rng = np.random.default_rng(0)
        F = random_fundamental(rng)
        assert np.linalg.norm(F) == pytest.approx(1.0)
        assert F.flat[np.argmax(np.abs(F))] > 0
        assert np.linalg.svd(F, compute_uv=False)[2] < 1e-12

    def test_fundamental_essential_roundtrip(self, K):
        rng = np.random.default_rng(2)
        E = essential_from_pose(random_pose(rng))
        F = essential_to_fundamental(E, K, K)
        E2 = fundamental_to_essential(F, K, K)
        assert min(np.abs(E2 - E / np.linalg.norm(E)).max(), np.abs(E2 + E / np.linalg.norm(E)).max()) < 1e-10

    def test_projection_equalizes_singular_values(self):
        rng = np.random.default_rng(5)
        s = np.linalg.svd(project_to_essential(rng.normal(size=(3, 3))), compute_uv=False)
        assert s[0] == pytest.approx(s[1]) and s[2] < 1e-12


class TestSampson:
    @given(seeds)
    def test_matches_direct_formula(self, seed):
        rng = np.random.default_rng(seed)
        F = random_fundamental(rng)
        corr = rng.uniform(0, 1000, size=(20, 4))
        got = sampson_error(F, corr)
        want = np.array([sampson_direct(F, c) for c in corr])
        assert np.allclose(got, want, rtol=1e-10, atol=1e-12)
        assert np.allclose(sampson_error_batch(F, corr), got, rtol=1e-12, atol=1e-14)

    @given(seeds)
    def test_invariant_to_scale_of_F(self, seed):
        rng = np.random.default_rng(seed)
        F = random_fundamental(rng)
        c = rng.uniform(0, 1000, size=(5, 4))
        assert np.allclose(sampson_error(-3.7 * F, c), sampson_error(F, c), rtol=1e-12)

    def test_one_pixel_displacement_against_exact_distance(self):
        # Sampson approximates the smallest joint displacement of both
        # points; moving only x2 by 1 px off its line splits that
        # displacement between the two images.
        s = make_scene(4, motion="general", noise_sigma=0.0, outlier_ratio=0.0, n_points=50)
        F = s.F
        for c in s.correspondences[:20]:
            moved = displace_perpendicular(F, c, 1.0)
            assert point_line_distance(F, moved)[0] == pytest.approx(1.0, abs=1e-9)
            exact = reprojection_distance(F, moved)
            assert sampson_error(F, moved) == pytest.approx(exact, rel=0.05)
            assert sampson_error(F, moved) <= 1.0 + 1e-12

    def test_scalar_and_vector_forms(self):
        F = random_fundamental(np.random.default_rng(9))
        c = np.array([100.0, 200.0, 110.0, 190.0])
        assert isinstance(sampson_error(F, c), float)
        assert sampson_error(F, c[None]).shape == (1,)

    def test_vanishing_gradient_is_infinite(self):
        F = np.zeros((3, 3))
        F[2, 2] = 1.0
        assert sampson_error(F, np.array([1.0, 2.0, 3.0, 4.0])) == np.inf


class TestDecomposition:
    @given(seeds)
    def test_ground_truth_among_candidates(self, seed):
        rng = np.random.default_rng(seed)
        gt = random_pose(rng, max_angle=np.pi * 0.9)
        cands = pose_from_essential(essential_from_pose(gt))
        assert len(cands) == 4
        errs = [max(pose_error(c, gt)) for c in cands]
        assert min(errs) < 1e-6

    def test_degenerate_singular_values_raise(self):
        with pytest.raises(DegenerateModel):
            pose_from_essential(np.diag([1.0, 0.5, 0.0]))

    def test_batched_decomposition_shapes(self):
        E = np.stack([essential_from_pose(random_pose(np.random.default_rng(i))) for i in range(6)]).reshape(2, 3, 3, 3)
        R, t, gap = decompose_essential(E)
        assert R.shape == (2, 3, 4, 3, 3) and t.shape == (2, 3, 4, 3) and gap.shape == (2, 3)
        assert np.all(gap < 1e-10)


class TestCheirality:
    def test_selects_ground_truth(self, K):
        for seed in range(20):
            s = make_scene(seed, motion="general", noise_sigma=0.0, outlier_ratio=0.0, n_points=20)
            chosen = cheirality_select(pose_from_essential(s.E), s.correspondences[:5], K, K)
            assert max(pose_error(chosen, s.pose)) < 1e-6

    def test_depths_positive_for_scene_points(self, K):
        s = make_scene(1, motion="driving", noise_sigma=0.0, outlier_ratio=0.0, n_points=20)
        for c in s.correspondences:
            d1, d2 = triangulate_depths(s.pose, c, K, K)
            assert d1 > 0 and d2 > 0
            assert 4.0 - 1e-6 <= d1 <= 40.0 + 1e-6

    def test_parallel_rays_raise(self, K):
        pose = Pose(np.eye(3), [1.0, 0.0, 0.0])
        with pytest.raises(NearParallelRays):
            triangulate_depths(pose, np.array([512.0, 384.0, 512.0, 384.0]), K, K)

    def test_no_majority_returns_none(self, K):
        assert cheirality_select([], np.zeros((5, 4)), K, K) is None


class TestPoseError:
    @given(seeds)
    def test_symmetric_and_sign_agnostic(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_pose(rng), random_pose(rng)
        ra, ta = pose_error(a, b)
        rb, tb = pose_error(b, a)
        assert ra == pytest.approx(rb, abs=1e-9) and ta == pytest.approx(tb, abs=1e-9)
        flipped = Pose(a.R, -a.t)
        assert pose_error(flipped, b)[1] == pytest.approx(ta, abs=1e-9)
        assert 0 <= ta <= 90 + 1e-9

    def test_known_values(self):
        a = Pose(np.eye(3), [1, 0, 0])
        b = Pose(rotation_from_axis_angle([0, 1, 0], np.radians(7)), [1, 1, 0])
        rot, trans = pose_error(b, a)
        assert rot == pytest.approx(7.0)
        assert trans == pytest.approx(45.0)
        assert pose_error(a, a) == (0.0, 0.0)

    @given(arrays(float, 3, elements=st.floats(-5, 5)).filter(lambda v: np.linalg.norm(v) > 1e-3))
    def test_translation_scale_is_ignored(self, t):
        a = Pose(np.eye(3), t)
        b = Pose(np.eye(3), 7.5 * t)
        assert pose_error(a, b)[1] < 1e-6
