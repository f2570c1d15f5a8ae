"""Tests for analytic shapes, synthetic clouds/sweeps, and pose perturbation.

The rigid-motion oracle is scipy: `expm` of the 4x4 twist matrix checks the
closed-form exponential, `Rotation` checks axis-angle content.  Sweep
round-trips are checked bitwise against an independently built slice lattice.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from conftest import make_cube  # noqa: F401  (shared fixtures live in conftest)
from pullmesh.errors import EmptyCloudError, InputError
from pullmesh.geometry import FRAME_WORLD, PointCloud, build_cloud_from_sweep
from pullmesh.synth import (
    Se3Noise,
    inject_outliers,
    perturb_poses,
    se3_exp,
    sphere,
    sweep_calibration,
    synth_cloud,
    synth_sweep,
    torus,
    two_spheres,
)

ALL_SHAPES = [sphere(), torus(), two_spheres()]


def twist_matrix(n_r, n_t):
    """4x4 se(3) element; expm of this is the independent exponential oracle."""
    xi = np.zeros((4, 4))
    xi[:3, :3] = np.array(
        [
            [0.0, -n_r[2], n_r[1]],
            [n_r[2], 0.0, -n_r[0]],
            [-n_r[1], n_r[0], 0.0],
        ]
    )
    xi[:3, 3] = n_t
    return xi


def fd_gradient(shape, points, h=1e-6):
    grad = np.empty((len(points), 3))
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        grad[:, axis] = (shape.sdf(points + step) - shape.sdf(points - step)) / (2 * h)
    return grad


class TestShapes:
    def test_sphere_sdf_hand_values(self):
        s = sphere()
        vals = s.sdf([[0, 0, 0], [1, 0, 0], [0, 0.5, 0], [0, 0, -0.25]])
        assert vals == pytest.approx([-0.5, 0.5, 0.0, -0.25], abs=1e-15)

    def test_torus_sdf_hand_values(self):
        t = torus()
        # axis point: ring - tube away; tube center-line: -tube; outer equator: 0
        vals = t.sdf([[0, 0, 0], [0.5, 0, 0], [0, 0.65, 0], [0.5, 0, 0.15]])
        assert vals == pytest.approx([0.35, -0.15, 0.0, 0.0], abs=1e-15)

    def test_two_spheres_sdf_is_min_of_lobes(self):
        w = two_spheres()
        vals = w.sdf([[0.55, 0, 0], [-0.55, 0, 0], [0, 0, 0]])
        assert vals == pytest.approx([-0.25, -0.25, 0.30], abs=1e-15)

    @pytest.mark.parametrize("shape", ALL_SHAPES, ids=lambda s: s.kind)
    def test_eikonal_spot_check(self, shape):
        rng = np.random.default_rng(7)
        lo, hi = shape.bounds()
        pts = rng.uniform(lo - 0.2, hi + 0.2, (200, 3))
        # keep clear of the gradient singularities (centers, torus axis)
        pts = pts[np.abs(shape.sdf(pts)) > 1e-2]
        g = fd_gradient(shape, pts)
        assert np.abs(np.linalg.norm(g, axis=1) - 1.0).max() < 1e-6

    @pytest.mark.parametrize("shape", ALL_SHAPES, ids=lambda s: s.kind)
    def test_gradient_matches_finite_differences(self, shape):
        rng = np.random.default_rng(8)
        lo, hi = shape.bounds()
        pts = rng.uniform(lo - 0.2, hi + 0.2, (200, 3))
        pts = pts[np.abs(shape.sdf(pts)) > 1e-2]
        assert np.abs(shape.sdf_gradient(pts) - fd_gradient(shape, pts)).max() < 1e-6

    def test_volume_values(self):
        assert sphere().volume() == pytest.approx(4.0 / 3.0 * math.pi * 0.125)
        assert torus().volume() == pytest.approx(2.0 * math.pi**2 * 0.5 * 0.15**2)
        assert two_spheres().volume() == pytest.approx(2 * 4.0 / 3.0 * math.pi * 0.25**3)

    def test_bounds_are_tight(self):
        lo, hi = sphere().bounds()
        np.testing.assert_array_equal(lo, [-0.5, -0.5, -0.5])
        np.testing.assert_array_equal(hi, [0.5, 0.5, 0.5])
        lo, hi = torus().bounds()
        np.testing.assert_allclose(lo, [-0.65, -0.65, -0.15])
        np.testing.assert_allclose(hi, [0.65, 0.65, 0.15])

    def test_constructor_validation(self):
        with pytest.raises(InputError):
            sphere(radius=0.0)
        with pytest.raises(InputError):
            torus(ring=0.2, tube=0.2)
        with pytest.raises(InputError):
            two_spheres(radius_a=-1.0)


class TestSynthCloud:
    def test_volumetric_points_satisfy_sdf(self):
        for shape in ALL_SHAPES:
            cloud = synth_cloud(shape, 500, mode="volumetric", seed=0)
            assert cloud.points.shape == (500, 3)
            assert cloud.frame == FRAME_WORLD
            assert np.all(shape.sdf(cloud.points) <= 0.0)

    def test_surface_points_on_zero_set(self):
        for shape in ALL_SHAPES:
            cloud = synth_cloud(shape, 500, mode="surface", seed=0)
            assert cloud.points.shape == (500, 3)
            assert np.abs(shape.sdf(cloud.points)).max() <= 1e-6

    def test_sphere_volumetric_radii(self):
        cloud = synth_cloud(sphere(), 2000, mode="volumetric", seed=1)
        assert np.linalg.norm(cloud.points, axis=1).max() <= 0.5

    def test_two_spheres_surface_covers_both_lobes(self):
        pts = synth_cloud(two_spheres(), 400, mode="surface", seed=2).points
        assert (pts[:, 0] < 0).sum() > 100
        assert (pts[:, 0] > 0).sum() > 100

    def test_torus_occupancy_matches_analytic_volume(self):
        # the rejection-sampling acceptance rate equals the volume ratio of
        # the solid to its bounding box; measure it by direct Monte Carlo
        shape = torus()
        lo, hi = shape.bounds()
        box_volume = float(np.prod(hi - lo))
        rng = np.random.default_rng(3)
        samples = rng.uniform(lo, hi, (20000, 3))
        occupancy = float(np.mean(shape.sdf(samples) <= 0.0))
        expected = shape.volume() / box_volume
        assert occupancy == pytest.approx(expected, rel=0.05)

    def test_deterministic_per_seed(self):
        a = synth_cloud(sphere(), 300, mode="volumetric", seed=5)
        b = synth_cloud(sphere(), 300, mode="volumetric", seed=5)
        c = synth_cloud(sphere(), 300, mode="volumetric", seed=6)
        np.testing.assert_array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            synth_cloud(sphere(), 0, mode="volumetric", seed=0)
        with pytest.raises(InputError):
            synth_cloud(sphere(), 10, mode="shell", seed=0)


class TestSynthSweep:
    def test_round_trip_matches_lattice_sampling(self):
        # loader output must equal direct SDF <= 0 selection on the slice
        # lattice, bit for bit, in frame-major row-major order
        for shape in (sphere(), torus()):
            px = 0.25
            masks, poses = synth_sweep(shape, 7, slice_spacing=0.25, pixel_size=px)
            cloud = build_cloud_from_sweep(masks, sweep_calibration(px), poses)
            height, width = masks[0].shape
            cols, rows = np.meshgrid(np.arange(width), np.arange(height))
            expected = []
            for pose in poses:
                x0, y0, z = pose[:3, 3]
                pts = np.stack(
                    [x0 + cols * px, y0 + rows * px, np.full_like(cols, z, dtype=float)],
                    axis=-1,
                ).reshape(-1, 3)
                expected.append(pts[shape.sdf(pts) <= 0.0])
            np.testing.assert_array_equal(cloud.points, np.vstack(expected))

    def test_central_frame_has_largest_mask(self):
        masks, _ = synth_sweep(sphere(), 7, slice_spacing=0.15, pixel_size=0.05)
        areas = [int((m > 0).sum()) for m in masks]
        assert np.argmax(areas) == 3

    def test_slices_outside_shape_are_empty(self):
        # torus only spans |z| <= 0.15; the outer frames at |z| = 0.4 miss it
        masks, _ = synth_sweep(torus(), 5, slice_spacing=0.2, pixel_size=0.05)
        assert (masks[0] > 0).sum() == 0
        assert (masks[4] > 0).sum() == 0
        assert (masks[2] > 0).sum() > 0

    def test_masks_and_poses_shapes(self):
        masks, poses = synth_sweep(sphere(), 4, slice_spacing=0.25, pixel_size=0.25)
        assert len(masks) == 4 and poses.shape == (4, 4, 4)
        for m in masks:
            assert m.dtype == np.uint8
            assert set(np.unique(m)) <= {0, 255}
        for pose in poses:
            np.testing.assert_array_equal(pose[:3, :3], np.eye(3))
            np.testing.assert_array_equal(pose[3], [0, 0, 0, 1])
        zs = poses[:, 2, 3]
        np.testing.assert_allclose(np.diff(zs), 0.25, rtol=1e-12)

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            synth_sweep(sphere(), 1, slice_spacing=0.1, pixel_size=0.1)
        with pytest.raises(InputError):
            synth_sweep(sphere(), 3, slice_spacing=0.0, pixel_size=0.1)
        with pytest.raises(InputError):
            synth_sweep(sphere(), 3, slice_spacing=0.1, pixel_size=-0.1)

    def test_calibration_matrix(self):
        cal = sweep_calibration(0.125)
        np.testing.assert_array_equal(cal, np.diag([0.125, 0.125, 1.0, 1.0]))


class TestSe3Exp:
    def test_zero_twist_is_identity(self):
        np.testing.assert_array_equal(se3_exp([0, 0, 0], [0, 0, 0]), np.eye(4))

    def test_pure_translation(self):
        out = se3_exp([0, 0, 0], [0.3, -0.2, 0.7])
        np.testing.assert_array_equal(out[:3, :3], np.eye(3))
        np.testing.assert_array_equal(out[:3, 3], [0.3, -0.2, 0.7])

    @pytest.mark.parametrize("theta", [0.3, 1.0, math.pi / 2, 3.0])
    def test_x_axis_rotation_closed_form(self, theta):
        out = se3_exp([theta, 0, 0], [0, 0, 0])
        c, s = math.cos(theta), math.sin(theta)
        hand = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
        np.testing.assert_allclose(out[:3, :3], hand, atol=1e-14)
        np.testing.assert_array_equal(out[:3, 3], [0, 0, 0])

    @pytest.mark.parametrize("theta", [1e-9, 9.9e-7, 1.1e-6, 1e-4])
    def test_series_agrees_across_switch(self, theta):
        # the series and trig branches must agree through the 1e-6 cutover
        n_r = np.array([0.6, -0.48, 0.64]) * theta  # unit axis scaled to theta
        n_t = np.array([0.1, 0.2, -0.3])
        oracle = expm(twist_matrix(n_r, n_t))
        np.testing.assert_allclose(se3_exp(n_r, n_t), oracle, atol=1e-12)

    def test_matches_matrix_exponential(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n_r = rng.uniform(-math.pi, math.pi, 3)
            n_t = rng.uniform(-1.0, 1.0, 3)
            oracle = expm(twist_matrix(n_r, n_t))
            np.testing.assert_allclose(se3_exp(n_r, n_t), oracle, atol=1e-11)

    @given(
        st.lists(st.floats(-3.0, 3.0), min_size=6, max_size=6),
    )
    @settings(max_examples=100, deadline=None)
    def test_always_rigid(self, twist):
        out = se3_exp(twist[:3], twist[3:])
        rot = out[:3, :3]
        assert np.abs(rot.T @ rot - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(rot) - 1.0) < 1e-9
        np.testing.assert_array_equal(out[3], [0, 0, 0, 1])


class TestPerturbPoses:
    def test_zero_noise_is_identity(self):
        rng = np.random.default_rng(0)
        poses = np.stack([np.eye(4) for _ in range(4)])
        poses[:, :3, 3] = rng.uniform(-1, 1, (4, 3))
        out = perturb_poses(poses, Se3Noise(sigma_r=0.0, sigma_t=0.0))
        np.testing.assert_array_equal(out, poses)

    def test_same_seed_bit_identical(self):
        poses = np.stack([np.eye(4) for _ in range(3)])
        noise = Se3Noise(sigma_r=0.02, sigma_t=0.05, seed=42)
        a = perturb_poses(poses, noise)
        b = perturb_poses(poses, noise)
        np.testing.assert_array_equal(a, b)
        c = perturb_poses(poses, Se3Noise(sigma_r=0.02, sigma_t=0.05, seed=43))
        assert not np.array_equal(a, c)

    def test_outputs_are_rigid(self):
        rot = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()
        pose = np.eye(4)
        pose[:3, :3] = rot
        pose[:3, 3] = [0.5, -1.0, 2.0]
        out = perturb_poses(np.stack([pose] * 10), Se3Noise(0.1, 0.2, seed=1))
        for p in out:
            r = p[:3, :3]
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_noise_applies_in_world_frame(self):
        # rotation-only noise moves the translation of a translated pose:
        # out = delta @ pose, so t_out = R_delta @ t_pose
        pose = np.eye(4)
        pose[:3, 3] = [1.0, 0.0, 0.0]
        out = perturb_poses(pose[None], Se3Noise(sigma_r=0.3, sigma_t=0.0, seed=3))[0]
        assert not np.allclose(out[:3, 3], pose[:3, 3])
        np.testing.assert_allclose(out[:3, 3], out[:3, :3] @ pose[:3, 3], atol=1e-12)

    def test_translation_only_noise_keeps_rotation(self):
        pose = np.eye(4)
        pose[:3, :3] = Rotation.from_rotvec([0.0, 0.4, 0.0]).as_matrix()
        out = perturb_poses(pose[None], Se3Noise(sigma_r=0.0, sigma_t=0.5, seed=4))[0]
        np.testing.assert_array_equal(out[:3, :3], pose[:3, :3])
        assert not np.array_equal(out[:3, 3], pose[:3, 3])

    def test_angle_magnitude_order(self):
        # at these scales the largest draw lands at several degrees, in the
        # spirit of a max deviation just under ten
        poses = np.stack([np.eye(4)] * 10000)
        out = perturb_poses(poses, Se3Noise(sigma_r=5e-2, sigma_t=1e-1, seed=9))
        angles = Rotation.from_matrix(out[:, :3, :3]).magnitude()
        max_deg = math.degrees(angles.max())
        assert 2.0 < max_deg < 25.0

    def test_single_pose_2d_input(self):
        out = perturb_poses(np.eye(4), Se3Noise(0.01, 0.01, seed=0))
        assert out.shape == (1, 4, 4)

    def test_invalid_inputs(self):
        with pytest.raises(InputError):
            Se3Noise(sigma_r=-0.1, sigma_t=0.0)
        bad = np.eye(4)
        bad[3, 3] = 2.0
        with pytest.raises(InputError):
            perturb_poses(bad[None], Se3Noise(0.0, 0.0))


class TestInjectOutliers:
    def test_level_zero_copies_cloud(self):
        cloud = synth_cloud(sphere(), 100, mode="volumetric", seed=0)
        out = inject_outliers(cloud, 0, seed=1)
        np.testing.assert_array_equal(out.points, cloud.points)
        out.points[0, 0] = 99.0  # must not alias the input
        assert cloud.points[0, 0] != 99.0

    def test_exact_count_and_prefix(self):
        cloud = synth_cloud(sphere(), 100, mode="volumetric", seed=0)
        out = inject_outliers(cloud, 200, seed=1)
        assert len(out.points) == 300
        np.testing.assert_array_equal(out.points[:100], cloud.points)

    def test_outliers_inside_inflated_bbox(self):
        cloud = synth_cloud(torus(), 500, mode="surface", seed=2)
        lo = cloud.points.min(axis=0)
        hi = cloud.points.max(axis=0)
        center = 0.5 * (lo + hi)
        half = 0.6 * (hi - lo)
        extra = inject_outliers(cloud, 500, seed=3).points[500:]
        assert np.all(extra >= center - half) and np.all(extra <= center + half)
        # inflation reaches beyond the original bbox; some draws land there
        outside = np.any((extra < lo) | (extra > hi), axis=1)
        assert outside.any()

    def test_deterministic_per_seed(self):
        cloud = synth_cloud(sphere(), 50, mode="surface", seed=0)
        a = inject_outliers(cloud, 40, seed=7)
        b = inject_outliers(cloud, 40, seed=7)
        np.testing.assert_array_equal(a.points, b.points)

    def test_invalid_inputs(self):
        cloud = synth_cloud(sphere(), 10, mode="surface", seed=0)
        with pytest.raises(InputError):
            inject_outliers(cloud, -1, seed=0)
        with pytest.raises(EmptyCloudError):
            inject_outliers(PointCloud(np.empty((0, 3)), frame=FRAME_WORLD), 5, seed=0)
