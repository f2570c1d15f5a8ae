"""Tests for the metric toolkit: sampled surface distances, voxel overlap,
topology reports, and curvature/KDE summaries. Oracles are brute force,
hand geometry, or analytic closed forms."""

import math

import numpy as np
import pytest
from conftest import make_cube, make_icosphere
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from pullmesh.errors import InputError
from pullmesh.evaluation import (
    MetricReport,
    TopologyReport,
    angle_deficits,
    curvature_report,
    gaussian_kde_curve,
    is_watertight,
    nearest_rank_percentile,
    point_mesh_distances,
    point_triangle_sq_distance,
    sample_surface,
    scott_bandwidth,
    surface_distance_metrics,
    topology_report,
    volumetric_overlap,
)
from pullmesh.meshing import TriangleMesh, empty_mesh


def square_mesh(z=0.0):
    v = np.array([[0.0, 0.0, z], [1.0, 0.0, z], [0.0, 1.0, z], [1.0, 1.0, z]])
    return TriangleMesh(v, np.array([[0, 1, 2], [1, 3, 2]]))


class TestSampleSurface:
    def test_points_lie_on_surface(self):
        pts = sample_surface(square_mesh(), 500, seed=0)
        assert np.allclose(pts[:, 2], 0.0)
        assert (pts[:, :2] >= 0).all() and (pts[:, :2] <= 1).all()

    def test_area_weighting(self):
        # two triangles: one tiny, one 100x larger in area; nearly all
        # samples should land on the big one (x > 1 half plane)
        v = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0],
                      [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        mesh = TriangleMesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
        pts = sample_surface(mesh, 2000, seed=1)
        big = (pts[:, 0] >= 1.0).mean()
        assert abs(big - (0.5 / 0.505)) < 0.02

    def test_seeded(self):
        mesh = square_mesh()
        a = sample_surface(mesh, 64, seed=5)
        assert np.array_equal(a, sample_surface(mesh, 64, seed=5))
        assert not np.array_equal(a, sample_surface(mesh, 64, seed=6))

    def test_rejects_empty_and_bad_counts(self):
        with pytest.raises(InputError):
            sample_surface(empty_mesh(), 10, seed=0)
        with pytest.raises(InputError):
            sample_surface(square_mesh(), 0, seed=0)


class TestPointTriangleDistance:
    A = np.array([[0.0, 0.0, 0.0]])
    B = np.array([[1.0, 0.0, 0.0]])
    C = np.array([[0.0, 1.0, 0.0]])

    def check(self, p, expected):
        sq = point_triangle_sq_distance(np.array([p]), self.A, self.B, self.C)
        assert np.sqrt(sq[0]) == pytest.approx(expected, abs=1e-14)

    def test_face_region(self):
        self.check([0.25, 0.25, 1.0], 1.0)
        self.check([0.25, 0.25, 0.0], 0.0)

    def test_vertex_regions(self):
        self.check([-1.0, -1.0, 0.0], math.sqrt(2.0))
        self.check([2.0, -1.0, 0.0], math.sqrt(2.0))
        self.check([-1.0, 2.0, 0.0], math.sqrt(2.0))

    def test_edge_regions(self):
        self.check([0.5, -1.0, 0.0], 1.0)
        self.check([-1.0, 0.5, 0.0], 1.0)
        self.check([1.0, 1.0, 0.0], math.sqrt(2.0) / 2.0)

    def test_degenerate_triangle_falls_back_to_edges(self):
        a = np.array([[0.0, 0.0, 0.0]])
        b = np.array([[1.0, 0.0, 0.0]])
        c = np.array([[2.0, 0.0, 0.0]])  # collinear
        sq = point_triangle_sq_distance(np.array([[0.5, 1.0, 0.0]]), a, b, c)
        assert np.sqrt(sq[0]) == pytest.approx(1.0, abs=1e-14)


class TestPointMeshDistances:
    @pytest.mark.parametrize("mesh_name", ["tetrahedron", "unit_cube", "icosphere"])
    def test_pruned_equals_brute_force(self, mesh_name, request):
        mesh = request.getfixturevalue(mesh_name)
        if mesh.n_faces > 100:
            mesh = make_icosphere(subdivisions=1)
        rng = np.random.default_rng(0)
        pts = np.concatenate([
            rng.uniform(-2, 2, size=(150, 3)),
            mesh.vertices[:20] + 1e-9,      # near-vertex queries
            mesh.vertices[:20] * 0.5,       # interior-ish
        ])
        fast = point_mesh_distances(pts, mesh)
        brute = point_mesh_distances(pts, mesh, brute_force=True)
        assert np.array_equal(fast, brute)

    def test_cube_hand_values(self, unit_cube):
        d = point_mesh_distances(np.array([
            [0.0, 0.0, 0.0],     # center: 0.5 from every face
            [1.5, 0.0, 0.0],     # outside face region
            [1.0, 1.0, 1.0],     # outside corner region
        ]), unit_cube)
        expected = [0.5, 1.0, math.sqrt(3.0) / 2.0]
        assert np.allclose(d, expected, atol=1e-14)

    def test_empty_mesh_rejected(self):
        with pytest.raises(InputError):
            point_mesh_distances(np.zeros((1, 3)), empty_mesh())


class TestNearestRankPercentile:
    def test_one_far_point_in_twenty(self):
        values = np.array([1.0] * 19 + [10.0])
        assert nearest_rank_percentile(values, 95.0) == 1.0
        assert nearest_rank_percentile(values, 96.0) == 10.0
        assert values.max() == 10.0

    def test_extremes(self):
        values = np.arange(1, 11, dtype=float)
        assert nearest_rank_percentile(values, 100.0) == 10.0
        assert nearest_rank_percentile(values, 0.1) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            nearest_rank_percentile(np.array([]), 95.0)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 60))
    @settings(max_examples=40, deadline=None)
    def test_matches_inverted_cdf(self, seed, n):
        values = np.random.default_rng(seed).normal(size=n)
        for pct in (5.0, 50.0, 95.0, 99.0):
            ours = nearest_rank_percentile(values, pct)
            ref = float(np.percentile(values, pct, method="inverted_cdf"))
            assert ours == ref


class TestSurfaceDistanceMetrics:
    def test_identical_meshes_zero(self, icosphere):
        m = surface_distance_metrics(icosphere, icosphere, samples=2000, seed=0)
        assert max(m.asd, m.cd, m.hd, m.hd95) < 1e-12

    def test_offset_unit_squares_all_one(self):
        m = surface_distance_metrics(square_mesh(0.0), square_mesh(1.0),
                                     samples=5000, seed=0)
        assert m == (1.0, 1.0, 1.0, 1.0)

    def test_squared_cd_switch(self):
        m = surface_distance_metrics(square_mesh(0.0), square_mesh(2.0),
                                     samples=2000, seed=0, squared_cd=True)
        assert m.asd == 2.0 and m.cd == 4.0

    def test_symmetric_in_arguments(self, icosphere, torus_mesh):
        a = surface_distance_metrics(icosphere, torus_mesh, samples=3000, seed=4)
        b = surface_distance_metrics(torus_mesh, icosphere, samples=3000, seed=4)
        assert a == b

    def test_hd_bounds_hd95_and_asd(self, icosphere, torus_mesh):
        m = surface_distance_metrics(icosphere, torus_mesh, samples=3000, seed=0)
        assert m.hd >= m.hd95 and m.hd >= m.asd >= 0

    def test_rigid_motion_invariance(self, icosphere, torus_mesh):
        base = surface_distance_metrics(icosphere, torus_mesh, samples=5000, seed=2)
        rot = Rotation.random(random_state=7).as_matrix()
        shift = np.array([0.3, -1.2, 2.5])

        def moved(mesh):
            return TriangleMesh(mesh.vertices @ rot.T + shift, mesh.faces)

        m = surface_distance_metrics(moved(icosphere), moved(torus_mesh),
                                     samples=5000, seed=2)
        for ours, ref in zip(m, base):
            assert ours == pytest.approx(ref, rel=1e-6)

    def test_empty_inputs_rejected(self, icosphere):
        with pytest.raises(InputError):
            surface_distance_metrics(empty_mesh(), icosphere)
        with pytest.raises(InputError):
            surface_distance_metrics(icosphere, empty_mesh())


class TestTopologyReport:
    def test_sphere_counts(self, icosphere):
        rep = topology_report(icosphere)
        assert rep.connected_components == 1
        assert rep.genus_per_component == [0]
        assert rep.watertight
        assert (rep.vertex_count, rep.edge_count, rep.face_count) == (162, 480, 320)

    def test_torus_genus_one(self, torus_mesh):
        rep = topology_report(torus_mesh)
        assert rep.connected_components == 1
        assert rep.genus_per_component == [1]
        assert rep.vertex_count - rep.edge_count + rep.face_count == 0

    def test_two_disjoint_spheres(self, icosphere):
        both = TriangleMesh(
            np.vstack([icosphere.vertices, icosphere.vertices + 5.0]),
            np.vstack([icosphere.faces, icosphere.faces + icosphere.n_vertices]))
        rep = topology_report(both)
        assert rep.connected_components == 2
        assert rep.genus_per_component == [0, 0]

    def test_mixed_topology(self, icosphere, torus_mesh):
        both = TriangleMesh(
            np.vstack([icosphere.vertices, torus_mesh.vertices + 10.0]),
            np.vstack([icosphere.faces, torus_mesh.faces + icosphere.n_vertices]))
        rep = topology_report(both)
        assert sorted(rep.genus_per_component) == [0, 1]

    def test_open_square_flagged(self):
        rep = topology_report(square_mesh())
        assert not rep.watertight
        assert rep.genus_per_component == ["non-manifold"]

    def test_edge_shared_by_three_faces(self):
        v = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0],
                      [0.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])
        mesh = TriangleMesh(v, np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]]))
        rep = topology_report(mesh)
        assert rep.connected_components == 1
        assert rep.genus_per_component == ["non-manifold"]
        assert not rep.watertight

    def test_empty_mesh(self):
        rep = topology_report(empty_mesh())
        assert rep.connected_components == 0
        assert rep.genus_per_component == []

    def test_watertight_helper(self, unit_cube):
        assert is_watertight(unit_cube)
        assert not is_watertight(square_mesh())
        assert not is_watertight(empty_mesh())


class TestVolumetricOverlap:
    def test_identical_cubes(self, unit_cube):
        dsc, iou = volumetric_overlap(unit_cube, unit_cube, voxel=0.1)
        assert (dsc, iou) == (1.0, 1.0)

    def test_disjoint_cubes(self):
        a = make_cube(center=(0, 0, 0), edge=1.0)
        b = make_cube(center=(5, 0, 0), edge=1.0)
        assert volumetric_overlap(a, b, voxel=0.1) == (0.0, 0.0)

    def test_half_shifted_cube(self):
        a = make_cube(center=(0.5, 0.5, 0.5), edge=1.0)
        b = make_cube(center=(1.0, 0.5, 0.5), edge=1.0)
        dsc, iou = volumetric_overlap(a, b, voxel=0.05)
        assert iou == pytest.approx(1.0 / 3.0, abs=0.02)
        assert dsc == pytest.approx(0.5, abs=0.02)

    def test_dsc_iou_identity(self, icosphere):
        shifted = TriangleMesh(icosphere.vertices + 0.4, icosphere.faces)
        dsc, iou = volumetric_overlap(icosphere, shifted, voxel=0.08)
        assert abs(dsc - 2.0 * iou / (1.0 + iou)) <= 1e-9

    def test_rotation_tolerance(self):
        a = make_cube(center=(0.5, 0.5, 0.5), edge=1.0)
        b = make_cube(center=(1.0, 0.5, 0.5), edge=1.0)
        base = volumetric_overlap(a, b, voxel=0.05)
        rot = Rotation.random(random_state=3).as_matrix()
        ra = TriangleMesh(a.vertices @ rot.T, a.faces)
        rb = TriangleMesh(b.vertices @ rot.T, b.faces)
        rotated = volumetric_overlap(ra, rb, voxel=0.05)
        assert abs(rotated[0] - base[0]) < 0.05

    def test_face_on_ray_plane_is_handled(self):
        # top face sits exactly in a voxel-center plane; the inside test
        # must fall back to jittered rays instead of misclassifying
        edge = 0.525
        a = make_cube(center=(edge / 2, edge / 2, edge / 2), edge=edge)
        dsc, iou = volumetric_overlap(a, a, voxel=0.05)
        assert (dsc, iou) == (1.0, 1.0)

    def test_open_mesh_rejected_by_name(self, unit_cube):
        with pytest.raises(InputError, match="predicted"):
            volumetric_overlap(square_mesh(), unit_cube, voxel=0.1)
        with pytest.raises(InputError, match="reference"):
            volumetric_overlap(unit_cube, square_mesh(), voxel=0.1)

    def test_bad_voxel_rejected(self, unit_cube):
        with pytest.raises(InputError):
            volumetric_overlap(unit_cube, unit_cube, voxel=0.0)


class TestCurvature:
    def test_gauss_bonnet_sphere(self, icosphere):
        assert angle_deficits(icosphere).sum() == pytest.approx(4 * np.pi, abs=1e-6)

    def test_gauss_bonnet_torus(self, torus_mesh):
        assert angle_deficits(torus_mesh).sum() == pytest.approx(0.0, abs=1e-6)

    def test_gauss_bonnet_cube(self, unit_cube):
        # eight corners, each with three right angles
        deficits = angle_deficits(unit_cube)
        assert deficits.sum() == pytest.approx(4 * np.pi, abs=1e-9)

    def test_sphere_curvature_matches_inverse_radius_squared(self):
        mesh = make_icosphere(subdivisions=4, radius=2.0)
        rep = curvature_report(mesh, radius=0.0)
        assert rep.curvatures.mean() == pytest.approx(0.25, rel=0.1)

    def test_ball_average_with_huge_radius_is_global_mean(self, unit_cube):
        raw = curvature_report(unit_cube, radius=0.0).curvatures
        averaged = curvature_report(unit_cube, radius=10.0).curvatures
        assert np.allclose(averaged, raw.mean(), rtol=1e-12)

    def test_kde_integrates_to_one(self):
        mesh = make_icosphere(subdivisions=3, radius=1.0)
        rep = curvature_report(mesh, radius=0.02)
        integral = np.trapezoid(rep.kde_density, rep.kde_grid)
        assert integral == pytest.approx(1.0, abs=1e-3)
        assert (rep.kde_density >= 0).all()
        assert rep.bandwidth > 0

    def test_kde_single_sample_peak(self):
        grid, density = gaussian_kde_curve(np.array([3.0]), 0.5,
                                           grid=np.array([3.0]))
        assert density[0] == pytest.approx(1.0 / (0.5 * math.sqrt(2 * math.pi)),
                                           rel=1e-12)

    def test_scott_bandwidth_formula(self):
        samples = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        expected = np.std(samples, ddof=1) * 5 ** (-0.2)
        assert scott_bandwidth(samples) == pytest.approx(expected, rel=1e-12)
        with pytest.raises(InputError):
            scott_bandwidth(np.array([1.0]))
        assert scott_bandwidth(np.array([2.0, 2.0, 2.0])) > 0

    def test_open_mesh_rejected(self):
        with pytest.raises(InputError):
            curvature_report(square_mesh(), radius=0.02)

    def test_bad_parameters_rejected(self, unit_cube):
        with pytest.raises(InputError):
            curvature_report(unit_cube, radius=-1.0)
        with pytest.raises(InputError):
            gaussian_kde_curve(np.array([1.0, 2.0]), 0.0)


class TestMetricReport:
    def good(self):
        return MetricReport(asd_mm=0.5, cd_mm=0.5, hd_mm=2.0, hd95_mm=1.0,
                            dsc=0.8, iou=2.0 / 3.0, samples=1000, seed=0,
                            voxel_mm=0.1)

    def test_valid_report_passes(self):
        self.good().validate()

    def test_hd_ordering_enforced(self):
        r = self.good()
        r.hd95_mm = 3.0
        with pytest.raises(InputError):
            r.validate()

    def test_overlap_identity_enforced(self):
        r = self.good()
        r.iou = 0.5
        with pytest.raises(InputError):
            r.validate()

    def test_range_enforced(self):
        r = self.good()
        r.dsc, r.iou = 1.5, 1.5
        with pytest.raises(InputError):
            r.validate()

    def test_dict_round_trip(self):
        r = self.good()
        assert MetricReport.from_dict(r.to_dict()) == r

    def test_topology_report_dict(self, icosphere):
        d = topology_report(icosphere).to_dict()
        assert d["connected_components"] == 1
        assert d["genus_per_component"] == [0]
        assert d["watertight"] is True
