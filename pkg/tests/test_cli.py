"""End-to-end command-line tests through click's CliRunner.

Training-backed commands run with miniature networks and a handful of
iterations so the whole file stays fast; the full-scale behavior is covered
by the acceptance suite.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import make_icosphere, make_torus_mesh
from pullmesh import synth
from pullmesh.cli import main
from pullmesh.fileio import load_cloud, load_mesh, load_poses, save_mesh, save_poses, save_xyz
from pullmesh.geometry import FRAME_WORLD, PointCloud

TINY_SETS = [
    "--set", "iterations=30",
    "--set", "batch_size=64",
    "--set", "width=16",
    "--set", "hidden_layers=2",
    "--set", "skip_layer=1",
    "--set", "n_points=200",
    "--set", "mc_resolution=16",
    "--set", "census_interval=1000000",
]


@pytest.fixture()
def cli():
    return CliRunner()


@pytest.fixture()
def sphere_cloud_file(tmp_path):
    cloud = synth.synth_cloud(synth.sphere(), 200, mode="surface", seed=0)
    path = tmp_path / "cloud.xyz"
    save_xyz(path, cloud)
    return path


def invoke_ok(cli, args, **kwargs):
    result = cli.invoke(main, args, **kwargs)
    assert result.exit_code == 0, result.output + (result.stderr or "")
    return result


class TestTopLevel:
    def test_version(self, cli):
        result = invoke_ok(cli, ["--version"])
        assert "pullmesh" in result.output

    def test_help_lists_all_subcommands(self, cli):
        result = invoke_ok(cli, ["--help"])
        for name in ("reconstruct", "metrics", "mesh-info", "synth", "perturb",
                     "ablate", "sweep-to-cloud"):
            assert name in result.output


class TestSynthCommand:
    def test_cloud_output_deterministic(self, cli, tmp_path):
        args = ["synth", "--shape", "sphere", "--mode", "surface", "--n", "150", "--seed", "1"]
        invoke_ok(cli, args + ["--out", str(tmp_path / "a.xyz")])
        invoke_ok(cli, args + ["--out", str(tmp_path / "b.xyz")])
        assert (tmp_path / "a.xyz").read_bytes() == (tmp_path / "b.xyz").read_bytes()
        assert len(load_cloud(tmp_path / "a.xyz").points) == 150

    def test_seed_env_fallback(self, cli, tmp_path):
        args = ["synth", "--shape", "sphere", "--mode", "volumetric", "--n", "50"]
        invoke_ok(cli, args + ["--out", str(tmp_path / "env.xyz")],
                  env={"FUNSR_SEED": "4"})
        invoke_ok(cli, args + ["--seed", "4", "--out", str(tmp_path / "flag.xyz")])
        assert (tmp_path / "env.xyz").read_bytes() == (tmp_path / "flag.xyz").read_bytes()

    def test_sweep_mode_and_round_trip(self, cli, tmp_path):
        sweep_dir = tmp_path / "sweep"
        invoke_ok(cli, ["synth", "--shape", "sphere", "--mode", "sweep",
                        "--frames", "5", "--spacing", "0.2", "--pixel-size", "0.1",
                        "--out", str(sweep_dir)])
        assert (sweep_dir / "poses.csv").exists()
        assert (sweep_dir / "calibration.txt").exists()
        assert (sweep_dir / "masks" / "frame_000000.pgm").exists()
        out = tmp_path / "lifted.xyz"
        result = invoke_ok(cli, ["sweep-to-cloud",
                                 "--masks", str(sweep_dir / "masks"),
                                 "--poses", str(sweep_dir / "poses.csv"),
                                 "--calibration", str(sweep_dir / "calibration.txt"),
                                 "--out", str(out)])
        n = len(load_cloud(out).points)
        assert n > 0
        assert f"wrote {n} points" in result.output

    def test_unknown_shape_rejected(self, cli, tmp_path):
        result = cli.invoke(main, ["synth", "--shape", "cube", "--out", str(tmp_path / "c.xyz")])
        assert result.exit_code == 2


class TestPerturbCommand:
    def make_poses(self, tmp_path):
        poses = np.stack([np.eye(4)] * 4)
        poses[:, 2, 3] = [0.0, 0.1, 0.2, 0.3]
        path = tmp_path / "poses.csv"
        save_poses(path, poses)
        return path, poses

    def test_writes_poses_and_sidecar(self, cli, tmp_path):
        path, poses = self.make_poses(tmp_path)
        out = tmp_path / "noisy.csv"
        invoke_ok(cli, ["perturb", str(path), "--sigma-r", "0.02", "--sigma-t", "0.05",
                        "--seed", "3", "--out", str(out)])
        noisy = load_poses(out)
        assert noisy.shape == (4, 4, 4)
        assert not np.array_equal(noisy, poses)
        sidecar = json.loads((tmp_path / "noisy.csv.json").read_text())
        assert sidecar["sigma_r"] == 0.02
        assert sidecar["sigma_t"] == 0.05
        assert sidecar["seed"] == 3
        assert sidecar["frames"] == 4

    def test_zero_noise_round_trips_text(self, cli, tmp_path):
        path, _ = self.make_poses(tmp_path)
        out = tmp_path / "same.csv"
        invoke_ok(cli, ["perturb", str(path), "--sigma-r", "0", "--sigma-t", "0",
                        "--out", str(out)])
        assert out.read_text() == path.read_text()

    def test_missing_file_exits_2_with_io_stage(self, cli, tmp_path):
        result = cli.invoke(main, ["perturb", str(tmp_path / "absent.csv"),
                                   "--sigma-r", "0", "--sigma-t", "0",
                                   "--out", str(tmp_path / "x.csv")])
        assert result.exit_code == 2
        assert "error [io]:" in result.stderr


class TestReconstructCommand:
    def test_end_to_end_outputs(self, cli, tmp_path, sphere_cloud_file):
        out = tmp_path / "run"
        result = invoke_ok(cli, ["reconstruct", "--cloud", str(sphere_cloud_file),
                                 "-o", str(out), "--seed", "0", "--quiet"] + TINY_SETS)
        assert "vertices" in result.output
        mesh = load_mesh(out / "mesh.obj")
        assert mesh.n_vertices > 0 and mesh.n_faces > 0
        assert (out / "mesh.ply").exists()
        assert (out / "loss.csv").exists()
        assert (out / "checkpoints" / "final.fsdf").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 0
        assert manifest["config"]["iterations"] == 30
        assert manifest["mesh"]["vertices"] == mesh.n_vertices
        assert set(manifest["timings_sec"]) >= {"io", "geometry", "train", "mesh"}

    def test_zero_iterations_gives_init_surface(self, cli, tmp_path, sphere_cloud_file):
        out = tmp_path / "run0"
        invoke_ok(cli, ["reconstruct", "--cloud", str(sphere_cloud_file),
                        "-o", str(out), "--iterations", "0", "--quiet"] + TINY_SETS[2:])
        mesh = load_mesh(out / "mesh.obj")
        assert mesh.n_vertices > 0

    def test_manifest_rerun_is_bit_identical(self, cli, tmp_path, sphere_cloud_file):
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        invoke_ok(cli, ["reconstruct", "--cloud", str(sphere_cloud_file),
                        "-o", str(out1), "--seed", "3", "--quiet"] + TINY_SETS)
        invoke_ok(cli, ["reconstruct", "--from-manifest", str(out1 / "manifest.json"),
                        "-o", str(out2), "--quiet"])
        assert (out1 / "mesh.obj").read_bytes() == (out2 / "mesh.obj").read_bytes()
        assert (out1 / "loss.csv").read_bytes() == (out2 / "loss.csv").read_bytes()

    def test_manifest_rerun_rejects_changed_input(self, cli, tmp_path, sphere_cloud_file):
        out = tmp_path / "run"
        invoke_ok(cli, ["reconstruct", "--cloud", str(sphere_cloud_file),
                        "-o", str(out), "--quiet"] + TINY_SETS)
        sphere_cloud_file.write_text("0 0 0\n")
        result = cli.invoke(main, ["reconstruct", "--from-manifest",
                                   str(out / "manifest.json"), "-o", str(tmp_path / "r2")])
        assert result.exit_code == 2
        assert "changed since the run" in result.stderr

    def test_manifest_excludes_other_inputs(self, cli, tmp_path, sphere_cloud_file):
        result = cli.invoke(main, ["reconstruct", "--from-manifest", "m.json",
                                   "--cloud", str(sphere_cloud_file), "-o", str(tmp_path)])
        assert result.exit_code == 2

    def test_missing_cloud_exits_2_io(self, cli, tmp_path):
        result = cli.invoke(main, ["reconstruct", "--cloud", str(tmp_path / "absent.xyz"),
                                   "-o", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert "error [io]:" in result.stderr

    def test_missing_poses_exits_2_io(self, cli, tmp_path):
        masks, poses = synth.synth_sweep(synth.sphere(), 3, 0.3, 0.1)
        from pullmesh.fileio import save_calibration, save_mask_dir
        save_mask_dir(tmp_path / "masks", masks)
        save_calibration(tmp_path / "cal.txt", synth.sweep_calibration(0.1))
        result = cli.invoke(main, ["reconstruct", "--masks", str(tmp_path / "masks"),
                                   "--poses", str(tmp_path / "absent.csv"),
                                   "--calibration", str(tmp_path / "cal.txt"),
                                   "-o", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert "error [io]:" in result.stderr

    def test_cloud_and_sweep_together_rejected(self, cli, tmp_path, sphere_cloud_file):
        result = cli.invoke(main, ["reconstruct", "--cloud", str(sphere_cloud_file),
                                   "--masks", str(tmp_path), "-o", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert "not both" in result.stderr

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_blowup_exits_3_train(self, cli, tmp_path, sphere_cloud_file):
        result = cli.invoke(main, ["reconstruct", "--cloud", str(sphere_cloud_file),
                                   "-o", str(tmp_path / "out"), "--quiet",
                                   "--set", "learning_rate=1e308"] + TINY_SETS)
        assert result.exit_code == 3
        assert "error [train]:" in result.stderr

    def test_dump_queries(self, cli, tmp_path, sphere_cloud_file):
        out = tmp_path / "run"
        invoke_ok(cli, ["reconstruct", "--cloud", str(sphere_cloud_file),
                        "-o", str(out), "--quiet", "--dump-queries"] + TINY_SETS)
        queries = load_cloud(out / "queries.xyz")
        targets = (out / "targets.csv").read_text().strip().split("\n")
        assert targets[0] == "query_index,target_index,source_index"
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(queries.points) == manifest["cloud_counts"]["after_fps"] * 25
        assert len(targets) == 1 + len(queries.points)


class TestMetricsCommand:
    def test_mesh_vs_itself(self, cli, tmp_path):
        path = tmp_path / "s.obj"
        save_mesh(path, make_icosphere(2))
        result = invoke_ok(cli, ["metrics", str(path), str(path),
                                 "--samples", "500", "--voxel", "0.1", "--seed", "0"])
        payload = json.loads(result.output)
        assert payload["metrics"]["dsc"] == 1.0
        assert payload["metrics"]["iou"] == 1.0
        assert payload["metrics"]["cd_mm"] < 1e-12
        assert payload["metrics"]["hd_mm"] < 1e-12

    def test_sphere_vs_torus_topology(self, cli, tmp_path):
        a = tmp_path / "s.obj"
        b = tmp_path / "t.obj"
        save_mesh(a, make_icosphere(2))
        save_mesh(b, make_torus_mesh())
        result = invoke_ok(cli, ["metrics", str(a), str(b),
                                 "--samples", "500", "--voxel", "0.1"])
        payload = json.loads(result.output)
        assert payload["topology_a"]["genus_per_component"] == [0]
        assert payload["topology_b"]["genus_per_component"] == [1]

    def test_squared_cd_flag_and_out_file(self, cli, tmp_path):
        path = tmp_path / "s.obj"
        save_mesh(path, make_icosphere(1))
        out = tmp_path / "report.json"
        invoke_ok(cli, ["metrics", str(path), str(path), "--samples", "200",
                        "--voxel", "0.2", "--squared-cd", "--out", str(out)])
        payload = json.loads(out.read_text())
        assert payload["metrics"]["squared_cd"] is True

    def test_open_mesh_exits_2(self, cli, tmp_path):
        open_mesh_path = tmp_path / "open.obj"
        vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        faces = np.array([[0, 1, 2]])
        from pullmesh.meshing import TriangleMesh
        save_mesh(open_mesh_path, TriangleMesh(vertices, faces))
        sphere_path = tmp_path / "s.obj"
        save_mesh(sphere_path, make_icosphere(1))
        result = cli.invoke(main, ["metrics", str(open_mesh_path), str(sphere_path),
                                   "--samples", "100", "--voxel", "0.2"])
        assert result.exit_code == 2
        assert "watertight" in result.stderr

    def test_missing_mesh_exits_2(self, cli, tmp_path):
        result = cli.invoke(main, ["metrics", str(tmp_path / "a.obj"), str(tmp_path / "b.obj")])
        assert result.exit_code == 2
        assert "error [io]:" in result.stderr


class TestMeshInfoCommand:
    def test_text_output(self, cli, tmp_path):
        path = tmp_path / "s.obj"
        save_mesh(path, make_icosphere(2))
        result = invoke_ok(cli, ["mesh-info", str(path)])
        assert "vertices: 162" in result.output
        assert "euler characteristic: 2" in result.output
        assert "watertight: yes" in result.output

    def test_json_output(self, cli, tmp_path):
        path = tmp_path / "t.obj"
        save_mesh(path, make_torus_mesh())
        result = invoke_ok(cli, ["mesh-info", str(path), "--json"])
        info = json.loads(result.output)
        assert info["euler_characteristic"] == 0
        assert info["genus_per_component"] == [1]
        assert info["watertight"] is True

    def test_missing_file_exits_2(self, cli, tmp_path):
        result = cli.invoke(main, ["mesh-info", str(tmp_path / "absent.obj")])
        assert result.exit_code == 2


class TestAblateCommand:
    ABLATE_SETS = [
        "--set", "iterations=5",
        "--set", "batch_size=32",
        "--set", "width=16",
        "--set", "hidden_layers=2",
        "--set", "skip_layer=1",
        "--set", "n_points=64",
        "--set", "mc_resolution=16",
        "--set", "metrics_samples=100",
        "--set", "census_interval=1000000",
    ]

    def test_emits_four_variant_rows(self, cli, tmp_path):
        out = tmp_path / "ablation"
        result = invoke_ok(cli, ["ablate", "--fixture", "sphere", "--seed", "0",
                                 "-o", str(out)] + self.ABLATE_SETS)
        lines = result.output.strip().split("\n")
        assert lines[0] == "variant,cd,hd"
        variants = [line.split(",")[0] for line in lines[1:]]
        assert variants == ["baseline", "scc", "adv", "full"]
        csv_lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert len(csv_lines) == 5
        for variant in variants:
            assert (out / f"{variant}.obj").exists()

    def test_unknown_fixture_rejected(self, cli):
        result = cli.invoke(main, ["ablate", "--fixture", "egg"])
        assert result.exit_code == 2
