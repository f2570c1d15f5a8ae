"""Pipeline orchestration: staged runs, manifests, and command backends.

Each pipeline stage runs inside a context that stamps its name onto any
raised pipeline error and records wall-clock time, so failures surface as
``error [stage]: message`` with a meaningful exit code and successful runs
carry a timing breakdown in their manifest.
"""

from __future__ import annotations

import concurrent.futures
import contextlib
import hashlib
import time
from pathlib import Path

import numpy as np

from . import __version__, fileio, synth
from .config import Config
from .errors import InputError, PullmeshError
from .evaluation import (
    surface_distance_metrics,
    topology_report,
    volumetric_overlap,
    MetricReport,
)
from .geometry import (
    PointCloud,
    build_cloud_from_sweep,
    farthest_point_sample,
    normalize_cloud,
    voxel_downsample,
)
from .meshing import ScalarGrid, TriangleMesh, extract, marching_cubes
from .sampling import build_query_set
from .training import derive_seed, fit

AUTO_VOXEL_DIVISOR = 128
AUTO_METRIC_VOXEL_DIVISOR = 64
REFERENCE_GRID_RESOLUTION = 128

FIXTURES = {
    "sphere": synth.sphere,
    "torus": synth.torus,
    "two-spheres": synth.two_spheres,
}

ABLATION_VARIANTS = (
    # name, keep lambda_scc, keep lambda_g
    ("baseline", False, False),
    ("scc", True, False),
    ("adv", False, True),
    ("full", True, True),
)


@contextlib.contextmanager
def stage(name: str, timings: dict | None = None):
    """Tag pipeline errors with the stage name and record elapsed time."""
    start = time.perf_counter()
    try:
        yield
    except PullmeshError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def digest_input(path) -> str:
    """SHA-256 of a file, or of the sorted per-file digests for a directory."""
    path = Path(path)
    if path.is_dir():
        h = hashlib.sha256()
        for entry in sorted(p for p in path.iterdir() if p.is_file()):
            h.update(entry.name.encode())
            h.update(bytes.fromhex(fileio.sha256_digest(entry)))
        return h.hexdigest()
    return fileio.sha256_digest(path)


def auto_voxel_cell(points: np.ndarray) -> float:
    extent = float((points.max(axis=0) - points.min(axis=0)).max())
    if extent == 0.0:
        raise InputError("point cloud has zero spatial extent")
    return extent / AUTO_VOXEL_DIVISOR


def prepare_cloud(cloud: PointCloud, config: Config, seed: int):
    """Downsample to at most n_points and normalize; returns the normalized
    cloud, the transform back to world coordinates, and stage counters."""
    cloud.require_nonempty("reconstruction input")
    counts = {"input": len(cloud.points)}
    cell = config.voxel_cell if config.voxel_cell > 0 else auto_voxel_cell(cloud.points)
    cloud = voxel_downsample(cloud, cell)
    counts["after_voxel"] = len(cloud.points)
    if len(cloud.points) > config.n_points:
        cloud = farthest_point_sample(cloud, config.n_points, seed=derive_seed(seed, 5))
    counts["after_fps"] = len(cloud.points)
    normalized, transform = normalize_cloud(cloud)
    return normalized, transform, counts


def load_run_inputs(cloud_path=None, masks_dir=None, poses_path=None, calibration_path=None):
    """Either a cloud file, or the sweep triplet; returns (cloud, inputs-dict)."""
    if cloud_path is not None:
        if masks_dir or poses_path or calibration_path:
            raise InputError("give either a cloud file or a sweep (masks, poses, calibration), not both")
        cloud = fileio.load_cloud(cloud_path)
        inputs = {"cloud": str(cloud_path)}
        return cloud, inputs
    missing = [name for name, v in (("masks", masks_dir), ("poses", poses_path),
                                    ("calibration", calibration_path)) if v is None]
    if missing:
        raise InputError(f"sweep input requires masks, poses, and calibration; missing {', '.join(missing)}")
    masks = fileio.load_mask_dir(masks_dir)
    poses = fileio.load_poses(poses_path)
    calibration = fileio.load_calibration(calibration_path)
    cloud = build_cloud_from_sweep(masks, calibration, poses)
    inputs = {"masks": str(masks_dir), "poses": str(poses_path), "calibration": str(calibration_path)}
    return cloud, inputs


def reconstruct(config: Config, out_dir, cloud_path=None, masks_dir=None,
                poses_path=None, calibration_path=None, progress=None,
                dump_queries: bool = False) -> dict:
    """Full pipeline; writes mesh, loss history, checkpoints, manifest.

    Returns the manifest dictionary (also written to out/manifest.json).
    ``dump_queries`` additionally writes the training query pool as
    queries.xyz with a parallel targets.csv of nearest-point indices."""
    config.validate()
    seed = config.resolve_seed()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    timings: dict = {}

    with stage("io", timings):
        cloud, inputs = load_run_inputs(cloud_path, masks_dir, poses_path, calibration_path)
        digests = {role: digest_input(p) for role, p in inputs.items()}

    with stage("geometry", timings):
        normalized, transform, counts = prepare_cloud(cloud, config, seed)

    snapshot = config.to_dict()
    snapshot["seed"] = seed
    sidecar = {"config": snapshot, "seed": seed}

    if dump_queries:
        with stage("sampling", timings):
            # mirrors the pool fit() builds: same seed tag, same parameters
            qs = build_query_set(normalized, config.sigma_k,
                                 config.queries_per_point, derive_seed(seed, 1))
            fileio.save_xyz(out / "queries.xyz", PointCloud(qs.queries))
            with open(out / "targets.csv", "w", newline="\n") as f:
                f.write("query_index,target_index,source_index\n")
                for i, (t, s) in enumerate(zip(qs.target_index, qs.source_index)):
                    f.write(f"{i},{t},{s}\n")

    def checkpoint_callback(step, net):
        fileio.save_checkpoint(ckpt_dir / f"step_{step:06d}.fsdf", net,
                               dict(sidecar, step=step))

    with stage("train", timings):
        train_cfg = config.train_config(seed=seed)
        net, reports = fit(normalized, train_cfg,
                           checkpoint_callback=checkpoint_callback,
                           progress_callback=progress)
        fileio.save_checkpoint(ckpt_dir / "final.fsdf", net,
                               dict(sidecar, step=config.iterations))

    with stage("mesh", timings):
        mesh = extract(net, transform, config.mc_resolution, threshold=config.mc_threshold)

    with stage("io", timings):
        fileio.save_obj(out / "mesh.obj", mesh)
        fileio.save_ply(out / "mesh.ply", mesh.vertices, mesh.faces)
        fileio.save_loss_history(out / "loss.csv", reports)
        manifest = {
            "tool": "pullmesh",
            "version": __version__,
            "seed": seed,
            "config": snapshot,
            "inputs": {role: {"path": p, "sha256": digests[role]} for role, p in inputs.items()},
            "cloud_counts": counts,
            "mesh": {"vertices": mesh.n_vertices, "faces": mesh.n_faces},
            "outputs": ["mesh.obj", "mesh.ply", "loss.csv"]
                       + (["queries.xyz", "targets.csv"] if dump_queries else []),
            "timings_sec": {k: round(v, 6) for k, v in timings.items()},
        }
        fileio.save_json(out / "manifest.json", manifest)
    return manifest


def reconstruct_from_manifest(manifest_path, out_dir, progress=None) -> dict:
    """Re-run a recorded reconstruction; verifies input digests first."""
    manifest = fileio.load_json(manifest_path)
    try:
        snapshot = dict(manifest["config"])
        inputs = manifest["inputs"]
    except KeyError as exc:
        raise InputError(f"{manifest_path}: manifest missing {exc}", stage="io")
    config = Config.from_dict(snapshot)
    paths = {}
    for role, entry in inputs.items():
        path = Path(entry["path"])
        if not path.exists():
            raise InputError(f"{manifest_path}: recorded input {path} no longer exists", stage="io")
        digest = digest_input(path)
        if digest != entry["sha256"]:
            raise InputError(
                f"{manifest_path}: input {path} changed since the run "
                f"(sha256 {digest[:12]}... != recorded {entry['sha256'][:12]}...)",
                stage="io",
            )
        paths[role] = path
    return reconstruct(
        config, out_dir,
        cloud_path=paths.get("cloud"),
        masks_dir=paths.get("masks"),
        poses_path=paths.get("poses"),
        calibration_path=paths.get("calibration"),
        progress=progress,
    )


# ---------------------------------------------------------------- metrics


def auto_metric_voxel(mesh_a: TriangleMesh, mesh_b: TriangleMesh) -> float:
    lo = np.minimum(mesh_a.vertices.min(axis=0), mesh_b.vertices.min(axis=0))
    hi = np.maximum(mesh_a.vertices.max(axis=0), mesh_b.vertices.max(axis=0))
    extent = float((hi - lo).max())
    if extent == 0.0:
        raise InputError("meshes have zero spatial extent")
    return extent / AUTO_METRIC_VOXEL_DIVISOR


def metrics_payload(mesh_a: TriangleMesh, mesh_b: TriangleMesh, config: Config,
                    seed: int, squared_cd: bool = False) -> dict:
    """MetricReport between the meshes plus a TopologyReport for each."""
    topo_a = topology_report(mesh_a)
    topo_b = topology_report(mesh_b)
    with stage("metrics"):
        distances = surface_distance_metrics(
            mesh_a, mesh_b, samples=config.metrics_samples, seed=seed,
            squared_cd=squared_cd,
        )
        voxel = config.metrics_voxel if config.metrics_voxel > 0 else auto_metric_voxel(mesh_a, mesh_b)
        if not (topo_a.watertight and topo_b.watertight):
            sides = [name for name, t in (("first", topo_a), ("second", topo_b)) if not t.watertight]
            raise InputError(
                f"volumetric overlap requires watertight meshes; {' and '.join(sides)} "
                "mesh is not watertight"
            )
        dsc, iou = volumetric_overlap(mesh_a, mesh_b, voxel)
        report = MetricReport(
            asd_mm=distances.asd, cd_mm=distances.cd, hd_mm=distances.hd,
            hd95_mm=distances.hd95, dsc=dsc, iou=iou,
            samples=config.metrics_samples, seed=seed, voxel_mm=voxel,
            squared_cd=squared_cd,
        )
        report.validate()
    return {
        "metrics": report.to_dict(),
        "topology_a": topo_a.to_dict(),
        "topology_b": topo_b.to_dict(),
    }


def mesh_info_payload(mesh: TriangleMesh) -> dict:
    topo = topology_report(mesh)
    payload = topo.to_dict()
    payload["euler_characteristic"] = topo.vertex_count - topo.edge_count + topo.face_count
    return payload


# ---------------------------------------------------------------- fixtures and ablation


def fixture_shape(name: str) -> synth.SynthShape:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise InputError(f"unknown fixture {name!r}; choose from {', '.join(sorted(FIXTURES))}")


def reference_mesh(shape: synth.SynthShape, resolution: int = REFERENCE_GRID_RESOLUTION) -> TriangleMesh:
    """Surface of the analytic field, extracted on a padded grid."""
    lower, upper = shape.bounds()
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    pad = 0.05 * (upper - lower)
    grid_lower, grid_upper = lower - pad, upper + pad
    axes = [np.linspace(grid_lower[d], grid_upper[d], resolution) for d in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = shape.sdf(pts).reshape(resolution, resolution, resolution)
    return marching_cubes(ScalarGrid(values, tuple(grid_lower), tuple(grid_upper)))


def _ablation_config(config: Config, keep_scc: bool, keep_adv: bool) -> Config:
    values = config.to_dict()
    if not keep_scc:
        values["lambda_scc"] = 0.0
    if not keep_adv:
        values["lambda_g"] = 0.0
    return Config.from_dict(values)


def _ablate_one(args):
    variant, config_dict, fixture, seed, out_dir = args
    config = Config.from_dict(config_dict)
    shape = fixture_shape(fixture)
    cloud = synth.synth_cloud(shape, config.n_points, mode="surface", seed=seed)
    normalized, transform, _ = prepare_cloud(cloud, config, seed)
    net, _ = fit(normalized, config.train_config(seed=seed))
    mesh = extract(net, transform, config.mc_resolution, threshold=config.mc_threshold)
    if out_dir is not None:
        fileio.save_obj(Path(out_dir) / f"{variant}.obj", mesh)
    reference = reference_mesh(shape)
    distances = surface_distance_metrics(mesh, reference,
                                         samples=config.metrics_samples, seed=seed)
    return variant, distances.cd, distances.hd


def ablate(fixture: str, config: Config, out_dir=None, jobs: int = 1) -> list[tuple[str, float, float]]:
    """Four loss-term variants on identical seeds; rows (variant, cd, hd)."""
    config.validate()
    fixture_shape(fixture)  # validate the name before any work
    seed = config.resolve_seed()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    tasks = [
        (variant, _ablation_config(config, keep_scc, keep_adv).to_dict(),
         fixture, seed, None if out_dir is None else str(out_dir))
        for variant, keep_scc, keep_adv in ABLATION_VARIANTS
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablate_one, tasks))
    else:
        results = [_ablate_one(t) for t in tasks]
    if out_dir is not None:
        save_ablation_csv(Path(out_dir) / "ablation.csv", results)
    return results


def save_ablation_csv(path, rows) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("variant,cd,hd\n")
        for variant, cd, hd in rows:
            f.write(f"{variant},{cd:.17g},{hd:.17g}\n")


# ---------------------------------------------------------------- synth / perturb backends


def synth_cloud_files(shape_name: str, n: int, mode: str, seed: int, out_path) -> None:
    shape = fixture_shape(shape_name)
    cloud = synth.synth_cloud(shape, n, mode=mode, seed=seed)
    fileio.save_cloud(out_path, cloud)


def synth_sweep_files(shape_name: str, n_frames: int, slice_spacing: float,
                      pixel_size: float, out_dir) -> None:
    shape = fixture_shape(shape_name)
    masks, poses = synth.synth_sweep(shape, n_frames, slice_spacing, pixel_size)
    out = Path(out_dir)
    fileio.save_mask_dir(out / "masks", masks)
    fileio.save_poses(out / "poses.csv", poses)
    fileio.save_calibration(out / "calibration.txt", synth.sweep_calibration(pixel_size))


def perturb_pose_file(poses_path, sigma_r: float, sigma_t: float, seed: int, out_path) -> None:
    poses = fileio.load_poses(poses_path)
    noise = synth.Se3Noise(sigma_r=sigma_r, sigma_t=sigma_t, seed=seed)
    perturbed = synth.perturb_poses(poses, noise)
    fileio.save_poses(out_path, perturbed)
    fileio.save_json(str(out_path) + ".json", {
        "source": str(poses_path),
        "sigma_r": sigma_r,
        "sigma_t": sigma_t,
        "seed": seed,
        "frames": int(len(poses)),
    })


def sweep_to_cloud(masks_dir, poses_path, calibration_path, out_path) -> int:
    masks = fileio.load_mask_dir(masks_dir)
    poses = fileio.load_poses(poses_path)
    calibration = fileio.load_calibration(calibration_path)
    cloud = build_cloud_from_sweep(masks, calibration, poses)
    fileio.save_cloud(out_path, cloud)
    return len(cloud.points)
