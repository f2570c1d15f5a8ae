"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 internal
invariant violation.  Failures print ``error [stage]: message`` on stderr.
Seed precedence everywhere: --seed flag, then config file, then the
FUNSR_SEED environment variable, then 0.
"""

from __future__ import annotations

import json
import sys

import click

from . import __version__, fileio, runner
from .config import Config, load_config, parse_value
from .errors import PullmeshError


def _fail(exc: PullmeshError) -> None:
    click.echo(f"error [{exc.stage or 'run'}]: {exc}", err=True)
    sys.exit(exc.exit_code)


def _collect_overrides(sets, **flags) -> dict:
    """Raw-string overrides from repeated --set plus dedicated flags."""
    overrides = {}
    for item in sets or ():
        if "=" not in item:
            raise click.UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = raw
    for key, value in flags.items():
        if value is not None:
            overrides[key] = str(value)
    return overrides


def _config_from(config_path, sets, **flags) -> Config:
    return load_config(config_path, overrides=_collect_overrides(sets, **flags))


_config_option = click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="Flat key = value config file.")
_set_option = click.option(
    "--set", "sets", multiple=True, metavar="KEY=VALUE",
    help="Override one config key (repeatable).")
_seed_option = click.option("--seed", type=int, default=None, help="Random seed.")


@click.group()
@click.version_option(version=__version__, prog_name="pullmesh")
def main():
    """Reconstruct watertight surfaces from point clouds or tracked sweeps."""


@main.command()
@click.option("--cloud", "cloud_path", type=click.Path(), default=None,
              help="Input point cloud (.xyz or .ply).")
@click.option("--masks", "masks_dir", type=click.Path(), default=None,
              help="Directory of frame_NNNNNN.pgm slice masks.")
@click.option("--poses", "poses_path", type=click.Path(), default=None,
              help="Tracking poses CSV (frame index + 16 row-major entries).")
@click.option("--calibration", "calibration_path", type=click.Path(), default=None,
              help="4x4 calibration matrix, 16 values in a text file.")
@click.option("--from-manifest", "manifest_path", type=click.Path(), default=None,
              help="Re-run a recorded reconstruction from its manifest.")
@click.option("--out", "-o", "out_dir", type=click.Path(), required=True,
              help="Output directory.")
@_config_option
@_set_option
@_seed_option
@click.option("--iterations", type=int, default=None, help="Training iterations.")
@click.option("--batch-size", type=int, default=None, help="Training batch size.")
@click.option("--mc-resolution", type=int, default=None, help="Extraction grid resolution.")
@click.option("--dump-queries", is_flag=True,
              help="Also write the query pool (queries.xyz) and its nearest-point "
                   "indices (targets.csv).")
@click.option("--quiet", is_flag=True, help="Suppress the progress line.")
def reconstruct(cloud_path, masks_dir, poses_path, calibration_path, manifest_path,
                out_dir, config_path, sets, seed, iterations, batch_size,
                mc_resolution, dump_queries, quiet):
    """Train a signed-distance field on the input and extract its surface."""
    progress = None
    if not quiet and sys.stderr.isatty():
        def progress(step, report):
            if step % 100 == 0:
                click.echo(f"\rstep {step}  total_g {report.total_g:.6f}", err=True, nl=False)
    try:
        if manifest_path is not None:
            if cloud_path or masks_dir or poses_path or calibration_path:
                raise click.UsageError("--from-manifest replaces the other input options")
            manifest = runner.reconstruct_from_manifest(manifest_path, out_dir, progress=progress)
        else:
            config = _config_from(config_path, sets, seed=seed, iterations=iterations,
                                  batch_size=batch_size, mc_resolution=mc_resolution)
            manifest = runner.reconstruct(
                config, out_dir, cloud_path=cloud_path, masks_dir=masks_dir,
                poses_path=poses_path, calibration_path=calibration_path,
                progress=progress, dump_queries=dump_queries)
    except PullmeshError as exc:
        _fail(exc)
    if progress is not None:
        click.echo("", err=True)
    click.echo(f"mesh: {manifest['mesh']['vertices']} vertices, "
               f"{manifest['mesh']['faces']} faces -> {out_dir}")


@main.command()
@click.argument("mesh_a", type=click.Path())
@click.argument("mesh_b", type=click.Path())
@_config_option
@_set_option
@_seed_option
@click.option("--samples", type=int, default=None, help="Surface sample count per mesh.")
@click.option("--voxel", type=float, default=None, help="Overlap voxel edge length.")
@click.option("--squared-cd", is_flag=True, help="Report the squared-distance Chamfer variant.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the JSON report here instead of stdout.")
def metrics(mesh_a, mesh_b, config_path, sets, seed, samples, voxel, squared_cd, out_path):
    """Distance, overlap, and topology metrics between two meshes."""
    try:
        config = _config_from(config_path, sets, seed=seed, metrics_samples=samples,
                              metrics_voxel=voxel)
        with runner.stage("io"):
            a = fileio.load_mesh(mesh_a)
            b = fileio.load_mesh(mesh_b)
        payload = runner.metrics_payload(a, b, config, seed=config.resolve_seed(),
                                         squared_cd=squared_cd)
    except PullmeshError as exc:
        _fail(exc)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path is None:
        click.echo(text)
    else:
        with open(out_path, "w", newline="\n") as f:
            f.write(text + "\n")


@main.command("mesh-info")
@click.argument("mesh_path", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of text.")
def mesh_info(mesh_path, as_json):
    """Vertex/edge/face counts, components, Euler characteristic, genus."""
    try:
        with runner.stage("io"):
            mesh = fileio.load_mesh(mesh_path)
        info = runner.mesh_info_payload(mesh)
    except PullmeshError as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps(info, indent=2, sort_keys=True))
        return
    click.echo(f"vertices: {info['vertex_count']}")
    click.echo(f"edges: {info['edge_count']}")
    click.echo(f"faces: {info['face_count']}")
    click.echo(f"components: {info['connected_components']}")
    click.echo(f"euler characteristic: {info['euler_characteristic']}")
    click.echo(f"genus per component: {info['genus_per_component']}")
    click.echo(f"watertight: {'yes' if info['watertight'] else 'no'}")


@main.command()
@click.option("--shape", type=click.Choice(sorted(runner.FIXTURES)), required=True)
@click.option("--mode", type=click.Choice(["volumetric", "surface", "sweep"]),
              default="volumetric", show_default=True)
@click.option("--n", type=int, default=5000, show_default=True,
              help="Point count (cloud modes).")
@click.option("--frames", type=int, default=32, show_default=True,
              help="Slice count (sweep mode).")
@click.option("--spacing", type=float, default=0.04, show_default=True,
              help="Slice spacing (sweep mode).")
@click.option("--pixel-size", type=float, default=0.02, show_default=True,
              help="Pixel edge length (sweep mode).")
@_seed_option
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Cloud file (.xyz/.ply) or sweep output directory.")
def synth(shape, mode, n, frames, spacing, pixel_size, seed, out_path):
    """Generate a synthetic test fixture: a point cloud or a tracked sweep."""
    resolved = seed if seed is not None else Config().resolve_seed()
    try:
        if mode == "sweep":
            runner.synth_sweep_files(shape, frames, spacing, pixel_size, out_path)
        else:
            runner.synth_cloud_files(shape, n, mode, resolved, out_path)
    except PullmeshError as exc:
        _fail(exc)
    click.echo(f"wrote {mode} fixture for {shape} -> {out_path}")


@main.command()
@click.argument("poses_path", type=click.Path())
@click.option("--sigma-r", type=float, required=True, help="Rotation noise scale (radians).")
@click.option("--sigma-t", type=float, required=True, help="Translation noise scale.")
@_seed_option
@click.option("--out", "out_path", type=click.Path(), required=True)
def perturb(poses_path, sigma_r, sigma_t, seed, out_path):
    """Apply seeded rigid-motion noise to a tracking-pose file."""
    resolved = seed if seed is not None else Config().resolve_seed()
    try:
        runner.perturb_pose_file(poses_path, sigma_r, sigma_t, resolved, out_path)
    except PullmeshError as exc:
        _fail(exc)
    click.echo(f"wrote perturbed poses -> {out_path}")


@main.command()
@click.option("--fixture", type=click.Choice(sorted(runner.FIXTURES)), required=True)
@_config_option
@_set_option
@_seed_option
@click.option("--out", "-o", "out_dir", type=click.Path(), default=None,
              help="Directory for per-variant meshes and ablation.csv.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Worker processes across the independent variant runs.")
def ablate(fixture, config_path, sets, seed, out_dir, jobs):
    """Train baseline, each constraint alone, and the full model; compare."""
    try:
        config = _config_from(config_path, sets, seed=seed)
        rows = runner.ablate(fixture, config, out_dir=out_dir, jobs=jobs)
    except PullmeshError as exc:
        _fail(exc)
    click.echo("variant,cd,hd")
    for variant, cd, hd in rows:
        click.echo(f"{variant},{cd:.17g},{hd:.17g}")


@main.command("sweep-to-cloud")
@click.option("--masks", "masks_dir", type=click.Path(), required=True)
@click.option("--poses", "poses_path", type=click.Path(), required=True)
@click.option("--calibration", "calibration_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output cloud (.xyz or .ply).")
def sweep_to_cloud(masks_dir, poses_path, calibration_path, out_path):
    """Lift segmented slice masks through their poses into a point cloud."""
    try:
        n = runner.sweep_to_cloud(masks_dir, poses_path, calibration_path, out_path)
    except PullmeshError as exc:
        _fail(exc)
    click.echo(f"wrote {n} points -> {out_path}")


if __name__ == "__main__":
    main()
