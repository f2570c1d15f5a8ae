"""Watertight surface reconstruction from volumetric point clouds.

A point cloud (loaded directly, or built from a stack of segmented
ultrasound-style slices with tracking poses) is fitted with a small neural
signed-distance field trained by pulling query points onto the cloud,
regularized by a sign-consistency term and an adversarial on-surface
constraint.  The zero level set is then extracted with marching cubes and
scored with surface-distance, overlap, topology, and curvature metrics.
"""

__version__ = "0.1.0"

from .config import Config, load_config
from .errors import (
    DegenerateCloudError,
    EmptyCloudError,
    InputError,
    InternalError,
    NumericalError,
    PullmeshError,
)
from .evaluation import (
    CurvatureReport,
    MetricReport,
    SurfaceDistances,
    TopologyReport,
    curvature_report,
    point_mesh_distances,
    sample_surface,
    surface_distance_metrics,
    topology_report,
    volumetric_overlap,
)
from .geometry import (
    NormalizationTransform,
    PointCloud,
    build_cloud_from_sweep,
    farthest_point_sample,
    normalize_cloud,
    voxel_downsample,
)
from .meshing import (
    EmptySurfaceWarning,
    ScalarGrid,
    TriangleMesh,
    eval_grid,
    extract,
    iso_baseline,
    marching_cubes,
    weld_mesh,
)
from .network import (
    Discriminator,
    PositionalEncoding,
    SdfNetwork,
    forward_batch,
    forward_with_input_gradient,
    init_geometric,
)
from .sampling import QuerySet, build_query_set, compute_local_sigma, generate_queries
from .synth import (
    Se3Noise,
    SynthShape,
    inject_outliers,
    perturb_poses,
    se3_exp,
    sphere,
    synth_cloud,
    synth_sweep,
    sweep_calibration,
    torus,
    two_spheres,
)
from .training import (
    LossReport,
    TrainConfig,
    adversarial_losses,
    fit,
    loss_scc,
    loss_self,
    project_queries,
    sign_census,
)

__all__ = [
    "__version__",
    "Config",
    "load_config",
    "PullmeshError",
    "InputError",
    "EmptyCloudError",
    "DegenerateCloudError",
    "NumericalError",
    "InternalError",
    "PointCloud",
    "NormalizationTransform",
    "build_cloud_from_sweep",
    "voxel_downsample",
    "farthest_point_sample",
    "normalize_cloud",
    "QuerySet",
    "compute_local_sigma",
    "generate_queries",
    "build_query_set",
    "SdfNetwork",
    "Discriminator",
    "PositionalEncoding",
    "init_geometric",
    "forward_batch",
    "forward_with_input_gradient",
    "TrainConfig",
    "LossReport",
    "fit",
    "loss_self",
    "loss_scc",
    "adversarial_losses",
    "project_queries",
    "sign_census",
    "ScalarGrid",
    "TriangleMesh",
    "EmptySurfaceWarning",
    "marching_cubes",
    "eval_grid",
    "extract",
    "weld_mesh",
    "iso_baseline",
    "SurfaceDistances",
    "MetricReport",
    "TopologyReport",
    "CurvatureReport",
    "surface_distance_metrics",
    "volumetric_overlap",
    "topology_report",
    "curvature_report",
    "sample_surface",
    "point_mesh_distances",
    "SynthShape",
    "sphere",
    "torus",
    "two_spheres",
    "synth_cloud",
    "synth_sweep",
    "sweep_calibration",
    "Se3Noise",
    "se3_exp",
    "perturb_poses",
    "inject_outliers",
]
