"""Level-set extraction: grid evaluation, marching cubes, and the occupancy baseline.

The zero level set of a trained network is turned into a triangle mesh by
sampling the field on a regular lattice of cell centers and running the
classic 256-case marching cubes with linear edge interpolation.  Vertices
are created once per lattice edge, so adjacent cells share them and the
result is watertight wherever the surface is closed inside the grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError, NumericalError
from .geometry import NormalizationTransform, PointCloud
from .mc_tables import CORNER_OFFSETS, EDGE_AXES, EDGE_KEY_OFFSETS, EDGE_TABLE, TRI_TABLE
from .network import SdfNetwork, forward_batch

DEFAULT_BOUNDS = ((-1.1, -1.1, -1.1), (1.1, 1.1, 1.1))
MIN_RESOLUTION = 8
WELD_TOLERANCE = 1e-9

_EVAL_CHUNK = 32768


class EmptySurfaceWarning(UserWarning):
    """The scalar field never crosses the threshold inside the grid."""


@dataclass
class ScalarGrid:
    """Scalar samples at the cell centers of a regular lattice.

    ``values[i, j, k]`` is the field at the center of cell ``(i, j, k)``;
    the lattice covers the axis-aligned box ``[lower, upper]`` with
    ``values.shape`` cells per axis, at least ``MIN_RESOLUTION`` each.
    """

    values: np.ndarray
    lower: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BOUNDS[0]))
    upper: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_BOUNDS[1]))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64).reshape(3)
        self.upper = np.asarray(self.upper, dtype=np.float64).reshape(3)
        if self.values.ndim != 3:
            raise InputError(f"grid values must be 3-d, got shape {self.values.shape}")
        if min(self.values.shape) < MIN_RESOLUTION:
            raise InputError(
                f"grid resolution must be >= {MIN_RESOLUTION} per axis, got {self.values.shape}"
            )
        if not np.isfinite(self.values).all():
            raise NumericalError("grid contains non-finite values", stage="mesh")
        if not (self.upper > self.lower).all():
            raise InputError("grid bounds must satisfy upper > lower on every axis")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def cell_size(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.values.shape, dtype=np.float64)

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.values.shape[axis]
        h = (self.upper[axis] - self.lower[axis]) / n
        return self.lower[axis] + (np.arange(n) + 0.5) * h


@dataclass
class TriangleMesh:
    """Indexed triangle mesh; faces are counter-clockwise seen from outside.

    Vertex welding and degenerate-face removal are performed by the
    constructors in this module, not by the type itself, so meshes loaded
    from files may still carry duplicates until passed through
    :func:`weld_mesh`.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces):
            lo, hi = self.faces.min(), self.faces.max()
            if lo < 0 or hi >= len(self.vertices):
                raise InputError(
                    f"face index {lo if lo < 0 else hi} outside vertex range 0..{len(self.vertices) - 1}"
                )

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)


def empty_mesh() -> TriangleMesh:
    return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _drop_degenerate_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    if not len(faces):
        return faces
    distinct = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    faces = faces[distinct]
    if not len(faces):
        return faces
    ab = vertices[faces[:, 1]] - vertices[faces[:, 0]]
    ac = vertices[faces[:, 2]] - vertices[faces[:, 0]]
    area2 = np.linalg.norm(np.cross(ab, ac), axis=1)
    return faces[area2 > 0.0]


def weld_mesh(mesh: TriangleMesh, tolerance: float = WELD_TOLERANCE) -> TriangleMesh:
    """Merge vertices within ``tolerance``, drop unused vertices and
    degenerate faces.  Merging maps every cluster to its lowest-index
    member, so the result is order-deterministic."""
    vertices, faces = mesh.vertices, mesh.faces
    if len(vertices) == 0:
        return empty_mesh()
    remap = np.arange(len(vertices))
    # exact duplicates first: cheap and covers almost everything
    _, first, inverse = np.unique(
        vertices.view([("x", np.float64), ("y", np.float64), ("z", np.float64)]).reshape(-1),
        return_index=True,
        return_inverse=True,
    )
    remap = first[inverse]
    while True:
        keep = np.unique(remap)
        packed = np.searchsorted(keep, remap)
        vertices = mesh.vertices[keep]
        pairs = cKDTree(vertices).query_pairs(tolerance, output_type="ndarray")
        if not len(pairs):
            break
        merge = np.arange(len(vertices))
        # lowest index wins; one linear pass suffices because pairs are sorted
        for a, b in pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]:
            ra, rb = merge[a], merge[b]
            merge[b] = merge[a] = min(ra, rb)
        remap = keep[merge[packed]]
    faces = packed[faces] if len(faces) else faces
    faces = _drop_degenerate_faces(vertices, faces)
    used = np.zeros(len(vertices), dtype=bool)
    used[faces.reshape(-1)] = True
    if not used.all() and len(faces):
        new_index = np.cumsum(used) - 1
        vertices = vertices[used]
        faces = new_index[faces]
    elif not len(faces):
        return empty_mesh()
    return TriangleMesh(vertices, faces)


def _case_indices(values: np.ndarray, threshold: float) -> np.ndarray:
    below = values < threshold
    nx, ny, nz = values.shape
    ci = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.uint8)
    for corner, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        ci |= below[dx : dx + nx - 1, dy : dy + ny - 1, dz : dz + nz - 1].astype(np.uint8) << corner
    return ci


def marching_cubes(grid: ScalarGrid, threshold: float = 0.0) -> TriangleMesh:
    """Extract the ``threshold`` level set of ``grid`` as a welded mesh.

    Vertices are keyed by the lattice edge they sit on, so neighbouring
    cells share them exactly.  A field with no sign change produces an
    empty mesh and an :class:`EmptySurfaceWarning`, never an error.
    """
    values = grid.values
    ci = _case_indices(values, float(threshold))
    edge_mask = EDGE_TABLE.astype(np.uint16)[ci]
    ai, aj, ak = np.nonzero(edge_mask)
    if len(ai) == 0:
        warnings.warn(
            "field does not cross the threshold inside the grid; returning an empty mesh",
            EmptySurfaceWarning,
            stacklevel=2,
        )
        return empty_mesh()
    active_mask = edge_mask[ai, aj, ak]
    active_case = ci[ai, aj, ak]

    nx, ny, nz = values.shape
    ki = ai[:, None] + EDGE_KEY_OFFSETS[None, :, 0]
    kj = aj[:, None] + EDGE_KEY_OFFSETS[None, :, 1]
    kk = ak[:, None] + EDGE_KEY_OFFSETS[None, :, 2]
    packed = ((ki * ny + kj) * nz + kk) * 3 + EDGE_AXES[None, :]
    edge_set = (active_mask[:, None] >> np.arange(12)[None, :]) & 1 > 0
    unique_keys = np.unique(packed[edge_set])

    axis = unique_keys % 3
    cell = unique_keys // 3
    ui = cell // (ny * nz)
    uj = (cell // nz) % ny
    uk = cell % nz
    v0 = values[ui, uj, uk]
    step = np.zeros((len(unique_keys), 3), dtype=np.int64)
    step[np.arange(len(unique_keys)), axis] = 1
    v1 = values[ui + step[:, 0], uj + step[:, 1], uk + step[:, 2]]
    denom = v1 - v0
    mu = np.where(denom != 0.0, (threshold - v0) / np.where(denom != 0.0, denom, 1.0), 0.0)
    h = grid.cell_size
    verts = np.stack(
        [
            grid.lower[0] + (ui + 0.5) * h[0],
            grid.lower[1] + (uj + 0.5) * h[1],
            grid.lower[2] + (uk + 0.5) * h[2],
        ],
        axis=1,
    )
    verts[np.arange(len(verts)), axis] += mu * h[axis]

    vid = np.searchsorted(unique_keys, packed)
    rows = TRI_TABLE[active_case]
    blocks = []
    for t in range(0, 16, 3):
        m = rows[:, t] >= 0
        if not m.any():
            break
        cells = np.nonzero(m)[0]
        blocks.append(vid[cells[:, None], rows[cells][:, t : t + 3]])
    faces = np.concatenate(blocks, axis=0)
    # the classic tables wind clockwise under our below-threshold convention,
    # so reverse to make face normals point out of the below-threshold region
    faces = faces[:, ::-1]
    return weld_mesh(TriangleMesh(verts, faces))


def eval_grid(net: SdfNetwork, resolution: int, bounds=DEFAULT_BOUNDS) -> ScalarGrid:
    """Evaluate ``net`` at the cell centers of a cubic lattice over ``bounds``."""
    if resolution < MIN_RESOLUTION:
        raise InputError(f"grid resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    lower = np.asarray(bounds[0], dtype=np.float64).reshape(3)
    upper = np.asarray(bounds[1], dtype=np.float64).reshape(3)
    if not (upper > lower).all():
        raise InputError("grid bounds must satisfy upper > lower on every axis")
    h = (upper - lower) / resolution
    centers = [lower[a] + (np.arange(resolution) + 0.5) * h[a] for a in range(3)]
    values = np.empty((resolution, resolution, resolution), dtype=np.float64)
    yy, zz = np.meshgrid(centers[1], centers[2], indexing="ij")
    slab = np.empty((resolution * resolution, 3), dtype=np.float64)
    slab[:, 1] = yy.reshape(-1)
    slab[:, 2] = zz.reshape(-1)
    for i in range(resolution):
        slab[:, 0] = centers[0][i]
        out = np.empty(len(slab), dtype=np.float64)
        for start in range(0, len(slab), _EVAL_CHUNK):
            stop = min(start + _EVAL_CHUNK, len(slab))
            out[start:stop] = forward_batch(net, slab[start:stop])
        if not np.isfinite(out).all():
            raise NumericalError("network produced non-finite grid values", stage="mesh")
        values[i] = out.reshape(resolution, resolution)
    return ScalarGrid(values, lower, upper)


def denormalize_mesh(mesh: TriangleMesh, transform: NormalizationTransform) -> TriangleMesh:
    """Map a mesh from the normalized frame back to world coordinates."""
    return TriangleMesh(transform.invert(mesh.vertices), mesh.faces.copy())


def extract(
    net: SdfNetwork,
    transform: NormalizationTransform,
    resolution: int,
    bounds=DEFAULT_BOUNDS,
    threshold: float = 0.0,
) -> TriangleMesh:
    """Grid evaluation, marching cubes, and denormalization in one call."""
    grid = eval_grid(net, resolution, bounds)
    mesh = marching_cubes(grid, threshold)
    return denormalize_mesh(mesh, transform)


def flip_orientation(mesh: TriangleMesh) -> TriangleMesh:
    """Reverse the winding of every face."""
    if mesh.is_empty:
        return empty_mesh()
    return TriangleMesh(mesh.vertices.copy(), mesh.faces[:, ::-1].copy())


def iso_baseline(cloud: PointCloud, cell: float) -> TriangleMesh:
    """Mesh the occupancy grid of ``cloud`` directly at a given cell size.

    A cell is occupied when any point falls inside it; the 0/1 field is
    contoured at 0.5.  This is the no-learning reference surface.
    """
    if cell <= 0:
        raise InputError(f"cell size must be positive, got {cell}")
    cloud.require_nonempty("iso_baseline")
    pts = cloud.points
    lo_cell = np.floor(pts.min(axis=0) / cell).astype(np.int64) - 2
    hi_cell = np.floor(pts.max(axis=0) / cell).astype(np.int64) + 3
    shortfall = np.maximum(MIN_RESOLUTION - (hi_cell - lo_cell), 0)
    lo_cell -= (shortfall + 1) // 2
    hi_cell += shortfall // 2
    shape = hi_cell - lo_cell
    occupancy = np.zeros(shape, dtype=np.float64)
    idx = np.floor(pts / cell).astype(np.int64) - lo_cell
    occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0
    grid = ScalarGrid(occupancy, lo_cell * cell, hi_cell * cell)
    # occupied cells sit above the threshold, so the raw winding faces inward
    return flip_orientation(marching_cubes(grid, threshold=0.5))
