"""Mesh fidelity, topology, and smoothness metrics.

Distance metrics compare area-weighted surface samples against exact
point-to-triangle distances.  Volume overlap voxelizes watertight meshes
with a parity ray test.  Topology comes from union-find over face
adjacency, and smoothness from discrete Gaussian curvature with a kernel
density summary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError
from .meshing import TriangleMesh, face_areas

_PAIR_CHUNK = 1 << 21
_GRAZE_EPS = 1e-9
_MAX_JITTER_ATTEMPTS = 12

DEFAULT_CURVATURE_RADII = (0.0045, 0.0195, 0.0255)


class SurfaceDistances(NamedTuple):
    asd: float
    cd: float
    hd: float
    hd95: float


@dataclass
class MetricReport:
    """Distance and overlap metrics in the meshes' native units (mm)."""

    asd_mm: float
    cd_mm: float
    hd_mm: float
    hd95_mm: float
    dsc: float
    iou: float
    samples: int
    seed: int
    voxel_mm: float
    squared_cd: bool = False

    def validate(self) -> None:
        if not (self.hd_mm >= self.hd95_mm >= 0.0):
            raise InputError(f"hd {self.hd_mm} < hd95 {self.hd95_mm}")
        for name in ("dsc", "iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} out of range: {v}")
        if abs(self.dsc - 2.0 * self.iou / (1.0 + self.iou)) > 1e-9:
            raise InputError("dsc and iou are inconsistent")

    def to_dict(self) -> dict:
        return {
            "asd_mm": self.asd_mm,
            "cd_mm": self.cd_mm,
            "hd_mm": self.hd_mm,
            "hd95_mm": self.hd95_mm,
            "dsc": self.dsc,
            "iou": self.iou,
            "samples": self.samples,
            "seed": self.seed,
            "voxel_mm": self.voxel_mm,
            "squared_cd": self.squared_cd,
        }

    @staticmethod
    def from_dict(d: dict) -> "MetricReport":
        return MetricReport(**{k: d[k] for k in MetricReport.__dataclass_fields__})


@dataclass
class TopologyReport:
    connected_components: int
    genus_per_component: list
    watertight: bool
    vertex_count: int = 0
    edge_count: int = 0
    face_count: int = 0

    def to_dict(self) -> dict:
        return {
            "connected_components": self.connected_components,
            "genus_per_component": list(self.genus_per_component),
            "watertight": self.watertight,
            "vertex_count": self.vertex_count,
            "edge_count": self.edge_count,
            "face_count": self.face_count,
        }


@dataclass
class CurvatureReport:
    curvatures: np.ndarray
    radius: float
    bandwidth: float
    kde_grid: np.ndarray
    kde_density: np.ndarray


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` points uniformly by area from the mesh surface."""
    if mesh.is_empty:
        raise InputError("cannot sample an empty mesh")
    if n < 1:
        raise InputError(f"sample count must be >= 1, got {n}")
    areas = face_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise InputError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(areas), size=n, p=areas / total)
    a = mesh.vertices[mesh.faces[chosen, 0]]
    b = mesh.vertices[mesh.faces[chosen, 1]]
    c = mesh.vertices[mesh.faces[chosen, 2]]
    u = rng.random(n)
    v = rng.random(n)
    fold = u + v > 1.0
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def _point_segment_sq(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    t = np.where(denom > 0, ((p - a) * ab).sum(axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    d = p - (a + t[:, None] * ab)
    return (d * d).sum(axis=1)


def point_triangle_sq_distance(
    p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Exact squared distance from each point to its paired triangle.

    Region-based closest-point computation; degenerate triangles fall back
    to the nearest of the three edges, which equals the triangle as a set.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(axis=1)
    d2 = (ac * ap).sum(axis=1)
    bp = p - b
    d3 = (ab * bp).sum(axis=1)
    d4 = (ac * bp).sum(axis=1)
    cp = p - c
    d5 = (ab * cp).sum(axis=1)
    d6 = (ac * cp).sum(axis=1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def settle(mask, value):
        fresh = mask & ~done
        closest[fresh] = value[fresh] if value.ndim == 2 else value
        done[fresh] = True

    settle((d1 <= 0) & (d2 <= 0), a)
    settle((d3 >= 0) & (d4 <= d3), b)
    settle((d6 >= 0) & (d5 <= d6), c)
    v_ab = np.divide(d1, d1 - d3, out=np.zeros_like(d1), where=(d1 - d3) != 0)
    settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)
    w_ac = np.divide(d2, d2 - d6, out=np.zeros_like(d2), where=(d2 - d6) != 0)
    settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)
    num_bc = d4 - d3
    den_bc = (d4 - d3) + (d5 - d6)
    w_bc = np.divide(num_bc, den_bc, out=np.zeros_like(num_bc), where=den_bc != 0)
    settle((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc[:, None] * (c - b))

    denom = va + vb + vc
    interior = ~done & (denom > 0)
    if interior.any():
        v = vb[interior] / denom[interior]
        w = vc[interior] / denom[interior]
        closest[interior] = a[interior] + v[:, None] * ab[interior] + w[:, None] * ac[interior]
        done[interior] = True
    if not done.all():
        rest = ~done
        sq = np.minimum(
            _point_segment_sq(p[rest], a[rest], b[rest]),
            np.minimum(
                _point_segment_sq(p[rest], a[rest], c[rest]),
                _point_segment_sq(p[rest], b[rest], c[rest]),
            ),
        )
        d = p - closest
        out = (d * d).sum(axis=1)
        out[rest] = sq
        return out
    d = p - closest
    return (d * d).sum(axis=1)


class _TriangleSet:
    """Triangle soup with a centroid tree for pruned exact queries."""

    def __init__(self, mesh: TriangleMesh):
        self.a = mesh.vertices[mesh.faces[:, 0]]
        self.b = mesh.vertices[mesh.faces[:, 1]]
        self.c = mesh.vertices[mesh.faces[:, 2]]
        self.centroids = (self.a + self.b + self.c) / 3.0
        spread = np.stack(
            [
                np.linalg.norm(self.a - self.centroids, axis=1),
                np.linalg.norm(self.b - self.centroids, axis=1),
                np.linalg.norm(self.c - self.centroids, axis=1),
            ]
        )
        self.radius = spread.max(axis=0)
        self.max_radius = float(self.radius.max()) if len(self.radius) else 0.0
        self.tree = cKDTree(self.centroids)

    def exact(self, points: np.ndarray, tri_idx: np.ndarray) -> np.ndarray:
        return point_triangle_sq_distance(
            points, self.a[tri_idx], self.b[tri_idx], self.c[tri_idx]
        )


def point_mesh_distances(points: np.ndarray, mesh: TriangleMesh, brute_force: bool = False) -> np.ndarray:
    """Exact unsigned distance from each point to the mesh surface."""
    if mesh.is_empty:
        raise InputError("cannot measure distance to an empty mesh")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tris = _TriangleSet(mesh)
    n_faces = len(tris.a)
    if brute_force:
        best = np.full(len(points), np.inf)
        for start in range(0, n_faces, 1024):
            stop = min(start + 1024, n_faces)
            idx = np.arange(start, stop)
            for p_start in range(0, len(points), 4096):
                p_stop = min(p_start + 4096, len(points))
                block = points[p_start:p_stop]
                rep = np.repeat(block, len(idx), axis=0)
                tri = np.tile(idx, len(block))
                sq = tris.exact(rep, tri).reshape(len(block), len(idx))
                best[p_start:p_stop] = np.minimum(best[p_start:p_stop], sq.min(axis=1))
        return np.sqrt(best)

    _, seed_idx = tris.tree.query(points)
    upper = np.sqrt(tris.exact(points, seed_idx))
    groups = tris.tree.query_ball_point(points, upper + tris.max_radius + 1e-12)
    counts = np.fromiter((len(g) for g in groups), dtype=np.int64, count=len(groups))
    point_ids = np.repeat(np.arange(len(points)), counts)
    tri_ids = np.fromiter(
        (t for g in groups for t in g), dtype=np.int64, count=int(counts.sum())
    )
    best_sq = upper**2
    for start in range(0, len(point_ids), _PAIR_CHUNK):
        stop = min(start + _PAIR_CHUNK, len(point_ids))
        pid = point_ids[start:stop]
        sq = tris.exact(points[pid], tri_ids[start:stop])
        np.minimum.at(best_sq, pid, sq)
    return np.sqrt(best_sq)


def _mesh_sort_key(mesh: TriangleMesh) -> tuple:
    return (mesh.n_vertices, mesh.n_faces, mesh.vertices.tobytes(), mesh.faces.tobytes())


def nearest_rank_percentile(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th order statistic."""
    values = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if len(values) == 0:
        raise InputError("percentile of an empty sample")
    rank = max(1, math.ceil(pct / 100.0 * len(values)))
    return float(values[rank - 1])


def surface_distance_metrics(
    predicted: TriangleMesh,
    reference: TriangleMesh,
    samples: int = 100000,
    seed: int = 0,
    squared_cd: bool = False,
) -> SurfaceDistances:
    """Sampled symmetric surface distances between two meshes.

    Both directions draw ``samples`` area-weighted points and measure exact
    point-to-surface distances.  ASD and CD are the average of the two
    directed means (CD optionally of squared distances), HD the larger
    directed maximum, HD95 the larger directed nearest-rank 95th percentile.
    """
    for name, mesh in (("predicted", predicted), ("reference", reference)):
        if mesh.is_empty:
            raise InputError(f"{name} mesh is empty")
    # seed assignment follows a canonical mesh order so that swapping the
    # arguments reproduces the same sample draws and the result is exactly
    # symmetric
    swap = _mesh_sort_key(predicted) > _mesh_sort_key(reference)
    seed_pred, seed_ref = (seed + 1, seed) if swap else (seed, seed + 1)
    d_ab = point_mesh_distances(sample_surface(predicted, samples, seed_pred), reference)
    d_ba = point_mesh_distances(sample_surface(reference, samples, seed_ref), predicted)
    asd = 0.5 * (d_ab.mean() + d_ba.mean())
    if squared_cd:
        cd = 0.5 * ((d_ab**2).mean() + (d_ba**2).mean())
    else:
        cd = asd
    hd = max(d_ab.max(), d_ba.max())
    hd95 = max(nearest_rank_percentile(d_ab, 95.0), nearest_rank_percentile(d_ba, 95.0))
    return SurfaceDistances(float(asd), float(cd), float(hd), float(hd95))


def _mesh_edges(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique sorted edges, inverse map (3F,), and per-edge face counts."""
    raw = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(raw, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.reshape(-1), counts


def is_watertight(mesh: TriangleMesh) -> bool:
    if mesh.is_empty:
        return False
    _, _, counts = _mesh_edges(mesh.faces)
    return bool((counts == 2).all())


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def topology_report(mesh: TriangleMesh) -> TopologyReport:
    """Connected components, genus, and watertightness of a mesh.

    Components are joined by shared edges; a component with any edge not
    shared by exactly two faces is reported as "non-manifold" in place of
    a genus.
    """
    if mesh.is_empty:
        return TopologyReport(0, [], False, mesh.n_vertices, 0, 0)
    faces = mesh.faces
    edges, inverse, counts = _mesh_edges(faces)
    face_of = np.repeat(np.arange(len(faces)), 3)
    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    sorted_faces = face_of[order]
    uf = _UnionFind(len(faces))
    boundaries = np.nonzero(np.diff(sorted_edges))[0] + 1
    for group in np.split(sorted_faces, boundaries):
        for other in group[1:]:
            uf.union(int(group[0]), int(other))
    roots = np.fromiter((uf.find(i) for i in range(len(faces))), dtype=np.int64)
    labels, face_comp = np.unique(roots, return_inverse=True)

    genus: list = []
    for comp in range(len(labels)):
        comp_faces = faces[face_comp == comp]
        comp_vertices = np.unique(comp_faces)
        comp_edge_ids = np.unique(inverse.reshape(-1, 3)[face_comp == comp])
        closed = bool((counts[comp_edge_ids] == 2).all())
        chi = len(comp_vertices) - len(comp_edge_ids) + len(comp_faces)
        if not closed or (2 - chi) % 2 != 0:
            genus.append("non-manifold")
        else:
            genus.append((2 - chi) // 2)
    return TopologyReport(
        connected_components=len(labels),
        genus_per_component=genus,
        watertight=bool((counts == 2).all()),
        vertex_count=mesh.n_vertices,
        edge_count=len(edges),
        face_count=mesh.n_faces,
    )


def _column_crossings(
    y0: float, z0: float, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, bool]:
    """x of every +x-ray crossing through column point (y0, z0).

    Returns (crossings, reliable); unreliable means some triangle was hit
    within the grazing tolerance of its boundary or edge-on.
    """
    e1y = b[:, 1] - a[:, 1]
    e1z = b[:, 2] - a[:, 2]
    e2y = c[:, 1] - a[:, 1]
    e2z = c[:, 2] - a[:, 2]
    py = y0 - a[:, 1]
    pz = z0 - a[:, 2]
    denom = e1y * e2z - e1z * e2y
    scale_sq = np.maximum(
        np.maximum(e1y * e1y + e1z * e1z, e2y * e2y + e2z * e2z), 1e-300
    )
    edge_on = np.abs(denom) <= _GRAZE_EPS * scale_sq
    safe = np.where(edge_on, 1.0, denom)
    s = (py * e2z - pz * e2y) / safe
    t = (e1y * pz - e1z * py) / safe
    margin = np.minimum(np.minimum(s, t), 1.0 - s - t)
    hit = ~edge_on & (margin > _GRAZE_EPS)
    graze = ~edge_on & (np.abs(margin) <= _GRAZE_EPS)
    reliable = not bool(graze.any())
    if reliable and edge_on.any():
        # a ray parallel to a triangle only matters if it passes within the
        # tolerance of the triangle's projected outline
        point = np.array([y0, z0])
        yz = np.stack([np.stack([a[edge_on, 1], a[edge_on, 2]], 1),
                       np.stack([b[edge_on, 1], b[edge_on, 2]], 1),
                       np.stack([c[edge_on, 1], c[edge_on, 2]], 1)])
        tol_sq = _GRAZE_EPS * np.sqrt(scale_sq[edge_on])
        for i0, i1 in ((0, 1), (1, 2), (2, 0)):
            seg_sq = _point_segment_sq_2d(point, yz[i0], yz[i1])
            if (seg_sq <= tol_sq * tol_sq).any():
                reliable = False
                break
    xs = a[hit, 0] + s[hit] * (b[hit, 0] - a[hit, 0]) + t[hit] * (c[hit, 0] - a[hit, 0])
    return np.sort(xs), reliable


def _point_segment_sq_2d(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = (ab * ab).sum(axis=1)
    t = np.where(denom > 0, ((p[None, :] - a) * ab).sum(axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    d = p[None, :] - (a + t[:, None] * ab)
    return (d * d).sum(axis=1)


def _voxelize(mesh: TriangleMesh, lower: np.ndarray, shape: np.ndarray, voxel: float) -> np.ndarray:
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    nx, ny, nz = (int(v) for v in shape)
    xs = lower[0] + (np.arange(nx) + 0.5) * voxel
    inside = np.zeros((nx, ny, nz), dtype=bool)
    for jy in range(ny):
        y0 = lower[1] + (jy + 0.5) * voxel
        for jz in range(nz):
            z0 = lower[2] + (jz + 0.5) * voxel
            yq, zq = y0, z0
            for attempt in range(_MAX_JITTER_ATTEMPTS):
                crossings, reliable = _column_crossings(yq, zq, a, b, c)
                if reliable:
                    break
                # deterministic jitter, well below a voxel, grows per attempt
                yq = y0 + voxel * 1e-6 * (attempt + 1)
                zq = z0 + voxel * 1.618e-6 * (attempt + 1)
            behind = len(crossings) - np.searchsorted(crossings, xs, side="right")
            inside[:, jy, jz] = (behind % 2) == 1
    return inside


def volumetric_overlap(
    predicted: TriangleMesh, reference: TriangleMesh, voxel: float
) -> tuple[float, float]:
    """Dice and Jaccard overlap of two watertight mesh interiors."""
    if voxel <= 0:
        raise InputError(f"voxel size must be positive, got {voxel}")
    for name, mesh in (("predicted", predicted), ("reference", reference)):
        if mesh.is_empty:
            raise InputError(f"{name} mesh is empty")
        if not is_watertight(mesh):
            raise InputError(f"{name} mesh is not watertight; volume overlap undefined")
    lower = np.minimum(predicted.vertices.min(axis=0), reference.vertices.min(axis=0)) - voxel
    upper = np.maximum(predicted.vertices.max(axis=0), reference.vertices.max(axis=0)) + voxel
    shape = np.maximum(np.ceil((upper - lower) / voxel).astype(np.int64), 1)
    in_p = _voxelize(predicted, lower, shape, voxel)
    in_r = _voxelize(reference, lower, shape, voxel)
    inter = int((in_p & in_r).sum())
    union = int((in_p | in_r).sum())
    if union == 0:
        raise InputError("no interior voxels at this voxel size; decrease it")
    iou = inter / union
    dsc = 2 * inter / (in_p.sum() + in_r.sum())
    return float(dsc), float(iou)


def _corner_angles(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-face corner angles (F,3) and face areas (F,)."""
    v = mesh.vertices
    f = mesh.faces
    p = v[f]
    angles = np.empty((len(f), 3))
    for corner in range(3):
        e1 = p[:, (corner + 1) % 3] - p[:, corner]
        e2 = p[:, (corner + 2) % 3] - p[:, corner]
        num = (e1 * e2).sum(axis=1)
        den = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
        angles[:, corner] = np.arccos(np.clip(num / np.maximum(den, 1e-300), -1.0, 1.0))
    areas = face_areas(mesh)
    return angles, areas


def _mixed_voronoi_areas(mesh: TriangleMesh, angles: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """Meyer-style mixed area per vertex: Voronoi inside non-obtuse
    triangles, area/2 at the obtuse corner and area/4 elsewhere."""
    v = mesh.vertices
    f = mesh.faces
    p = v[f]
    out = np.zeros(len(v))
    cot = 1.0 / np.tan(np.clip(angles, 1e-12, np.pi - 1e-12))
    obtuse = angles > (np.pi / 2)
    any_obtuse = obtuse.any(axis=1)
    for corner in range(3):
        j = (corner + 1) % 3
        k = (corner + 2) % 3
        sq_j = ((p[:, k] - p[:, corner]) ** 2).sum(axis=1)
        sq_k = ((p[:, j] - p[:, corner]) ** 2).sum(axis=1)
        voronoi = (sq_j * cot[:, j] + sq_k * cot[:, k]) / 8.0
        contrib = np.where(
            any_obtuse,
            np.where(obtuse[:, corner], areas / 2.0, areas / 4.0),
            voronoi,
        )
        np.add.at(out, f[:, corner], contrib)
    return out


def angle_deficits(mesh: TriangleMesh) -> np.ndarray:
    """2*pi minus the sum of incident corner angles, per vertex."""
    angles, _ = _corner_angles(mesh)
    sums = np.zeros(mesh.n_vertices)
    np.add.at(sums, mesh.faces.reshape(-1), angles.reshape(-1))
    return 2.0 * np.pi - sums


def scott_bandwidth(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if len(samples) < 2:
        raise InputError("automatic bandwidth needs at least 2 samples")
    sigma = float(np.std(samples, ddof=1))
    if sigma == 0.0:
        sigma = max(abs(float(samples[0])), 1.0) * 1e-6
    return sigma * len(samples) ** (-0.2)


def gaussian_kde_curve(
    samples: np.ndarray, bandwidth: float, grid: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel density of 1-d samples on a grid wide and fine
    enough that its trapezoid integral is 1 within 1e-3."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if bandwidth <= 0:
        raise InputError(f"bandwidth must be positive, got {bandwidth}")
    if grid is None:
        lo = samples.min() - 6.0 * bandwidth
        hi = samples.max() + 6.0 * bandwidth
        n = int(min(max(512, math.ceil((hi - lo) / (bandwidth / 3.0)) + 1), 1 << 18))
        grid = np.linspace(lo, hi, n)
    density = np.zeros(len(grid))
    norm = 1.0 / (len(samples) * bandwidth * math.sqrt(2.0 * math.pi))
    for start in range(0, len(samples), 4096):
        block = samples[start : start + 4096]
        z = (grid[:, None] - block[None, :]) / bandwidth
        density += np.exp(-0.5 * z * z).sum(axis=1)
    return grid, density * norm


def curvature_report(
    mesh: TriangleMesh, radius: float, kde_bandwidth: float | str = "auto"
) -> CurvatureReport:
    """Ball-averaged discrete Gaussian curvature and its KDE summary.

    Per-vertex curvature is angle deficit over mixed Voronoi area; each
    vertex then averages the values of all vertices within ``radius``.
    """
    if mesh.is_empty:
        raise InputError("cannot compute curvature of an empty mesh")
    _, _, counts = _mesh_edges(mesh.faces)
    if not (counts == 2).all():
        raise InputError("curvature requires a closed mesh; found boundary or non-manifold edges")
    if radius < 0:
        raise InputError(f"radius must be >= 0, got {radius}")
    angles, areas = _corner_angles(mesh)
    deficits = angle_deficits(mesh)
    mixed = _mixed_voronoi_areas(mesh, angles, areas)
    gauss = deficits / np.maximum(mixed, 1e-300)

    if radius > 0:
        tree = cKDTree(mesh.vertices)
        groups = tree.query_ball_point(mesh.vertices, radius)
        counts_b = np.fromiter((len(g) for g in groups), dtype=np.int64, count=len(groups))
        flat = np.fromiter(
            (i for g in groups for i in g), dtype=np.int64, count=int(counts_b.sum())
        )
        sums = np.zeros(mesh.n_vertices)
        np.add.at(sums, np.repeat(np.arange(mesh.n_vertices), counts_b), gauss[flat])
        averaged = sums / counts_b
    else:
        averaged = gauss

    bandwidth = scott_bandwidth(averaged) if kde_bandwidth == "auto" else float(kde_bandwidth)
    grid, density = gaussian_kde_curve(averaged, bandwidth)
    return CurvatureReport(
        curvatures=averaged,
        radius=float(radius),
        bandwidth=bandwidth,
        kde_grid=grid,
        kde_density=density,
    )
