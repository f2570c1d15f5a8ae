"""Point-cloud geometry: pose lifting, spatial indexing, downsampling and
normalization.

World coordinates are millimeters; normalized coordinates live in [-1, 1]^3.
All tie-breaks are by lowest point index so results are order-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCloudError, EmptyCloudError, InputError

FRAME_WORLD = "world"
FRAME_NORMALIZED = "normalized"

_AFFINE_LAST_ROW = np.array([0.0, 0.0, 0.0, 1.0])


def as_points(a, name: str = "points") -> np.ndarray:
    """Coerce to a float64 (n, 3) array, rejecting NaN/inf coordinates."""
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"{name} must have shape (n, 3), got {pts.shape}")
    if pts.size and not np.isfinite(pts).all():
        raise InputError(f"{name} contains non-finite coordinates")
    return pts


def check_pose(m, name: str = "pose") -> np.ndarray:
    """Validate a 4x4 affine pose: finite entries, last row exactly (0,0,0,1)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise InputError(f"{name} must be a 4x4 matrix, got shape {m.shape}")
    if not np.isfinite(m[:3]).all():
        raise InputError(f"{name} has non-finite entries")
    if not np.array_equal(m[3], _AFFINE_LAST_ROW):
        raise InputError(f"{name} last row must be (0, 0, 0, 1), got {m[3]}")
    return m


@dataclass
class PointCloud:
    """An ordered set of 3D points with a coordinate-frame tag."""

    points: np.ndarray
    frame: str = FRAME_WORLD

    def __post_init__(self):
        self.points = as_points(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def require_nonempty(self, what: str = "operation") -> None:
        if len(self) == 0:
            raise EmptyCloudError(f"{what} requires a non-empty point cloud")


@dataclass
class NormalizationTransform:
    """Uniform centering/scaling between world and normalized frames."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if not self.scale > 0:
            raise InputError(f"normalization scale must be positive, got {self.scale}")

    def apply(self, points: np.ndarray) -> np.ndarray:
        """World -> normalized."""
        return (np.asarray(points, dtype=np.float64) - self.center) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        """Normalized -> world."""
        return np.asarray(points, dtype=np.float64) * self.scale + self.center


def pixel_to_world(pixel, calibration, tracking) -> np.ndarray:
    """Lift one 2D mask pixel (x, y, 0) to world space via tracking @ calibration."""
    p = np.asarray(pixel, dtype=np.float64).reshape(3)
    if p[2] != 0.0:
        raise InputError(f"mask pixel must have z = 0, got z = {p[2]}")
    mc = check_pose(calibration, "calibration")
    mt = check_pose(tracking, "tracking")
    v = (mt @ mc) @ np.array([p[0], p[1], 0.0, 1.0])
    return v[:3]


def _pixels_to_world(xy: np.ndarray, calibration: np.ndarray, tracking: np.ndarray) -> np.ndarray:
    m = tracking @ calibration
    homo = np.column_stack([xy, np.zeros(len(xy)), np.ones(len(xy))])
    return homo @ m.T[:, :3]


def build_cloud_from_sweep(
    masks: Sequence[np.ndarray],
    calibration,
    trackings: Sequence,
) -> PointCloud:
    """Lift all foreground pixels (value > 0) of a tracked sweep to a world cloud.

    Points appear in frame-major, row-major pixel order; a pixel at (row, col)
    maps to (x_s, y_s) = (col, row).
    """
    if len(masks) != len(trackings):
        raise InputError(
            f"frame count mismatch: {len(masks)} masks vs {len(trackings)} tracking poses"
        )
    if not masks:
        raise InputError("sweep contains no frames")
    mc = check_pose(calibration, "calibration")
    shape = np.asarray(masks[0]).shape
    chunks = []
    for f, (mask, tracking) in enumerate(zip(masks, trackings)):
        mask = np.asarray(mask)
        if mask.ndim != 2:
            raise InputError(f"mask {f} is not a 2D image")
        if mask.shape != shape:
            raise InputError(
                f"mask {f} has shape {mask.shape}, expected {shape} from frame 0"
            )
        mt = check_pose(tracking, f"tracking pose {f}")
        rc = np.argwhere(mask > 0)
        if len(rc) == 0:
            continue
        xy = rc[:, ::-1].astype(np.float64)
        chunks.append(_pixels_to_world(xy, mc, mt))
    if not chunks:
        raise EmptyCloudError("sweep has zero foreground pixels")
    return PointCloud(np.concatenate(chunks, axis=0), frame=FRAME_WORLD)


def voxel_downsample(cloud: PointCloud, cell: float) -> PointCloud:
    """Replace each occupied voxel by the centroid of its points.

    Output is ordered by ascending (ix, iy, iz) lexicographic cell index with
    floor(coord / cell) indexing.
    """
    if not cell > 0:
        raise InputError(f"voxel cell size must be positive, got {cell}")
    cloud.require_nonempty("voxel_downsample")
    idx = np.floor(cloud.points / cell).astype(np.int64)
    cells, inverse = np.unique(idx, axis=0, return_inverse=True)
    sums = np.zeros((len(cells), 3))
    np.add.at(sums, inverse, cloud.points)
    counts = np.bincount(inverse, minlength=len(cells)).astype(np.float64)
    return PointCloud(sums / counts[:, None], frame=cloud.frame)


def fps_indices(points: np.ndarray, n: int, first: int) -> np.ndarray:
    """Greedy farthest-point selection starting from ``first``.

    Each pick maximizes the minimum distance to the selected set; ties go to
    the lowest point index (np.argmax returns the first maximum).
    """
    m = len(points)
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = first
    min_d2 = np.sum((points - points[first]) ** 2, axis=1)
    for j in range(1, n):
        pick = int(np.argmax(min_d2))
        chosen[j] = pick
        d2 = np.sum((points - points[pick]) ** 2, axis=1)
        np.minimum(min_d2, d2, out=min_d2)
    return chosen


def farthest_point_sample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Downsample to n points by farthest point sampling (seeded first pick)."""
    cloud.require_nonempty("farthest_point_sample")
    if not 1 <= n <= len(cloud):
        raise InputError(f"cannot sample {n} points from a cloud of {len(cloud)}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(0, len(cloud)))
    return PointCloud(cloud.points[fps_indices(cloud.points, n, first)], frame=cloud.frame)


def _exact_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((points - q) ** 2, axis=1))


class SpatialIndex:
    """k-d tree over a point cloud whose queries match a brute-force linear
    scan exactly, including lowest-index tie-breaks."""

    def __init__(self, cloud: PointCloud):
        cloud.require_nonempty("SpatialIndex")
        self.cloud = cloud
        self.points = cloud.points
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, query, k: int) -> list[tuple[int, float]]:
        """k nearest neighbors sorted by (distance, index)."""
        if not 1 <= k <= len(self):
            raise InputError(f"k = {k} out of range for a cloud of {len(self)}")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        d, _ = self._tree.query(q, k=k)
        dk = float(np.max(d)) if k > 1 else float(d)
        cand = self._tree.query_ball_point(q, dk * (1 + 1e-9) + 1e-300)
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        dd = _exact_distances(self.points[cand], q)
        order = np.lexsort((cand, dd))[:k]
        return [(int(cand[i]), float(dd[i])) for i in order]

    def kth_distances(self, queries: np.ndarray, k: int) -> np.ndarray:
        """Distance from each query to its k-th nearest point (1-based k).

        Ties do not affect the returned distance, so the plain tree query is
        exact here.
        """
        if not 1 <= k <= len(self):
            raise InputError(f"k = {k} out of range for a cloud of {len(self)}")
        d, _ = self._tree.query(queries, k=k)
        return d if k == 1 else d[:, -1]

    def nearest(self, queries: np.ndarray) -> np.ndarray:
        """Index of the nearest point per query; exact ties -> lowest index."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if len(self) == 1:
            return np.zeros(len(queries), dtype=np.int64)
        d, i = self._tree.query(queries, k=2)
        d0 = np.sqrt(np.sum((self.points[i[:, 0]] - queries) ** 2, axis=1))
        d1 = np.sqrt(np.sum((self.points[i[:, 1]] - queries) ** 2, axis=1))
        swap = d1 < d0
        best = np.where(swap, i[:, 1], i[:, 0])
        tie = ~swap & (d1 <= d0 * (1 + 1e-12))
        for j in np.nonzero(tie)[0]:
            best[j] = self.knn(queries[j], 1)[0][0]
        return best.astype(np.int64)


def knn(index: SpatialIndex, query, k: int) -> list[tuple[int, float]]:
    """k nearest neighbors of ``query``, sorted ascending by (distance, index)."""
    return index.knn(query, k)


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, NormalizationTransform]:
    """Center on the centroid and scale uniformly into [-1, 1]^3.

    The scale is the maximum absolute centered coordinate, so at least one
    output coordinate attains magnitude 1.
    """
    cloud.require_nonempty("normalize_cloud")
    if len(cloud) < 2:
        raise DegenerateCloudError("normalization requires at least 2 points")
    center = cloud.points.mean(axis=0)
    centered = cloud.points - center
    scale = float(np.max(np.abs(centered)))
    if scale == 0.0:
        raise DegenerateCloudError("cloud has zero extent; cannot normalize")
    t = NormalizationTransform(center=center, scale=scale)
    return PointCloud(centered / scale, frame=FRAME_NORMALIZED), t
