"""Gaussian query sampling around cloud points with locally adaptive sigma.

Each cloud point p_i gets l query points p_i + eps, eps ~ N(0, sigma_i^2 I),
where sigma_i is the distance from p_i to its k-th nearest neighbor. Every
query is bound to its nearest cloud point, which is the pull target during
training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCloudError, InputError
from .geometry import PointCloud, SpatialIndex


@dataclass
class QuerySet:
    """Query points with their generating source, nearest target and sigma.

    ``sigma`` is per source point (length N); the other arrays are per query
    (length N*l, grouped by source in generation order).
    """

    queries: np.ndarray
    target_index: np.ndarray
    source_index: np.ndarray
    sigma: np.ndarray

    def __len__(self) -> int:
        return len(self.queries)


def compute_local_sigma(cloud: PointCloud, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest neighbor, excluding itself.

    Duplicated points yield sigma 0 here; generate_queries substitutes those.
    """
    cloud.require_nonempty("compute_local_sigma")
    if not 1 <= k < len(cloud):
        raise InputError(f"k must satisfy 1 <= k < |cloud|, got k={k}, |cloud|={len(cloud)}")
    index = SpatialIndex(cloud)
    # Query k+1 including the self match at distance 0; dropping one zero from
    # the sorted distances is exact even when duplicates contribute more zeros.
    return index.kth_distances(cloud.points, k + 1)


def generate_queries(cloud: PointCloud, sigmas, l: int, seed: int) -> QuerySet:
    """Draw l isotropic Gaussian queries around each cloud point.

    Per-source RNG substreams keyed (seed, i) make the result independent of
    any partitioning of the source points and bit-identical across runs.
    """
    cloud.require_nonempty("generate_queries")
    if l < 1:
        raise InputError(f"queries per point must be >= 1, got {l}")
    sigmas = np.asarray(sigmas, dtype=np.float64).copy()
    if sigmas.shape != (len(cloud),):
        raise InputError(
            f"expected {len(cloud)} sigmas, got array of shape {sigmas.shape}"
        )
    if np.any(sigmas < 0) or not np.isfinite(sigmas).all():
        raise InputError("sigmas must be finite and non-negative")
    positive = sigmas[sigmas > 0]
    if len(positive) == 0:
        raise DegenerateCloudError("all sigmas are zero; cloud is fully degenerate")
    sigmas[sigmas == 0] = positive.min()

    n = len(cloud)
    queries = np.empty((n * l, 3))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        eps = rng.standard_normal((l, 3)) * sigmas[i]
        queries[i * l:(i + 1) * l] = cloud.points[i] + eps
    source_index = np.repeat(np.arange(n, dtype=np.int64), l)
    target_index = np.full(n * l, -1, dtype=np.int64)
    return QuerySet(queries, target_index, source_index, sigmas)


def assign_targets(index: SpatialIndex, qs: QuerySet) -> QuerySet:
    """Bind each query to its nearest cloud point (ties -> lowest index)."""
    qs.target_index = index.nearest(qs.queries)
    return qs


def build_query_set(cloud: PointCloud, k: int, l: int, seed: int) -> QuerySet:
    """sigmas -> queries -> targets in one call over a normalized cloud."""
    sigmas = compute_local_sigma(cloud, k)
    qs = generate_queries(cloud, sigmas, l, seed)
    return assign_targets(SpatialIndex(cloud), qs)
