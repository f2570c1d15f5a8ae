"""Synthetic shapes, clouds, sweeps, and the two robustness perturbations.

Analytic signed-distance shapes stand in for clinical data: they generate
volumetric or surface point clouds, sliced binary-mask sweeps that
round-trip through the sweep loader, uniform outlier contamination, and
small rigid perturbations of tracking poses drawn in the Lie algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InternalError
from .geometry import FRAME_WORLD, PointCloud, check_pose

_SURFACE_TOL = 1e-6


@dataclass(frozen=True)
class SynthShape:
    """An analytic solid described by its exact signed distance function."""

    kind: str
    parameters: dict

    def sdf(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return _SDF[self.kind](p, self.parameters)

    def sdf_gradient(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return _GRAD[self.kind](p, self.parameters)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Tight axis-aligned bounding box of the solid."""
        return _BOUNDS[self.kind](self.parameters)

    def volume(self) -> float:
        return _VOLUME[self.kind](self.parameters)


def sphere(radius: float = 0.5, center=(0.0, 0.0, 0.0)) -> SynthShape:
    if radius <= 0:
        raise InputError(f"sphere radius must be positive, got {radius}")
    return SynthShape("sphere", {"radius": float(radius), "center": np.asarray(center, float)})


def torus(ring: float = 0.5, tube: float = 0.15, center=(0.0, 0.0, 0.0)) -> SynthShape:
    """Torus around the z axis through ``center``; ``ring`` is the center-line
    radius and ``tube`` the cross-section radius."""
    if not 0 < tube < ring:
        raise InputError(f"torus needs 0 < tube < ring, got tube={tube} ring={ring}")
    return SynthShape(
        "torus", {"ring": float(ring), "tube": float(tube), "center": np.asarray(center, float)}
    )


def two_spheres(
    radius_a: float = 0.25,
    radius_b: float = 0.25,
    center_a=(-0.55, 0.0, 0.0),
    center_b=(0.55, 0.0, 0.0),
) -> SynthShape:
    if radius_a <= 0 or radius_b <= 0:
        raise InputError("sphere radii must be positive")
    return SynthShape(
        "two-spheres",
        {
            "radius_a": float(radius_a),
            "radius_b": float(radius_b),
            "center_a": np.asarray(center_a, float),
            "center_b": np.asarray(center_b, float),
        },
    )


def _sphere_sdf(p, prm):
    return np.linalg.norm(p - prm["center"], axis=1) - prm["radius"]


def _sphere_grad(p, prm):
    d = p - prm["center"]
    n = np.linalg.norm(d, axis=1, keepdims=True)
    return d / np.maximum(n, 1e-300)


def _torus_sdf(p, prm):
    d = p - prm["center"]
    rho = np.linalg.norm(d[:, :2], axis=1)
    return np.sqrt((rho - prm["ring"]) ** 2 + d[:, 2] ** 2) - prm["tube"]


def _torus_grad(p, prm):
    d = p - prm["center"]
    rho = np.maximum(np.linalg.norm(d[:, :2], axis=1), 1e-300)
    u = rho - prm["ring"]
    q = np.maximum(np.sqrt(u**2 + d[:, 2] ** 2), 1e-300)
    g = np.empty_like(p)
    g[:, 0] = (u / q) * d[:, 0] / rho
    g[:, 1] = (u / q) * d[:, 1] / rho
    g[:, 2] = d[:, 2] / q
    return g


def _two_sdf(p, prm):
    da = np.linalg.norm(p - prm["center_a"], axis=1) - prm["radius_a"]
    db = np.linalg.norm(p - prm["center_b"], axis=1) - prm["radius_b"]
    return np.minimum(da, db)


def _two_grad(p, prm):
    da = np.linalg.norm(p - prm["center_a"], axis=1) - prm["radius_a"]
    db = np.linalg.norm(p - prm["center_b"], axis=1) - prm["radius_b"]
    ga = _sphere_grad(p, {"center": prm["center_a"]})
    gb = _sphere_grad(p, {"center": prm["center_b"]})
    return np.where((da <= db)[:, None], ga, gb)


def _sphere_bounds(prm):
    c, r = prm["center"], prm["radius"]
    return c - r, c + r


def _torus_bounds(prm):
    c = prm["center"]
    outer = prm["ring"] + prm["tube"]
    lo = c - np.array([outer, outer, prm["tube"]])
    hi = c + np.array([outer, outer, prm["tube"]])
    return lo, hi


def _two_bounds(prm):
    lo_a, hi_a = _sphere_bounds({"center": prm["center_a"], "radius": prm["radius_a"]})
    lo_b, hi_b = _sphere_bounds({"center": prm["center_b"], "radius": prm["radius_b"]})
    return np.minimum(lo_a, lo_b), np.maximum(hi_a, hi_b)


_SDF = {"sphere": _sphere_sdf, "torus": _torus_sdf, "two-spheres": _two_sdf}
_GRAD = {"sphere": _sphere_grad, "torus": _torus_grad, "two-spheres": _two_grad}
_BOUNDS = {"sphere": _sphere_bounds, "torus": _torus_bounds, "two-spheres": _two_bounds}
_VOLUME = {
    "sphere": lambda prm: 4.0 / 3.0 * math.pi * prm["radius"] ** 3,
    "torus": lambda prm: 2.0 * math.pi**2 * prm["ring"] * prm["tube"] ** 2,
    # assumes the two solids are disjoint, which the constructor default is
    "two-spheres": lambda prm: 4.0 / 3.0 * math.pi * (prm["radius_a"] ** 3 + prm["radius_b"] ** 3),
}


def _surface_samples(shape: SynthShape, n: int, rng: np.random.Generator) -> np.ndarray:
    prm = shape.parameters
    if shape.kind == "sphere":
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return prm["center"] + prm["radius"] * d
    if shape.kind == "torus":
        ring, tube = prm["ring"], prm["tube"]
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            u = rng.uniform(0.0, 2.0 * math.pi, m)
            v = rng.uniform(0.0, 2.0 * math.pi, m)
            # area element scales with the distance from the torus axis
            accept = rng.random(m) <= (ring + tube * np.cos(v)) / (ring + tube)
            u, v = u[accept], v[accept]
            pts = np.stack(
                [
                    (ring + tube * np.cos(v)) * np.cos(u),
                    (ring + tube * np.cos(v)) * np.sin(u),
                    tube * np.sin(v),
                ],
                axis=1,
            )
            out = np.vstack([out, prm["center"] + pts])
        return out[:n]
    if shape.kind == "two-spheres":
        area_a = prm["radius_a"] ** 2
        area_b = prm["radius_b"] ** 2
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            pick_a = rng.random(m) <= area_a / (area_a + area_b)
            d = rng.standard_normal((m, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            pts = np.where(
                pick_a[:, None],
                prm["center_a"] + prm["radius_a"] * d,
                prm["center_b"] + prm["radius_b"] * d,
            )
            # points swallowed by the other sphere are not on the union surface
            pts = pts[shape.sdf(pts) > -_SURFACE_TOL]
            out = np.vstack([out, pts])
        return out[:n]
    raise InternalError(f"unknown shape kind {shape.kind!r}")


def synth_cloud(shape: SynthShape, n: int, mode: str, seed: int) -> PointCloud:
    """Sample ``n`` points of ``shape``: ``volumetric`` draws uniformly from
    the interior by rejection, ``surface`` draws by area on the boundary."""
    if n < 1:
        raise InputError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if mode == "volumetric":
        lo, hi = shape.bounds()
        out = np.empty((0, 3))
        while len(out) < n:
            m = 4 * (n - len(out)) + 64
            pts = rng.uniform(lo, hi, (m, 3))
            pts = pts[shape.sdf(pts) <= 0.0]
            out = np.vstack([out, pts])
        return PointCloud(out[:n], frame=FRAME_WORLD)
    if mode == "surface":
        pts = _surface_samples(shape, n, rng)
        # one Newton projection step keeps the samples on the zero set even
        # after accumulated rounding
        off = np.abs(shape.sdf(pts)) > _SURFACE_TOL
        if off.any():
            pts[off] -= shape.sdf(pts[off])[:, None] * shape.sdf_gradient(pts[off])
        return PointCloud(pts, frame=FRAME_WORLD)
    raise InputError(f"mode must be 'volumetric' or 'surface', got {mode!r}")


def sweep_calibration(pixel_size: float) -> np.ndarray:
    """Calibration matrix matching :func:`synth_sweep` output: pixels scale
    to world units, no offset or tilt."""
    cal = np.eye(4)
    cal[0, 0] = pixel_size
    cal[1, 1] = pixel_size
    return cal


def synth_sweep(
    shape: SynthShape, n_frames: int, slice_spacing: float, pixel_size: float, seed: int = 0
) -> tuple[list[np.ndarray], np.ndarray]:
    """Render parallel z-slices of ``shape`` as binary masks with
    translation-only poses.

    Pixel (row, col) of frame m sits at world point
    (x0 + col*pixel_size, y0 + row*pixel_size, z_m), which is exactly what
    the sweep loader reconstructs with :func:`sweep_calibration`.  ``seed``
    is accepted for interface symmetry; slicing is deterministic.
    """
    del seed
    if n_frames < 2:
        raise InputError(f"a sweep needs at least 2 frames, got {n_frames}")
    if slice_spacing <= 0 or pixel_size <= 0:
        raise InputError("slice_spacing and pixel_size must be positive")
    lo, hi = shape.bounds()
    x0 = lo[0] - pixel_size
    y0 = lo[1] - pixel_size
    width = int(math.ceil((hi[0] - x0) / pixel_size)) + 2
    height = int(math.ceil((hi[1] - y0) / pixel_size)) + 2
    z_center = 0.5 * (lo[2] + hi[2])
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    xs = x0 + cols * pixel_size
    ys = y0 + rows * pixel_size
    plane = np.stack([xs.reshape(-1), ys.reshape(-1), np.zeros(height * width)], axis=1)
    masks = []
    poses = np.empty((n_frames, 4, 4))
    for m in range(n_frames):
        z = z_center + (m - (n_frames - 1) / 2.0) * slice_spacing
        pts = plane.copy()
        pts[:, 2] = z
        inside = shape.sdf(pts) <= 0.0
        masks.append(np.where(inside.reshape(height, width), 255, 0).astype(np.uint8))
        pose = np.eye(4)
        pose[:3, 3] = (x0, y0, z)
        poses[m] = pose
    return masks, poses


@dataclass(frozen=True)
class Se3Noise:
    """Gaussian noise scales for the rotational and translational parts of
    a rigid perturbation, with the seed that fixes the draws."""

    sigma_r: float
    sigma_t: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma_r < 0 or self.sigma_t < 0:
            raise InputError("noise scales must be >= 0")


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def se3_exp(n_r: np.ndarray, n_t: np.ndarray) -> np.ndarray:
    """Exponential of the twist (n_r, n_t): Rodrigues rotation plus the
    closed-form V matrix for the translation part."""
    n_r = np.asarray(n_r, dtype=np.float64).reshape(3)
    n_t = np.asarray(n_t, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(n_r))
    k = _skew(n_r)
    k2 = k @ k
    if theta < 1e-6:
        # series in theta^2; exact at theta = 0
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
        c = 1.0 / 6.0 - theta**2 / 120.0
    else:
        a = math.sin(theta) / theta
        # half-angle form: 1 - cos(theta) cancels catastrophically near the
        # series switch, 2 sin^2(theta/2) does not
        half = math.sin(theta / 2.0)
        b = 2.0 * half * half / (theta * theta)
        c = (theta - math.sin(theta)) / theta**3
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = v @ n_t
    return out


def _check_rigid(m: np.ndarray) -> None:
    rot = m[:3, :3]
    if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
        raise InternalError("perturbation produced a non-rigid transform")


def perturb_poses(poses, noise: Se3Noise) -> np.ndarray:
    """Left-multiply every pose with a random rigid transform drawn from
    ``noise``; same seed, same output, bit for bit."""
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim == 2:
        poses = poses[None]
    out = np.empty_like(poses)
    rng = np.random.default_rng(noise.seed)
    for i, pose in enumerate(poses):
        check_pose(pose, f"poses[{i}]")
        n_r = rng.standard_normal(3) * noise.sigma_r
        n_t = rng.standard_normal(3) * noise.sigma_t
        delta = se3_exp(n_r, n_t)
        _check_rigid(delta)
        out[i] = delta @ pose
    return out


def inject_outliers(cloud: PointCloud, level: int, seed: int) -> PointCloud:
    """Append ``level`` uniform points from the cloud's bounding box
    inflated by 20%."""
    if level < 0:
        raise InputError(f"outlier level must be >= 0, got {level}")
    cloud.require_nonempty("inject_outliers")
    if level == 0:
        return PointCloud(cloud.points.copy(), frame=cloud.frame)
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * 1.2
    rng = np.random.default_rng(seed)
    extra = rng.uniform(center - half, center + half, (level, 3))
    return PointCloud(np.vstack([cloud.points, extra]), frame=cloud.frame)
