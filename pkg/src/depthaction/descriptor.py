"""Local appearance and global distribution descriptors for interest points.

Motion points are described by a steering-kernel response over a
depth-adaptive spatio-temporal cuboid, optionally at several scales.
Shape points are described by their normalized 4-D offset from the
sequence origin (the component-wise minimum of the point set).
"""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

DESC_MAGIC = b"DESC"
DESC_VERSION = 1


@dataclass(frozen=True)
class DescriptorParams:
    """Knobs for the steering-kernel descriptor.

    scales: base cuboid radii, one descriptor set per scale.
    probe_radius: half-width of the cube used to estimate a point's depth.
    h: kernel smoothing bandwidth.
    cov_window: half-width of the gradient-covariance averaging window.
    reg_lambda: diagonal regularizer keeping covariances invertible.
    """

    scales: tuple = (7,)
    probe_radius: int = 3
    h: float = 1.0
    cov_window: int = 1
    reg_lambda: float = 1e-3

    def __post_init__(self):
        if len(self.scales) < 1 or any(r < 1 for r in self.scales):
            raise ValueError("need at least one scale, all radii >= 1")
        if self.probe_radius < 1:
            raise ValueError("probe_radius must be >= 1")
        if self.h <= 0 or self.reg_lambda <= 0:
            raise ValueError("h and reg_lambda must be positive")
        if self.cov_window < 1:
            raise ValueError("cov_window must be >= 1")


def mean_foreground_depth(frames, point, probe_radius: int) -> Optional[float]:
    """Average nonzero depth inside the probe cube around a point.

    The cube spans +-probe_radius in x, y and time, clamped to the volume.
    Returns None when every value in the cube is zero; such points carry
    no usable depth and are discarded upstream.
    """
    frames = np.asarray(frames)
    n, h, w = frames.shape
    r = probe_radius
    cube = frames[
        max(point.f - r, 0) : min(point.f + r + 1, n),
        max(point.y - r, 0) : min(point.y + r + 1, h),
        max(point.x - r, 0) : min(point.x + r + 1, w),
    ]
    nz = cube > 0
    if not nz.any():
        return None
    return float(cube.sum(dtype=np.float64) / nz.sum())


def adaptive_scale(z_ref: float, z_point: float, radius: float) -> float:
    """Scale the cuboid radius by the reference-to-point depth ratio."""
    if z_ref <= 0 or z_point <= 0:
        raise ValueError("depths must be positive")
    return z_ref / z_point * radius


def extract_cuboid(volume, point, r_hat: float, radius: int) -> np.ndarray:
    """Resample a cuboid of half-width r_hat onto a (2*radius+1)^3 grid.

    The cuboid is centered on the point in (t, y, x), sampled by trilinear
    interpolation with replicate padding at the volume borders. r_hat is
    clamped to at least 0.5.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    volume = np.asarray(volume, dtype=np.float64)
    r_hat = max(float(r_hat), 0.5)
    side = 2 * radius + 1
    offsets = (np.arange(side) - radius) * (r_hat / radius)
    tt = point.f + offsets
    yy = point.y + offsets
    xx = point.x + offsets
    coords = np.stack(np.meshgrid(tt, yy, xx, indexing="ij"))
    cube = map_coordinates(volume, coords.reshape(3, -1), order=1, mode="nearest")
    return cube.reshape(side, side, side)


def _box_mean(vols: np.ndarray, radius: int) -> np.ndarray:
    # mean over the (2r+1)^3 window truncated at the cube borders, for a
    # whole (n, s, s, s) stack at once, via padded cumulative-sum tables
    p = np.cumsum(np.cumsum(np.cumsum(vols, 1), 2), 3)
    p = np.pad(p, ((0, 0), (1, 0), (1, 0), (1, 0)))
    _, n0, n1, n2 = vols.shape
    idx = []
    for n in (n0, n1, n2):
        i = np.arange(n)
        idx.append((np.clip(i - radius, 0, None), np.clip(i + radius + 1, None, n)))
    (a0, b0), (a1, b1), (a2, b2) = idx
    a0, b0 = a0[:, None, None], b0[:, None, None]
    a1, b1 = a1[None, :, None], b1[None, :, None]
    a2, b2 = a2[None, None, :], b2[None, None, :]
    total = (
        p[:, b0, b1, b2]
        - p[:, a0, b1, b2]
        - p[:, b0, a1, b2]
        - p[:, b0, b1, a2]
        + p[:, a0, a1, b2]
        + p[:, a0, b1, a2]
        + p[:, b0, a1, a2]
        - p[:, a0, a1, a2]
    )
    count = (b0 - a0) * (b1 - a1) * (b2 - a2)
    return total / count


def lsk3d_batch(cubes: np.ndarray, params: DescriptorParams) -> np.ndarray:
    """Steering-kernel descriptors for a (n, s, s, s) stack of cuboids.

    Each cube is standardized (zero mean, unit deviation; all-constant
    cubes become zeros), gradients are taken by central differences, and a
    regularized local gradient covariance steers a Gaussian weight on the
    offset of each voxel from the center. Every row is positive and sums
    to 1.
    """
    cubes = np.asarray(cubes, dtype=np.float64)
    if cubes.ndim != 4 or len(set(cubes.shape[1:])) != 1:
        raise ValueError("expected a (n, s, s, s) stack")
    side = cubes.shape[1]
    if side < 3:
        raise ValueError("cube side must be >= 3")
    if cubes.shape[0] == 0:
        return np.zeros((0, side**3))

    mean = cubes.mean(axis=(1, 2, 3), keepdims=True)
    sd = cubes.std(axis=(1, 2, 3), keepdims=True)
    norm = np.where(sd > 0, (cubes - mean) / np.where(sd > 0, sd, 1.0), 0.0)
    gt, gy, gx = np.gradient(norm, axis=(1, 2, 3))

    w = params.cov_window
    lam = params.reg_lambda
    cxx = _box_mean(gx * gx, w) + lam
    cyy = _box_mean(gy * gy, w) + lam
    ctt = _box_mean(gt * gt, w) + lam
    cxy = _box_mean(gx * gy, w)
    cxt = _box_mean(gx * gt, w)
    cyt = _box_mean(gy * gt, w)

    det = (
        cxx * (cyy * ctt - cyt * cyt)
        - cxy * (cxy * ctt - cyt * cxt)
        + cxt * (cxy * cyt - cyy * cxt)
    )

    r = side // 2
    u = np.arange(side) - r
    ut = u[:, None, None]
    uy = u[None, :, None]
    ux = u[None, None, :]
    quad = (
        cxx * ux * ux
        + cyy * uy * uy
        + ctt * ut * ut
        + 2.0 * (cxy * ux * uy + cxt * ux * ut + cyt * uy * ut)
    )
    weights = np.sqrt(det) * np.exp(-quad / (2.0 * params.h**2))
    flat = weights.reshape(len(cubes), -1)
    return flat / flat.sum(axis=1, keepdims=True)


def lsk3d(cube: np.ndarray, params: DescriptorParams) -> np.ndarray:
    """Steering-kernel descriptor of one cuboid, L1-normalized."""
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3 or len(set(cube.shape)) != 1:
        raise ValueError("cube must have three equal sides")
    return lsk3d_batch(cube[None], params)[0]


def probe_depths(frames, points, probe_radius: int):
    """Split points into survivors with a usable probe depth and the rest.

    Returns (survivors, depths): points whose probe cube holds at least one
    nonzero value, in the input order, with their average depths.
    """
    survivors, depths = [], []
    for p in points:
        z = mean_foreground_depth(frames, p, probe_radius)
        if z is not None:
            survivors.append(p)
            depths.append(z)
    return survivors, np.asarray(depths, dtype=np.float64)


def _extract_cuboids(volume, points, r_hats, radius: int) -> np.ndarray:
    # one interpolation call for every point of a scale; keeps the exact
    # arithmetic of extract_cuboid: offset = (i - r) * (r_hat / r)
    n = len(points)
    side = 2 * radius + 1
    base = np.arange(side) - radius
    steps = np.array([max(float(rh), 0.5) for rh in r_hats]) / radius
    offs = base[None, :] * steps[:, None]  # (n, side)
    centers = np.array([(p.f, p.y, p.x) for p in points], dtype=np.float64)
    shape = (n, side, side, side)
    tt = np.broadcast_to((centers[:, 0, None] + offs)[:, :, None, None], shape)
    yy = np.broadcast_to((centers[:, 1, None] + offs)[:, None, :, None], shape)
    xx = np.broadcast_to((centers[:, 2, None] + offs)[:, None, None, :], shape)
    coords = np.stack([tt.reshape(-1), yy.reshape(-1), xx.reshape(-1)])
    return map_coordinates(volume, coords, order=1, mode="nearest").reshape(shape)


def describe_at_scales(frames, points, depths, params: DescriptorParams, z_ref: float):
    """Steering-kernel descriptors for known-depth points, one array per scale."""
    frames = np.asarray(frames, dtype=np.float64)
    per_scale = []
    for radius in params.scales:
        if len(points) == 0:
            per_scale.append(np.zeros((0, (2 * radius + 1) ** 3)))
            continue
        r_hats = [adaptive_scale(z_ref, z, radius) for z in depths]
        cubes = _extract_cuboids(frames, points, r_hats, radius)
        per_scale.append(lsk3d_batch(cubes, params))
    return per_scale


def m3dlsk(frames, motion_points, params: DescriptorParams, z_ref: float):
    """Multi-scale steering-kernel descriptors for a set of motion points.

    For every scale and every surviving point, the cuboid radius is
    adapted by the point's probe depth relative to z_ref (the training-set
    average), resampled to the scale's grid and described. Points whose
    probe cube is all zero produce no descriptor at any scale. Returns
    (per-scale list of (n, (2r+1)^3) arrays, surviving points).
    """
    frames = np.asarray(frames, dtype=np.float64)
    survivors, depths = probe_depths(frames, motion_points, params.probe_radius)
    return describe_at_scales(frames, survivors, depths, params, z_ref), survivors


def stv(points) -> np.ndarray:
    """Normalized 4-D offsets of points from their component-wise minimum.

    Each dimension is rescaled by its own maximum offset so every
    component lies in [0, 1]; a dimension with no spread maps to zeros.
    """
    points = list(points)
    if not points:
        raise ValueError("need at least one point")
    v = np.array([p.coords() for p in points], dtype=np.float64)
    raw = v - v.min(axis=0)
    span = raw.max(axis=0)
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, raw / safe, 0.0)


def write_descriptors(path, rows: np.ndarray) -> None:
    """Binary descriptor dump: magic, version, count, dim, float32 rows."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("expected a (count, dim) array")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHII", DESC_MAGIC, DESC_VERSION, rows.shape[0], rows.shape[1]))
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())


def read_descriptors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sHII"))
        magic, version, count, dim = struct.unpack("<4sHII", head)
        if magic != DESC_MAGIC or version != DESC_VERSION:
            raise ValueError(f"{path}: not a descriptor dump")
        data = np.frombuffer(fh.read(count * dim * 4), dtype="<f4")
    return data.reshape(count, dim).astype(np.float64)
