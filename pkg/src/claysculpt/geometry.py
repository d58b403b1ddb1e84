"""Point-cloud container and the geometric processing used across the pipeline.

Clouds are plain numpy arrays in meters, expressed in the stage frame. All
operations are pure: they return new clouds and never mutate their inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial import QhullError

SDPC_MAGIC = b"SDPC"
SDPC_VERSION = 1
_FLAG_COLORS = 0x0001


class CloudFormatError(ValueError):
    """Raised when an SDPC payload cannot be decoded."""


@dataclass
class PointCloud:
    """Ordered set of 3-D points with optional per-point RGB colors."""

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        self.points = pts
        if self.colors is not None:
            cols = np.asarray(self.colors, dtype=np.float64)
            if cols.shape != pts.shape:
                raise ValueError(
                    f"colors length {cols.shape} does not match points {pts.shape}"
                )
            if not np.isfinite(cols).all():
                raise ValueError("colors contain non-finite values")
            self.colors = cols

    def __len__(self) -> int:
        return self.points.shape[0]

    def select(self, index: np.ndarray) -> "PointCloud":
        """New cloud keeping the rows in `index` (mask or integer array)."""
        cols = self.colors[index] if self.colors is not None else None
        return PointCloud(self.points[index], cols)

    def copy(self) -> "PointCloud":
        cols = self.colors.copy() if self.colors is not None else None
        return PointCloud(self.points.copy(), cols)


@dataclass
class StageFrame:
    """Geometry of the elevated stage the clay sits on.

    The clay is assumed centered on and fixed to the stage, so the crop
    volume is a vertical cylinder anchored at the stage axis.
    """

    center: tuple[float, float] = (0.0, 0.0)
    surface_z: float = 0.0
    crop_radius: float = 0.10
    crop_height: float = 0.15

    def __post_init__(self):
        if self.crop_radius <= 0:
            raise ValueError("crop_radius must be > 0")
        if self.crop_height <= 0:
            raise ValueError("crop_height must be > 0")


def fuse(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds already expressed in the common stage frame.

    Input order is preserved (cloud 0's points first). Colors are kept only
    when every input carries them.
    """
    if not clouds:
        raise ValueError("no clouds to fuse")
    points = np.concatenate([c.points for c in clouds], axis=0)
    if all(c.colors is not None for c in clouds):
        colors = np.concatenate([c.colors for c in clouds], axis=0)
    else:
        colors = None
    return PointCloud(points, colors)


def crop(cloud: PointCloud, frame: StageFrame) -> PointCloud:
    """Keep points inside the stage crop cylinder (boundaries inclusive)."""
    cx, cy = frame.center
    d_xy = np.hypot(cloud.points[:, 0] - cx, cloud.points[:, 1] - cy)
    z = cloud.points[:, 2]
    keep = (
        (d_xy <= frame.crop_radius)
        & (z >= frame.surface_z)
        & (z <= frame.surface_z + frame.crop_height)
    )
    return cloud.select(keep)


def color_filter(cloud: PointCloud, lo, hi) -> PointCloud:
    """Keep points whose color is within [lo, hi] component-wise."""
    if cloud.colors is None:
        raise ValueError("color filter requires colors")
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    keep = np.all((cloud.colors >= lo) & (cloud.colors <= hi), axis=1)
    return cloud.select(keep)


def _hull_mask(xy: np.ndarray, query: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of query points inside the convex hull of `xy`.

    Falls back to a distance test against the input points when the hull is
    degenerate (fewer than 3 distinct points, or collinear).
    """
    try:
        hull = ConvexHull(xy)
    except (QhullError, ValueError):
        # Degenerate footprint: keep grid points near any input point.
        d = np.linalg.norm(query[:, None, :] - xy[None, :, :], axis=2)
        return d.min(axis=1) <= max(np.ptp(xy, axis=0).max(), tol)
    # hull.equations rows are (a, b, c) with a*x + b*y + c <= 0 inside.
    eq = hull.equations
    vals = query @ eq[:, :2].T + eq[:, 2]
    return np.all(vals <= tol, axis=1)


def add_base_plane(cloud: PointCloud, frame: StageFrame, grid_step: float) -> PointCloud:
    """Append a planar grid at the stage surface under the cloud's footprint.

    The footprint is the convex hull of the xy-projection; grid points are
    spaced `grid_step` apart and anchored at the footprint centroid so at
    least one point is always produced. Appended points carry the mean color
    of the input when colors are present.
    """
    if len(cloud) == 0:
        raise ValueError("cannot add a base plane to an empty cloud")
    if grid_step <= 0:
        raise ValueError("grid_step must be > 0")
    xy = cloud.points[:, :2]
    centroid = xy.mean(axis=0)
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    nx_lo = int(np.ceil((centroid[0] - lo[0]) / grid_step))
    nx_hi = int(np.ceil((hi[0] - centroid[0]) / grid_step))
    ny_lo = int(np.ceil((centroid[1] - lo[1]) / grid_step))
    ny_hi = int(np.ceil((hi[1] - centroid[1]) / grid_step))
    xs = centroid[0] + np.arange(-nx_lo, nx_hi + 1) * grid_step
    ys = centroid[1] + np.arange(-ny_lo, ny_hi + 1) * grid_step
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = _hull_mask(xy, grid)
    grid = grid[inside]
    if grid.shape[0] == 0:
        grid = centroid[None, :]
    base = np.column_stack([grid, np.full(len(grid), frame.surface_z)])
    points = np.concatenate([cloud.points, base], axis=0)
    if cloud.colors is not None:
        mean_color = cloud.colors.mean(axis=0)
        colors = np.concatenate(
            [cloud.colors, np.tile(mean_color, (len(base), 1))], axis=0
        )
    else:
        colors = None
    return PointCloud(points, colors)


def _lexicographic_min(points: np.ndarray, candidates: np.ndarray) -> int:
    """Index (into the full array) of the lexicographically smallest candidate."""
    sub = points[candidates]
    order = np.lexsort((sub[:, 2], sub[:, 1], sub[:, 0]))
    return int(candidates[order[0]])


def farthest_point_indices(points: np.ndarray, n: int) -> np.ndarray:
    """Greedy farthest-point sample of `n` indices, order-independent.

    The walk starts at the point farthest from the centroid and each later
    pick maximizes distance to the already-chosen set; all ties break
    lexicographically on coordinates so a permuted input yields the same
    point set.
    """
    count = points.shape[0]
    centroid = points.mean(axis=0)
    d = np.linalg.norm(points - centroid, axis=1)
    first = _lexicographic_min(points, np.flatnonzero(d == d.max()))
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = first
    dist = np.linalg.norm(points - points[first], axis=1)
    for i in range(1, n):
        m = dist.max()
        nxt = _lexicographic_min(points, np.flatnonzero(dist == m))
        chosen[i] = nxt
        np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1), out=dist)
    return chosen


def downsample(cloud: PointCloud, n: int, method: str = "uniform-random",
               seed: int = 0) -> PointCloud:
    """Reduce (or pad) a cloud to exactly `n` points drawn from the input.

    `uniform-random` is a seeded sample without replacement; `farthest-point`
    is the deterministic geometric walk of `farthest_point_indices`. Inputs
    smaller than `n` are padded by seeded resampling with replacement.
    """
    if n <= 0:
        raise ValueError("downsample target must be > 0")
    if len(cloud) == 0:
        raise ValueError("cannot downsample an empty cloud")
    count = len(cloud)
    if count < n:
        rng = np.random.default_rng(seed)
        pad = rng.integers(0, count, size=n - count)
        index = np.concatenate([np.arange(count), pad])
        return cloud.select(index)
    if method == "uniform-random":
        rng = np.random.default_rng(seed)
        index = rng.choice(count, size=n, replace=False)
        return cloud.select(index)
    if method == "farthest-point":
        return cloud.select(farthest_point_indices(cloud.points, n))
    raise ValueError(f"unknown downsample method {method!r}")


def rotate_z(cloud: PointCloud, angle: float, center: tuple[float, float] = (0.0, 0.0)) -> PointCloud:
    """Rigidly rotate about the vertical axis through `center`."""
    c, s = np.cos(angle), np.sin(angle)
    cx, cy = center
    x = cloud.points[:, 0] - cx
    y = cloud.points[:, 1] - cy
    out = cloud.points.copy()
    out[:, 0] = c * x - s * y + cx
    out[:, 1] = s * x + c * y + cy
    cols = cloud.colors.copy() if cloud.colors is not None else None
    return PointCloud(out, cols)


def write_sdpc(cloud: PointCloud) -> bytes:
    """Serialize a cloud to the SDPC binary format (float32, little-endian)."""
    flags = _FLAG_COLORS if cloud.colors is not None else 0
    head = SDPC_MAGIC + struct.pack("<HHI", SDPC_VERSION, flags, len(cloud))
    body = cloud.points.astype("<f4").tobytes()
    if cloud.colors is not None:
        body += cloud.colors.astype("<f4").tobytes()
    return head + body


def read_sdpc(data: bytes) -> PointCloud:
    """Decode an SDPC payload, naming the offending field on failure."""
    if len(data) < 12:
        raise CloudFormatError("unexpected end of stream in header")
    if data[:4] != SDPC_MAGIC:
        raise CloudFormatError(f"bad magic {data[:4]!r}, expected {SDPC_MAGIC!r}")
    version, flags, count = struct.unpack("<HHI", data[4:12])
    if version != SDPC_VERSION:
        raise CloudFormatError(f"unsupported version {version}")
    has_colors = bool(flags & _FLAG_COLORS)
    need = 12 + count * 12 * (2 if has_colors else 1)
    if len(data) < need:
        raise CloudFormatError("unexpected end of stream in point data")
    pts = np.frombuffer(data, dtype="<f4", count=count * 3, offset=12)
    pts = pts.reshape(count, 3).astype(np.float64)
    colors = None
    if has_colors:
        cols = np.frombuffer(data, dtype="<f4", count=count * 3, offset=12 + count * 12)
        colors = cols.reshape(count, 3).astype(np.float64)
    return PointCloud(pts, colors)


def save_sdpc(cloud: PointCloud, path) -> None:
    with open(path, "wb") as f:
        f.write(write_sdpc(cloud))


def load_sdpc(path) -> PointCloud:
    with open(path, "rb") as f:
        return read_sdpc(f.read())
