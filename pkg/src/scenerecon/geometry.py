"""Point-cloud and pinhole-camera geometry kernels.

Everything here is a pure function of its inputs: farthest point sampling,
voxel-grid filtering, frustum culling, depth back-projection, covariance
normal estimation and rigid frame changes. These kernels feed the data
pipeline, the evaluation metrics and the model code alike.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

_UNIT_TOL = 1e-6
_ROT_TOL = 1e-6


@dataclass
class PointCloud:
    """An unordered set of 3D points, optionally with unit normals.

    ``points`` is (N, 3) float64. ``normals``, when present, is (N, 3) with
    rows of unit Euclidean norm (tolerance 1e-6).
    """

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if len(self.points) < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points contain non-finite values")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.points.shape:
                raise ValueError(
                    f"normals shape {self.normals.shape} does not match points {self.points.shape}"
                )
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise ValueError("normals must have unit length (tol 1e-6)")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def transformed(self, matrix: np.ndarray) -> "PointCloud":
        """Apply a 4x4 rigid transform to points (and rotate normals)."""
        matrix = np.asarray(matrix, dtype=np.float64)
        pts = self.points @ matrix[:3, :3].T + matrix[:3, 3]
        nrm = None
        if self.normals is not None:
            nrm = self.normals @ matrix[:3, :3].T
        return PointCloud(pts, nrm)


@dataclass
class CameraView:
    """Pinhole camera: intrinsics, world-from-camera pose, image size.

    ``depth`` is an optional (H, W) array of positive depths in scene units;
    0.0 marks invalid pixels. ``near``/``far`` bound the viewing frustum.
    """

    intrinsics: np.ndarray
    world_from_camera: np.ndarray
    width: int
    height: int
    depth: np.ndarray | None = None
    near: float = 0.01
    far: float = 100.0
    image: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.world_from_camera = np.asarray(self.world_from_camera, dtype=np.float64)
        if self.intrinsics.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if self.world_from_camera.shape != (4, 4):
            raise ValueError("world_from_camera must be 4x4")
        R = self.world_from_camera[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=_ROT_TOL):
            raise ValueError("rotation block is not orthonormal")
        if np.linalg.det(R) < 1.0 - _ROT_TOL:
            raise ValueError("rotation block must have determinant +1")
        fx, fy = self.intrinsics[0, 0], self.intrinsics[1, 1]
        cx, cy = self.intrinsics[0, 2], self.intrinsics[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float64)
            if self.depth.shape != (self.height, self.width):
                raise ValueError(
                    f"depth shape {self.depth.shape} does not match image size "
                    f"({self.height}, {self.width})"
                )

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    def camera_from_world(self) -> np.ndarray:
        R = self.world_from_camera[:3, :3]
        t = self.world_from_camera[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = R.T
        inv[:3, 3] = -R.T @ t
        return inv


def farthest_point_sample(cloud: PointCloud, m: int, seed_index: int) -> np.ndarray:
    """Greedy minimax subset selection: m indices starting at seed_index.

    Each new index maximizes the minimum distance to the already-selected
    points; exact ties resolve to the lowest index, so the output is fully
    deterministic given the seed.
    """
    pts = cloud.points
    n = len(pts)
    if not 1 <= m <= n:
        raise ValueError(f"m must be in [1, {n}], got {m}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index must be in [0, {n}), got {seed_index}")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed_index
    min_sq = ((pts - pts[seed_index]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_sq))  # argmax returns the lowest tied index
        selected[i] = nxt
        min_sq = np.minimum(min_sq, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return selected


def voxel_filter(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Collapse each occupied voxel to the centroid of its member points.

    The grid is axis-aligned, floor-quantized and anchored at the origin.
    Output points are ordered by ascending lexicographic voxel key.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, cloud.points)
    return PointCloud(sums / counts[:, None])


def default_voxel_size(cloud: PointCloud) -> float:
    """0.01 of the aggregated cloud's bounding-box diagonal."""
    return 0.01 * cloud.bbox_diagonal()


def _in_frustum(points: np.ndarray, view: CameraView) -> np.ndarray:
    """Boolean mask: point inside this view's frustum."""
    cam = view.camera_from_world()
    p = points @ cam[:3, :3].T + cam[:3, 3]
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = view.fx * p[:, 0] / z + view.cx
        v = view.fy * p[:, 1] / z + view.cy
    ok = (z > view.near) & (z < view.far)
    ok &= (u >= 0) & (u < view.width) & (v >= 0) & (v < view.height)
    return ok


def frustum_cull(cloud: PointCloud, views: list[CameraView]) -> PointCloud:
    """Keep points inside the union of the views' frusta, order preserved."""
    if not views:
        raise ValueError("frustum_cull requires at least one view")
    keep = np.zeros(len(cloud), dtype=bool)
    for view in views:
        keep |= _in_frustum(cloud.points, view)
    if not keep.any():
        raise ValueError("no points survive frustum culling")
    nrm = cloud.normals[keep] if cloud.normals is not None else None
    return PointCloud(cloud.points[keep], nrm)


def frustum_mask(cloud: PointCloud, views: list[CameraView]) -> np.ndarray:
    """Union-of-frusta membership mask without dropping points."""
    if not views:
        raise ValueError("frustum_mask requires at least one view")
    keep = np.zeros(len(cloud), dtype=bool)
    for view in views:
        keep |= _in_frustum(cloud.points, view)
    return keep


def backproject_depth(view: CameraView) -> PointCloud:
    """Lift every valid depth pixel to a world-frame 3D point.

    Uses the pixel-center convention (u + 0.5, v + 0.5); pixels with
    depth <= 0 are skipped. Output follows row-major pixel order.
    """
    if view.depth is None:
        raise ValueError("view has no depth map")
    depth = view.depth
    vs, us = np.nonzero(depth > 0)
    if len(us) == 0:
        raise ValueError("depth map has no valid pixels")
    z = depth[vs, us]
    x = (us + 0.5 - view.cx) / view.fx * z
    y = (vs + 0.5 - view.cy) / view.fy * z
    cam_pts = np.stack([x, y, z], axis=1)
    T = view.world_from_camera
    return PointCloud(cam_pts @ T[:3, :3].T + T[:3, 3])


def estimate_normals(cloud: PointCloud, k: int) -> PointCloud:
    """Per-point normals from the smallest eigenvector of the k-NN covariance.

    The neighborhood is the k nearest points including the query point
    itself. Signs are normalized so the component of largest magnitude is
    positive. Degenerate (zero-covariance) neighborhoods fall back to
    (0, 0, 1) and raise a warning.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    n = len(cloud)
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k)
    neigh = cloud.points[idx]  # (N, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    degenerate = np.abs(cov).max(axis=(1, 2)) < 1e-18
    cov[degenerate] = np.eye(3)  # placeholder, overwritten below
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # eigenvector of the smallest eigenvalue
    dominant = np.abs(normals).argmax(axis=1)
    signs = np.sign(normals[np.arange(n), dominant])
    signs[signs == 0] = 1.0
    normals = normals * signs[:, None]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)
        warnings.warn(
            f"{int(degenerate.sum())} degenerate normal neighborhoods set to (0, 0, 1)",
            RuntimeWarning,
            stacklevel=2,
        )
    return PointCloud(cloud.points.copy(), normals)


def to_first_view_frame(cloud: PointCloud, first_view: CameraView) -> PointCloud:
    """Express the cloud in the first view's camera coordinate system."""
    return cloud.transformed(first_view.camera_from_world())
