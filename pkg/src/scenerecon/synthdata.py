"""Procedural scenes, analytic depth rendering and dataset assembly.

Scenes are rooms populated with boxes and spheres. Because every surface is
analytic, the pipeline has exact oracles real scan datasets cannot offer:
ray casting gives exact depth and visibility, surface sampling gives exact
complete clouds, and signed distances verify every generated point.

Complete clouds cover visible and occluded surfaces inside the union of the
input-view frusta and are expressed in the first view's frame, which also
defines the per-sample normalization into the [-0.9, 0.9] cube used for
training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as sio
from .config import ConfigError
from .geometry import (
    CameraView,
    PointCloud,
    default_voxel_size,
    frustum_mask,
    to_first_view_frame,
    voxel_filter,
)

_EPS = 1e-9
_RAY_EPS = 1e-6


@dataclass
class Primitive:
    shape: str  # "box" | "sphere"
    center: np.ndarray
    half_extents: np.ndarray | None = None
    radius: float | None = None
    rotation: np.ndarray | None = None  # box orientation, world = c + R @ local

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.shape == "box":
            if self.half_extents is None:
                raise ValueError("box needs half_extents")
            self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
            if self.rotation is None:
                self.rotation = np.eye(3)
            else:
                self.rotation = np.asarray(self.rotation, dtype=np.float64)
        elif self.shape == "sphere":
            if self.radius is None or self.radius <= 0:
                raise ValueError("sphere needs a positive radius")
        else:
            raise ValueError(f"unknown primitive shape {self.shape!r}")

    def surface_area(self) -> float:
        if self.shape == "sphere":
            return 4.0 * np.pi * self.radius**2
        a, b, c = self.half_extents
        return 8.0 * (a * b + b * c + a * c)

    def bounding_radius(self) -> float:
        if self.shape == "sphere":
            return float(self.radius)
        return float(np.linalg.norm(self.half_extents))

    def sample_surface(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Area-uniform surface points and their outward unit normals."""
        if self.shape == "sphere":
            d = rng.normal(size=(n, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            return self.center + self.radius * d, d
        a, b, c = self.half_extents
        face_areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b]) * 4.0
        faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        uv = rng.uniform(-1.0, 1.0, size=(n, 2))
        local = np.empty((n, 3))
        normal_local = np.zeros((n, 3))
        for f in range(6):
            m = faces == f
            axis, sign = divmod(f, 2)
            sign = 1.0 if sign == 0 else -1.0
            others = [i for i in range(3) if i != axis]
            local[np.ix_(m, others)] = uv[m] * self.half_extents[others]
            local[m, axis] = sign * self.half_extents[axis]
            normal_local[m, axis] = sign
        pts = self.center + local @ self.rotation.T
        normals = normal_local @ self.rotation.T
        return pts, normals

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance, negative inside."""
        if self.shape == "sphere":
            return np.linalg.norm(points - self.center, axis=1) - self.radius
        local = (points - self.center) @ self.rotation
        q = np.abs(local) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def ray_intersect(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """First positive hit parameter t per ray (inf on miss) + hit normal."""
        n = len(origins)
        if self.shape == "sphere":
            oc = origins - self.center
            a = np.einsum("ij,ij->i", dirs, dirs)
            b = 2.0 * np.einsum("ij,ij->i", dirs, oc)
            c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
            disc = b * b - 4 * a * c
            hit = disc >= 0
            t = np.full(n, np.inf)
            sq = np.sqrt(np.maximum(disc, 0.0))
            t0 = (-b - sq) / (2 * a)
            t1 = (-b + sq) / (2 * a)
            tt = np.where(t0 > _RAY_EPS, t0, t1)
            valid = hit & (tt > _RAY_EPS)
            t[valid] = tt[valid]
            normals = np.zeros_like(dirs)
            p_hit = origins[valid] + t[valid, None] * dirs[valid]
            normals[valid] = (p_hit - self.center) / self.radius
            return t, normals
        o = (origins - self.center) @ self.rotation
        d = dirs @ self.rotation
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self.half_extents - o) * inv
            t2 = (self.half_extents - o) * inv
        lo = np.nan_to_num(np.fmin(t1, t2), nan=-np.inf)
        hi = np.nan_to_num(np.fmax(t1, t2), nan=np.inf)
        tmin = lo.max(axis=1)
        tmax = hi.min(axis=1)
        entry = np.where(tmin > _RAY_EPS, tmin, tmax)
        valid = (tmax >= np.maximum(tmin, _RAY_EPS)) & (entry > _RAY_EPS)
        t = np.where(valid, entry, np.inf)
        normals = np.zeros((n, 3))
        if valid.any():
            p_local = o[valid] + t[valid, None] * d[valid]
            closeness = np.abs(p_local) / np.maximum(self.half_extents, _EPS)
            axis = closeness.argmax(axis=1)
            rows = np.arange(len(p_local))
            normal_local = np.zeros((len(p_local), 3))
            normal_local[rows, axis] = np.sign(p_local[rows, axis])
            normals[valid] = normal_local @ self.rotation.T
        return t, normals

    def to_dict(self) -> dict:
        d = {"shape": self.shape, "center": self.center.tolist()}
        if self.shape == "box":
            d["half_extents"] = self.half_extents.tolist()
            d["rotation"] = self.rotation.reshape(-1).tolist()
        else:
            d["radius"] = float(self.radius)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        if d["shape"] == "box":
            return cls(
                "box",
                np.array(d["center"]),
                half_extents=np.array(d["half_extents"]),
                rotation=np.array(d["rotation"]).reshape(3, 3),
            )
        return cls("sphere", np.array(d["center"]), radius=float(d["radius"]))


_WALL_THICKNESS = 0.1


def wall_primitives(room_bounds: tuple[np.ndarray, np.ndarray]) -> list[Primitive]:
    """Floor plus four side walls as thin boxes; the top stays open."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in room_bounds)
    size = hi - lo
    mid = 0.5 * (lo + hi)
    tk = _WALL_THICKNESS
    walls = [
        Primitive("box", [mid[0], lo[1] - tk / 2, mid[2]],
                  half_extents=[size[0] / 2 + tk, tk / 2, size[2] / 2 + tk]),
        Primitive("box", [lo[0] - tk / 2, mid[1], mid[2]],
                  half_extents=[tk / 2, size[1] / 2, size[2] / 2 + tk]),
        Primitive("box", [hi[0] + tk / 2, mid[1], mid[2]],
                  half_extents=[tk / 2, size[1] / 2, size[2] / 2 + tk]),
        Primitive("box", [mid[0], mid[1], lo[2] - tk / 2],
                  half_extents=[size[0] / 2 + tk, size[1] / 2, tk / 2]),
        Primitive("box", [mid[0], mid[1], hi[2] + tk / 2],
                  half_extents=[size[0] / 2 + tk, size[1] / 2, tk / 2]),
    ]
    return walls


@dataclass
class SceneSpec:
    """Seeded layout of primitives inside an (optional) walled room."""

    seed: int
    primitives: list[Primitive]
    room_bounds: tuple[np.ndarray, np.ndarray] | None = None

    def all_surfaces(self) -> list[Primitive]:
        if self.room_bounds is None:
            return list(self.primitives)
        return list(self.primitives) + wall_primitives(self.room_bounds)

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "primitives": [p.to_dict() for p in self.primitives]}
        if self.room_bounds is not None:
            d["room_bounds"] = [self.room_bounds[0].tolist(), self.room_bounds[1].tolist()]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        rb = None
        if "room_bounds" in d:
            rb = (np.array(d["room_bounds"][0]), np.array(d["room_bounds"][1]))
        return cls(d["seed"], [Primitive.from_dict(p) for p in d["primitives"]], rb)


ROOM_LO = np.array([-2.0, 0.0, -2.0])
ROOM_HI = np.array([2.0, 3.0, 2.0])


def generate_scene(seed: int) -> SceneSpec:
    """Deterministic placement of 3..12 primitives in a 4x3x4 walled room."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(3, 13))
    prims = []
    for _ in range(count):
        if rng.random() < 0.6:
            half = rng.uniform(0.15, 0.6, size=3)
            yaw = rng.uniform(0.0, 2 * np.pi)
            cy, sy = np.cos(yaw), np.sin(yaw)
            rot = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
            margin = float(np.linalg.norm(half))
            center = _random_center(rng, margin)
            prims.append(Primitive("box", center, half_extents=half, rotation=rot))
        else:
            radius = float(rng.uniform(0.15, 0.5))
            center = _random_center(rng, radius)
            prims.append(Primitive("sphere", center, radius=radius))
    return SceneSpec(seed=seed, primitives=prims, room_bounds=(ROOM_LO.copy(), ROOM_HI.copy()))


def _random_center(rng: np.random.Generator, margin: float) -> np.ndarray:
    lo = ROOM_LO + margin
    hi = ROOM_HI - margin
    hi = np.maximum(hi, lo + 1e-6)
    return rng.uniform(lo, hi)


def generate_object_scene(seed: int) -> SceneSpec:
    """Single primitive at the origin, no walls: the object-level regime
    where per-point densities give strict F-score thresholds usable range."""
    rng = np.random.default_rng([seed, 3])
    if rng.random() < 0.5:
        half = rng.uniform(0.25, 0.55, size=3)
        yaw = rng.uniform(0.0, 2 * np.pi)
        cy, sy = np.cos(yaw), np.sin(yaw)
        rot = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        prim = Primitive("box", [0.0, 0.0, 0.0], half_extents=half, rotation=rot)
    else:
        prim = Primitive("sphere", [0.0, 0.0, 0.0], radius=float(rng.uniform(0.3, 0.55)))
    return SceneSpec(seed=seed, primitives=[prim], room_bounds=None)


def orbit_camera(
    rng: np.random.Generator,
    target: np.ndarray | None = None,
    radius: float = 2.5,
    width: int = 32,
) -> CameraView:
    """Camera on a jittered orbit looking at a target (default: the origin)."""
    target = np.zeros(3) if target is None else np.asarray(target, dtype=np.float64)
    azim = rng.uniform(0.0, 2 * np.pi)
    elev = rng.uniform(0.2, 0.9)
    pos = target + radius * np.array(
        [np.cos(elev) * np.cos(azim), np.sin(elev), np.cos(elev) * np.sin(azim)]
    )
    intr = np.array([[0.9 * width, 0, width / 2], [0, 0.9 * width, width / 2], [0, 0, 1.0]])
    return CameraView(intrinsics=intr, world_from_camera=_look_at_pose(pos, target),
                      width=width, height=width)


def object_training_cloud(seed: int, n: int = 2048) -> np.ndarray:
    """Normalized complete cloud of a single-object scene seen from 2 views."""
    scene = generate_object_scene(seed)
    rng = np.random.default_rng([seed, 5])
    views = [orbit_camera(rng) for _ in range(2)]
    cloud = sample_complete_cloud(scene, views, n, np.random.default_rng([seed, 9]))
    scale, offset = normalization_for(cloud)
    return (cloud.points - offset) * scale


def ray_first_hit(
    scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest positive intersection over all scene surfaces (inf on miss)."""
    best_t = np.full(len(origins), np.inf)
    best_n = np.zeros_like(dirs)
    for prim in scene.all_surfaces():
        t, n = prim.ray_intersect(origins, dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_n[closer] = n[closer]
    return best_t, best_n


def _pixel_rays(view: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """World-frame origins/directions for pixel-center rays; dir has unit
    camera-frame z, so the hit parameter equals the camera-space depth."""
    us, vs = np.meshgrid(np.arange(view.width), np.arange(view.height))
    x = (us.ravel() + 0.5 - view.cx) / view.fx
    y = (vs.ravel() + 0.5 - view.cy) / view.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    R = view.world_from_camera[:3, :3]
    origin = view.world_from_camera[:3, 3]
    dirs = dirs_cam @ R.T
    origins = np.broadcast_to(origin, dirs.shape)
    return origins, dirs


def render_depth(scene: SceneSpec, view: CameraView) -> np.ndarray:
    """Analytic ray-cast depth map; 0 marks rays that miss everything."""
    origins, dirs = _pixel_rays(view)
    t, _ = ray_first_hit(scene, origins, dirs)
    depth = np.where(np.isfinite(t), t, 0.0)
    return depth.reshape(view.height, view.width)


_LIGHT = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)


def render_shaded(scene: SceneSpec, view: CameraView) -> np.ndarray:
    """Lambertian gray render: clamp(0.2 + 0.8 * max(0, n . l))."""
    origins, dirs = _pixel_rays(view)
    t, normals = ray_first_hit(scene, origins, dirs)
    hit = np.isfinite(t)
    shade = np.clip(0.2 + 0.8 * np.maximum(0.0, normals @ _LIGHT), 0.0, 1.0)
    shade = np.where(hit, shade, 0.0)
    return np.repeat(shade.reshape(view.height, view.width, 1), 3, axis=2)


def surface_distance(scene: SceneSpec, points: np.ndarray) -> np.ndarray:
    """Distance to the nearest primitive surface (unions ignored)."""
    best = np.full(len(points), np.inf)
    for prim in scene.all_surfaces():
        best = np.minimum(best, np.abs(prim.sdf(points)))
    return best


def point_visibility(scene: SceneSpec, views: list[CameraView], points_world: np.ndarray) -> np.ndarray:
    """(N, K) bool: point inside view's frustum and unoccluded (exact rays)."""
    cloud = PointCloud(points_world)
    out = np.zeros((len(points_world), len(views)), dtype=bool)
    for j, view in enumerate(views):
        in_frustum = frustum_mask(cloud, [view])
        cam = view.world_from_camera[:3, 3]
        dirs = points_world - cam
        t, _ = ray_first_hit(scene, np.broadcast_to(cam, dirs.shape), dirs)
        unoccluded = t >= 1.0 - 1e-6  # param of the point itself is exactly 1
        out[:, j] = in_frustum & unoccluded
    return out


def occluded_fraction(scene: SceneSpec, views: list[CameraView], points_world: np.ndarray) -> float:
    """Fraction of points visible in no input view."""
    vis = point_visibility(scene, views, points_world)
    return float(1.0 - vis.any(axis=1).mean())


def sample_complete_cloud(
    scene: SceneSpec,
    views: list[CameraView],
    n: int,
    rng: np.random.Generator,
    max_rounds: int = 100,
) -> PointCloud:
    """Area-weighted surface samples inside the frustum union, first-view frame.

    Occluded surfaces contribute exactly like visible ones; sampling repeats
    until n points survive the frustum cull.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    surfaces = scene.all_surfaces()
    areas = np.array([p.surface_area() for p in surfaces])
    weights = areas / areas.sum()
    kept_pts, kept_nrm = [], []
    total = 0
    for _ in range(max_rounds):
        draw = max(n, 4096)
        counts = rng.multinomial(draw, weights)
        pts = np.empty((draw, 3))
        nrm = np.empty((draw, 3))
        at = 0
        for prim, cnt in zip(surfaces, counts):
            if cnt == 0:
                continue
            pts[at : at + cnt], nrm[at : at + cnt] = prim.sample_surface(cnt, rng)
            at += cnt
        mask = frustum_mask(PointCloud(pts), views)
        if mask.any():
            kept_pts.append(pts[mask])
            kept_nrm.append(nrm[mask])
            total += int(mask.sum())
        if total >= n:
            pts = np.concatenate(kept_pts)[:n]
            nrm = np.concatenate(kept_nrm)[:n]
            return to_first_view_frame(PointCloud(pts, nrm), views[0])
    raise ValueError(f"frustum intersects no surface after {max_rounds} sampling rounds")


def backproject_union(views: list[CameraView]) -> PointCloud:
    """Raw union of all views' depth back-projections, world frame."""
    from .geometry import backproject_depth

    parts = [backproject_depth(v).points for v in views]
    return PointCloud(np.concatenate(parts))


def build_visible_cloud(views: list[CameraView], voxel_size: float | None = None) -> PointCloud:
    """Voxel-filtered union of depth back-projections, first-view frame."""
    union = backproject_union(views)
    if voxel_size is None:
        voxel_size = default_voxel_size(union)
    return to_first_view_frame(voxel_filter(union, voxel_size), views[0])


ROOM_CENTER = np.array([0.0, 1.4, 0.0])


def _look_at_pose(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """world_from_camera with +z forward, +y down in image space."""
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 1.0, 0.0])
    if abs(forward @ up) > 0.999:
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    T = np.eye(4)
    T[:3, 0] = right
    T[:3, 1] = down
    T[:3, 2] = forward
    T[:3, 3] = position
    return T


def place_camera(rng: np.random.Generator, width: int = 64, height: int = 64) -> CameraView:
    """Camera on a jittered hemisphere inside the room, looking near center."""
    azim = rng.uniform(0.0, 2 * np.pi)
    elev = rng.uniform(np.deg2rad(10), np.deg2rad(50))
    radius = rng.uniform(1.2, 1.8)
    position = ROOM_CENTER + radius * np.array(
        [np.cos(elev) * np.cos(azim), np.sin(elev), np.cos(elev) * np.sin(azim)]
    )
    target = ROOM_CENTER + rng.uniform(-0.4, 0.4, size=3)
    fx = 0.8 * width
    intrinsics = np.array([[fx, 0, width / 2], [0, fx, height / 2], [0, 0, 1]])
    return CameraView(
        intrinsics=intrinsics,
        world_from_camera=_look_at_pose(position, target),
        width=width,
        height=height,
    )


@dataclass
class SceneSample:
    """One dataset record: rendered views + ground-truth clouds + normalization."""

    sample_id: str
    split: str
    scene: SceneSpec
    views: list[CameraView]
    complete_cloud: PointCloud  # first-view frame, scene units
    visible_cloud: PointCloud  # first-view frame, scene units
    norm_scale: float
    norm_offset: np.ndarray

    @property
    def k(self) -> int:
        return len(self.views)

    def normalize(self, points: np.ndarray) -> np.ndarray:
        return (points - self.norm_offset) * self.norm_scale

    def denormalize(self, points: np.ndarray) -> np.ndarray:
        return points / self.norm_scale + self.norm_offset

    def normalized_complete(self) -> np.ndarray:
        return self.normalize(self.complete_cloud.points)

    def normalized_visible(self) -> np.ndarray:
        return self.normalize(self.visible_cloud.points)

    def images(self) -> list[np.ndarray]:
        return [v.image for v in self.views]


def normalization_for(cloud: PointCloud) -> tuple[float, np.ndarray]:
    """Isotropic map of the cloud's bbox into the [-0.9, 0.9] cube."""
    lo, hi = cloud.bbox()
    extent = float((hi - lo).max())
    scale = 1.8 / max(extent, _EPS)
    offset = 0.5 * (lo + hi)
    return scale, offset


def make_scene_sample(
    sample_id: str,
    split: str,
    seed: int,
    k: int,
    n_complete: int = 2048,
    image_size: int = 64,
    render_images: bool = True,
    voxel_size: float | None = None,
) -> SceneSample:
    scene = generate_scene(seed)
    rng = np.random.default_rng([seed, 7])
    views = []
    for _ in range(k):
        view = place_camera(rng, image_size, image_size)
        view.depth = render_depth(scene, view)
        if render_images:
            view.image = render_shaded(scene, view)
        views.append(view)
    complete = sample_complete_cloud(scene, views, n_complete, rng)
    visible = build_visible_cloud(views, voxel_size)
    scale, offset = normalization_for(complete)
    return SceneSample(
        sample_id=sample_id,
        split=split,
        scene=scene,
        views=views,
        complete_cloud=complete,
        visible_cloud=visible,
        norm_scale=scale,
        norm_offset=offset,
    )


@dataclass
class DatasetConfig:
    """Knobs for gen-data; deterministic given identical values."""

    train: int = 64
    val: int = 8
    k_choices: tuple[int, ...] = (1, 2)
    n_complete: int = 2048
    image_size: int = 64
    base_seed: int = 0
    voxel_size: float | None = None  # visible-cloud filter; None = 1% of diag

    def __post_init__(self):
        self.k_choices = tuple(int(k) for k in self.k_choices)
        if self.train < 0 or self.val < 0 or self.train + self.val == 0:
            raise ValueError("need at least one sample")
        if any(k < 1 for k in self.k_choices):
            raise ValueError("k_choices must be >= 1")


def build_dataset(config: DatasetConfig, out_dir: str | Path) -> Path:
    """Write NPC/NDM/NIM/camera files plus a JSON-lines manifest; returns the
    manifest path. Rebuilding with the same config is byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    jobs = [("train", i) for i in range(config.train)] + [("val", i) for i in range(config.val)]
    for split, i in jobs:
        sample_id = f"{split}_{i:04d}"
        seed = config.base_seed + i if split == "train" else config.base_seed + 100_000 + i
        k = int(config.k_choices[seed % len(config.k_choices)])
        sample = make_scene_sample(
            sample_id, split, seed, k, config.n_complete, config.image_size,
            voxel_size=config.voxel_size,
        )
        rel = Path("samples") / sample_id
        sdir = out_dir / rel
        sio.write_npc(sdir / "complete.npc", sample.complete_cloud)
        sio.write_npc(sdir / "visible.npc", sample.visible_cloud)
        view_entries = []
        for j, view in enumerate(sample.views):
            sio.write_ndm(sdir / f"view{j}.ndm", view.depth)
            sio.write_nim(sdir / f"view{j}.nim", view.image)
            sio.write_camera(sdir / f"view{j}.cam.json", view)
            view_entries.append(
                {
                    "depth": str(rel / f"view{j}.ndm"),
                    "image": str(rel / f"view{j}.nim"),
                    "camera": str(rel / f"view{j}.cam.json"),
                }
            )
        records.append(
            {
                "id": sample_id,
                "split": split,
                "seed": seed,
                "k": k,
                "complete": str(rel / "complete.npc"),
                "visible": str(rel / "visible.npc"),
                "views": view_entries,
                "norm_scale": sample.norm_scale,
                "norm_offset": sample.norm_offset.tolist(),
            }
        )
    manifest = out_dir / "manifest.jsonl"
    sio.atomic_write_text(manifest, "".join(json.dumps(r) + "\n" for r in records))
    return manifest


@dataclass
class LoadedSample:
    """A manifest record pulled back into memory for training/eval."""

    record: dict
    complete: PointCloud
    visible: PointCloud
    images: list[np.ndarray]
    views: list[CameraView]

    @property
    def sample_id(self) -> str:
        return self.record["id"]

    @property
    def k(self) -> int:
        return int(self.record["k"])

    @property
    def norm_scale(self) -> float:
        return float(self.record["norm_scale"])

    @property
    def norm_offset(self) -> np.ndarray:
        return np.array(self.record["norm_offset"], dtype=np.float64)

    def normalize(self, points: np.ndarray) -> np.ndarray:
        return (points - self.norm_offset) * self.norm_scale

    def denormalize(self, points: np.ndarray) -> np.ndarray:
        return points / self.norm_scale + self.norm_offset

    def normalized_complete(self) -> np.ndarray:
        return self.normalize(self.complete.points)

    def normalized_visible(self) -> np.ndarray:
        return self.normalize(self.visible.points)


def read_manifest(manifest_path: str | Path, split: str | None = None) -> list[dict]:
    records = []
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if split is None or rec["split"] == split:
                records.append(rec)
    return records


def load_sample(record: dict, root: str | Path, load_images: bool = True) -> LoadedSample:
    root = Path(root)
    views = []
    images = []
    for entry in record["views"]:
        view = sio.read_camera(root / entry["camera"])
        view.depth = sio.read_ndm(root / entry["depth"])
        if load_images:
            view.image = sio.read_nim(root / entry["image"])
            images.append(view.image)
        views.append(view)
    return LoadedSample(
        record=record,
        complete=sio.read_npc(root / record["complete"]),
        visible=sio.read_npc(root / record["visible"]),
        images=images,
        views=views,
    )


def validate_manifest(manifest_path: str | Path) -> int:
    """Re-read every referenced file; returns the record count."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = read_manifest(manifest_path)
    if not records:
        raise ConfigError(f"{manifest_path}: manifest is empty")
    for rec in records:
        load_sample(rec, root)
    return len(records)
