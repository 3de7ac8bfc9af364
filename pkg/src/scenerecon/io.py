"""Binary file formats and atomic file writing.

Formats:
  NPC1  point cloud: magic, uint32 LE count, uint8 flags (bit 0 = normals),
        N*3 float32 LE positions, optional N*3 float32 LE normals.
  NDM1  depth map: magic, uint32 LE H, uint32 LE W, H*W float32 LE row-major,
        0.0 marks invalid pixels.
  NIM1  rendered image: magic, uint32 LE H, uint32 LE W, H*W*3 float32 LE
        values in [0, 1].
  Camera: JSON with row-major "intrinsics" (9), "world_from_camera" (16),
        "width", "height", "near", "far".
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .geometry import CameraView, PointCloud

NPC_MAGIC = b"NPC1"
NDM_MAGIC = b"NDM1"
NIM_MAGIC = b"NIM1"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_npc(path: str | Path, cloud: PointCloud) -> None:
    flags = 1 if cloud.has_normals else 0
    parts = [NPC_MAGIC, struct.pack("<IB", len(cloud), flags)]
    parts.append(cloud.points.astype("<f4").tobytes())
    if cloud.has_normals:
        parts.append(cloud.normals.astype("<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_npc(path: str | Path) -> PointCloud:
    data = Path(path).read_bytes()
    if data[:4] != NPC_MAGIC:
        raise ValueError(f"{path}: bad magic, not an NPC1 file")
    n, flags = struct.unpack_from("<IB", data, 4)
    offset = 9
    pts = np.frombuffer(data, dtype="<f4", count=n * 3, offset=offset).reshape(n, 3)
    offset += n * 12
    normals = None
    if flags & 1:
        raw = np.frombuffer(data, dtype="<f4", count=n * 3, offset=offset).reshape(n, 3)
        # float32 round-trip can leave norms slightly off unit; renormalize
        normals = raw.astype(np.float64)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts.astype(np.float64), normals)


def write_ndm(path: str | Path, depth: np.ndarray) -> None:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError("depth must be a 2D array")
    h, w = depth.shape
    atomic_write_bytes(
        path, NDM_MAGIC + struct.pack("<II", h, w) + depth.astype("<f4").tobytes()
    )


def read_ndm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != NDM_MAGIC:
        raise ValueError(f"{path}: bad magic, not an NDM1 file")
    h, w = struct.unpack_from("<II", data, 4)
    return (
        np.frombuffer(data, dtype="<f4", count=h * w, offset=12)
        .reshape(h, w)
        .astype(np.float64)
    )


def write_nim(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    h, w, _ = image.shape
    atomic_write_bytes(
        path, NIM_MAGIC + struct.pack("<II", h, w) + image.astype("<f4").tobytes()
    )


def read_nim(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != NIM_MAGIC:
        raise ValueError(f"{path}: bad magic, not an NIM1 file")
    h, w = struct.unpack_from("<II", data, 4)
    return (
        np.frombuffer(data, dtype="<f4", count=h * w * 3, offset=12)
        .reshape(h, w, 3)
        .astype(np.float64)
    )


def camera_to_dict(view: CameraView) -> dict:
    return {
        "intrinsics": [float(x) for x in view.intrinsics.reshape(-1)],
        "world_from_camera": [float(x) for x in view.world_from_camera.reshape(-1)],
        "width": view.width,
        "height": view.height,
        "near": view.near,
        "far": view.far,
    }


def write_camera(path: str | Path, view: CameraView) -> None:
    atomic_write_text(path, json.dumps(camera_to_dict(view), indent=1))


def camera_from_dict(d: dict) -> CameraView:
    return CameraView(
        intrinsics=np.array(d["intrinsics"], dtype=np.float64).reshape(3, 3),
        world_from_camera=np.array(d["world_from_camera"], dtype=np.float64).reshape(4, 4),
        width=int(d["width"]),
        height=int(d["height"]),
        near=float(d["near"]),
        far=float(d["far"]),
    )


def read_camera(path: str | Path) -> CameraView:
    return camera_from_dict(json.loads(Path(path).read_text()))
