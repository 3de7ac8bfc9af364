import numpy as np
import pytest
import torch

from scenerecon.geometry import CameraView, PointCloud


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {name}: {status}", flush=True)


def jitter_parameters(module: torch.nn.Module, seed: int = 0, scale: float = 0.05):
    """Randomize every parameter so no gradient path is degenerately zero
    (zero-initialized heads would otherwise make gradient checks vacuous)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)


def finite_difference_grad_error(
    loss_fn, module: torch.nn.Module, seed: int = 0, entries_per_tensor: int = 6,
    delta: float = 1e-5,
) -> dict[str, float]:
    """Central finite differences vs autograd for every trainable tensor.

    Returns {tensor name: norm-based relative error over sampled entries}.
    loss_fn must be deterministic and depend only on the module parameters.
    """
    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    pick = np.random.default_rng(seed)
    errors = {}
    for (name, param), grad in zip(named, grads):
        grad = torch.zeros_like(param) if grad is None else grad
        flat = param.detach().reshape(-1)
        g_flat = grad.reshape(-1)
        idx = pick.choice(flat.numel(), size=min(entries_per_tensor, flat.numel()), replace=False)
        analytic, numeric = [], []
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + delta
            plus = float(loss_fn().detach())
            flat[i] = orig - delta
            minus = float(loss_fn().detach())
            flat[i] = orig
            numeric.append((plus - minus) / (2 * delta))
            analytic.append(float(g_flat[i]))
        analytic = np.array(analytic)
        numeric = np.array(numeric)
        # guarded denominator: key-projection biases are exactly flat
        # directions (softmax shift invariance), leaving 0 vs FD noise
        denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-6)
        errors[name] = float(np.linalg.norm(analytic - numeric) / denom)
    return errors


def random_cloud(rng, n: int, scale: float = 1.0) -> PointCloud:
    return PointCloud(rng.uniform(-scale, scale, size=(n, 3)))


def simple_camera(width=4, height=4, fov90=True, pose=None) -> CameraView:
    """Camera at the origin looking down +z; 90 degree FOV when fov90."""
    fx = width / 2 if fov90 else width
    intr = np.array([[fx, 0, width / 2], [0, fx, height / 2], [0, 0, 1.0]])
    return CameraView(
        intrinsics=intr,
        world_from_camera=np.eye(4) if pose is None else pose,
        width=width,
        height=height,
        near=0.1,
        far=10.0,
    )


def pose_rt(rotation: np.ndarray, translation) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


def rotation_about(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def overlap_camera_pair(width: int = 48, azim: float = 0.3, gap: float = 0.45):
    """Two room cameras ~26 degrees apart sharing a look-at: their frusta
    partially overlap, so raw back-projection unions carry double layers."""
    from scenerecon.synthdata import ROOM_CENTER, _look_at_pose

    views = []
    for a in (azim, azim + gap):
        pos = ROOM_CENTER + 1.5 * np.array(
            [np.cos(0.6) * np.cos(a), np.sin(0.6), np.cos(0.6) * np.sin(a)]
        )
        intr = np.array([[0.8 * width, 0, width / 2], [0, 0.8 * width, width / 2], [0, 0, 1.0]])
        views.append(
            CameraView(intrinsics=intr, world_from_camera=_look_at_pose(pos, ROOM_CENTER),
                       width=width, height=width)
        )
    return views
