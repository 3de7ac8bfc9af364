"""Geometric evaluation metrics for predicted vs. ground-truth point clouds.

Chamfer distance (symmetric and one-sided), F-score at distance thresholds,
hole-area ratio, local density variance and accuracy/completion/normal
consistency. Nearest neighbors run through a k-d tree for speed, with the
final distance recomputed in plain numpy so values match an O(N^2)
brute-force oracle bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, estimate_normals


def _nn(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each src point: (distance to, index of) its nearest dst point."""
    tree = cKDTree(dst)
    _, idx = tree.query(src, k=1)
    d = np.sqrt(((src - dst[idx]) ** 2).sum(axis=1))
    return d, idx


def _lower_median(values: np.ndarray) -> float:
    """Median with the lower-of-two convention for even counts."""
    s = np.sort(values)
    return float(s[(len(s) - 1) // 2])


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric Chamfer distance: half the sum of both mean NN distances."""
    d_ab, _ = _nn(a.points, b.points)
    d_ba, _ = _nn(b.points, a.points)
    return float(0.5 * (np.mean(d_ab) + np.mean(d_ba)))


def one_sided_chamfer(from_cloud: PointCloud, to_cloud: PointCloud) -> float:
    """Mean NN distance from each `from` point to the `to` cloud."""
    d, _ = _nn(from_cloud.points, to_cloud.points)
    return float(np.mean(d))


def _precision_recall(pred: PointCloud, gt: PointCloud, tau: float) -> tuple[float, float]:
    d_pg, _ = _nn(pred.points, gt.points)
    d_gp, _ = _nn(gt.points, pred.points)
    return float(np.mean(d_pg <= tau)), float(np.mean(d_gp <= tau))


def fscore(pred: PointCloud, gt: PointCloud, tau: float) -> float:
    """Harmonic mean of precision and recall at threshold tau (0 if P+R=0)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    p, r = _precision_recall(pred, gt, tau)
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


def hole_ratio(pred: PointCloud, gt: PointCloud, tau: float = 0.1) -> float:
    """Fraction of gt points with no prediction within tau.

    Computed literally as 1 - recall so the identity with the F-score's
    recall component holds exactly, not just to rounding.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    _, r = _precision_recall(pred, gt, tau)
    return 1.0 - r


def density_variance(cloud: PointCloud, k: int = 10) -> float:
    """Squared coefficient of variation of inverse k-th-NN radii.

    rho_i = 1 / r_i with r_i the distance from point i to its k-th nearest
    neighbor; returns Var(rho) / Mean(rho)^2, which is invariant to uniform
    scaling and rigid motion. High values flag duplicated layers or gaps.
    """
    n = len(cloud)
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    tree = cKDTree(cloud.points)
    d, _ = tree.query(cloud.points, k=k + 1)  # column 0 is the point itself
    r = d[:, k]
    zero = np.nonzero(r == 0)[0]
    if len(zero):
        raise ValueError(
            f"k-th neighbor distance is zero at point index {int(zero[0])} "
            "(duplicate points)"
        )
    rho = 1.0 / r
    return float(np.var(rho) / np.mean(rho) ** 2)


def acc_comp_nc(pred: PointCloud, gt: PointCloud) -> dict[str, float]:
    """Accuracy, completion and normal consistency (mean and lower-median).

    acc: pred-to-gt NN distances; comp: gt-to-pred. NC averages the absolute
    normal dot products over both matching directions; normals are estimated
    with k=16 when a cloud does not carry them.
    """
    if not pred.has_normals:
        pred = estimate_normals(pred, k=16)
    if not gt.has_normals:
        gt = estimate_normals(gt, k=16)
    d_pg, i_pg = _nn(pred.points, gt.points)
    d_gp, i_gp = _nn(gt.points, pred.points)
    dot_fwd = np.abs(np.einsum("ij,ij->i", pred.normals, gt.normals[i_pg]))
    dot_bwd = np.abs(np.einsum("ij,ij->i", gt.normals, pred.normals[i_gp]))
    return {
        "acc_mean": float(np.mean(d_pg)),
        "acc_median": _lower_median(d_pg),
        "comp_mean": float(np.mean(d_gp)),
        "comp_median": _lower_median(d_gp),
        "nc_mean": 0.5 * (float(np.mean(dot_fwd)) + float(np.mean(dot_bwd))),
        "nc_median": 0.5 * (_lower_median(dot_fwd) + _lower_median(dot_bwd)),
    }


DEFAULT_FS_TAUS = (0.1, 0.05, 0.02)


@dataclass
class MetricReport:
    """Flat bundle of every evaluation metric for one prediction/gt pair."""

    cd: float
    one_sided_cd: float
    fscore: dict[float, float]
    hole_ratio: float
    density_var: float
    acc_mean: float
    acc_median: float
    comp_mean: float
    comp_median: float
    nc_mean: float
    nc_median: float
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for tau, v in self.fscore.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"fscore@{tau} out of [0,1]: {v}")
        for name in ("hole_ratio", "nc_mean", "nc_median"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of [0,1]: {v}")
        for name in ("cd", "one_sided_cd", "density_var", "acc_mean",
                     "acc_median", "comp_mean", "comp_median"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_flat_dict(self) -> dict[str, float]:
        out = {"cd": self.cd, "one_sided_cd": self.one_sided_cd}
        for tau in sorted(self.fscore, reverse=True):
            out[f"fs@{tau:g}"] = self.fscore[tau]
        out.update(
            hole_ratio=self.hole_ratio,
            density_var=self.density_var,
            acc_mean=self.acc_mean,
            acc_median=self.acc_median,
            comp_mean=self.comp_mean,
            comp_median=self.comp_median,
            nc_mean=self.nc_mean,
            nc_median=self.nc_median,
        )
        return out


def compute_report(
    pred: PointCloud,
    gt: PointCloud,
    fs_taus: tuple[float, ...] = DEFAULT_FS_TAUS,
    hole_tau: float | None = None,
    density_k: int = 10,
) -> MetricReport:
    """Run the full metric suite; hole_tau defaults to 0.1 of the gt diagonal."""
    if hole_tau is None:
        hole_tau = 0.1 * gt.bbox_diagonal()
    return MetricReport(
        cd=chamfer(pred, gt),
        one_sided_cd=one_sided_chamfer(gt, pred),
        fscore={tau: fscore(pred, gt, tau) for tau in fs_taus},
        hole_ratio=hole_ratio(pred, gt, hole_tau),
        density_var=density_variance(pred, k=density_k),
        **acc_comp_nc(pred, gt),
    )
