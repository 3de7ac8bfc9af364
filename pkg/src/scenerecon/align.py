"""Translation + global-scale alignment of a predicted cloud to ground truth.

Non-pixel-aligned predictions share the first view's frame with the ground
truth up to a residual shift and scale, so alignment optimizes exactly those
two: a 3-vector t and a single positive s (via log s), minimizing the
symmetric Chamfer distance of s*pred + t against gt with Adam. Rotation is
deliberately not optimized. Nearest-neighbor assignments are held fixed
within each gradient step and recomputed every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class Alignment:
    translation: np.ndarray
    scale: float
    final_objective: float

    def apply(self, cloud: PointCloud) -> PointCloud:
        return PointCloud(self.scale * cloud.points + self.translation, cloud.normals)

    def to_dict(self) -> dict:
        return {
            "translation": [float(x) for x in self.translation],
            "scale": float(self.scale),
            "objective": float(self.final_objective),
        }


def _objective_and_grad(pred, gt, gt_tree, t, log_s):
    s = np.exp(log_s)
    moved = s * pred + t
    _, idx_pg = gt_tree.query(moved, k=1)
    moved_tree = cKDTree(moved)
    _, idx_gp = moved_tree.query(gt, k=1)

    r_pg = moved - gt[idx_pg]                  # residuals pred -> gt
    r_gp = moved[idx_gp] - gt                  # residuals gt -> pred (same sign conv.)
    d_pg = np.linalg.norm(r_pg, axis=1)
    d_gp = np.linalg.norm(r_gp, axis=1)
    obj = 0.5 * (d_pg.mean() + d_gp.mean())

    u_pg = r_pg / np.maximum(d_pg, 1e-12)[:, None]
    u_gp = r_gp / np.maximum(d_gp, 1e-12)[:, None]
    grad_t = 0.5 * (u_pg.mean(axis=0) + u_gp.mean(axis=0))
    dot_pg = np.einsum("ij,ij->i", u_pg, pred)
    dot_gp = np.einsum("ij,ij->i", u_gp, pred[idx_gp])
    grad_log_s = 0.5 * s * (dot_pg.mean() + dot_gp.mean())
    return obj, grad_t, grad_log_s


def align_translation_scale(
    pred: PointCloud,
    gt: PointCloud,
    iters: int = 500,
    step: float = 0.01,
) -> Alignment:
    """Fit (t, s) minimizing chamfer(s*pred + t, gt); returns the best iterate.

    Initialization: t = centroid(gt) - centroid(pred), s = ratio of RMS radii
    about the centroids. Scale stays positive by optimizing log s.
    """
    p = pred.points
    g = gt.points
    c_p, c_g = p.mean(axis=0), g.mean(axis=0)
    rms_p = np.sqrt(np.mean(((p - c_p) ** 2).sum(axis=1)))
    rms_g = np.sqrt(np.mean(((g - c_g) ** 2).sum(axis=1)))
    t = c_g - c_p
    log_s = float(np.log(rms_g / rms_p)) if rms_p > 0 and rms_g > 0 else 0.0

    gt_tree = cKDTree(g)
    m_t = np.zeros(3)
    v_t = np.zeros(3)
    m_s = 0.0
    v_s = 0.0

    best = None
    for it in range(iters + 1):
        obj, grad_t, grad_s = _objective_and_grad(p, g, gt_tree, t, log_s)
        if not np.isfinite(obj):
            raise ValueError(f"non-finite alignment objective at iteration {it}")
        if best is None or obj < best[0]:
            best = (obj, t.copy(), log_s)
        if it == iters:
            break
        k = it + 1
        m_t = _ADAM_B1 * m_t + (1 - _ADAM_B1) * grad_t
        v_t = _ADAM_B2 * v_t + (1 - _ADAM_B2) * grad_t**2
        m_s = _ADAM_B1 * m_s + (1 - _ADAM_B1) * grad_s
        v_s = _ADAM_B2 * v_s + (1 - _ADAM_B2) * grad_s**2
        mh_t = m_t / (1 - _ADAM_B1**k)
        vh_t = v_t / (1 - _ADAM_B2**k)
        mh_s = m_s / (1 - _ADAM_B1**k)
        vh_s = v_s / (1 - _ADAM_B2**k)
        t = t - step * mh_t / (np.sqrt(vh_t) + _ADAM_EPS)
        log_s = log_s - step * mh_s / (np.sqrt(vh_s) + _ADAM_EPS)

    obj, t_best, log_s_best = best
    return Alignment(translation=t_best, scale=float(np.exp(log_s_best)), final_objective=float(obj))
