"""Trajectory similarity metrics on (M, 2) point sequences in metres."""
import numpy as np

from imit2d import kernels
from imit2d.errors import LengthMismatch, TooShort

ICP_MAX_ITERS = 50
ICP_TOL = 1e-12


def _as_points(p):
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"expected an (M, 2) array, got {p.shape}")
    return p


def metric_rmse(pred, gt):
    pred, gt = _as_points(pred), _as_points(gt)
    if len(pred) != len(gt):
        raise LengthMismatch(f"rmse needs equal lengths, got {len(pred)} and {len(gt)}")
    return float(np.sqrt(np.mean(((pred - gt) ** 2).sum(axis=1))))


def metric_dtw(pred, gt):
    """Cumulative DTW cost with Euclidean point distance."""
    return float(kernels.dtw(_as_points(pred), _as_points(gt)))


def kabsch(src, dst):
    """Rotation R and translation t minimising sum |R src_i + t - dst_i|^2."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    C = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(C)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def _nearest(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    j = np.argmin(d2, axis=1)
    return j, np.sqrt(d2[np.arange(len(a)), j])


def metric_icp(pred, gt, max_iters=ICP_MAX_ITERS, return_transform=False):
    """Mean nearest-neighbour distance after rigid ICP alignment of ``pred`` onto ``gt``.

    Equal-length inputs are pre-aligned on index correspondence, others on
    centroids.
    """
    pred, gt = _as_points(pred), _as_points(gt)
    if len(pred) == 0 or len(gt) == 0:
        raise TooShort("icp needs non-empty inputs")
    if len(pred) == len(gt) and len(pred) >= 2:
        R, t = kabsch(pred, gt)
    else:
        R, t = np.eye(2), gt.mean(axis=0) - pred.mean(axis=0)
    cur = pred @ R.T + t
    j, dist = _nearest(cur, gt)
    err = dist.mean()
    for _ in range(max_iters):
        if len(pred) < 2:
            break
        R, t = kabsch(pred, gt[j])
        cur = pred @ R.T + t
        j, dist = _nearest(cur, gt)
        new = dist.mean()
        if abs(err - new) <= ICP_TOL:
            err = new
            break
        err = new
    if return_transform:
        return float(err), R, t
    return float(err)


def metric_jerk(pred, dt):
    """RMS magnitude of the third finite difference divided by dt^3."""
    pred = _as_points(pred)
    if len(pred) < 4:
        raise TooShort("jerk needs at least 4 points")
    if not dt > 0:
        raise ValueError("dt must be positive")
    j = (pred[3:] - 3.0 * pred[2:-1] + 3.0 * pred[1:-2] - pred[:-3]) / dt**3
    return float(np.sqrt(np.mean((j**2).sum(axis=1))))
