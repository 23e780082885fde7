"""Window extraction from episodes and offline metric evaluation."""
from dataclasses import dataclass

import numpy as np

from imit2d.errors import NoValidWindows
from imit2d.geometry import apply_homography, invert_homography
from imit2d.harness.metrics import metric_dtw, metric_icp, metric_jerk, metric_rmse
from imit2d.numnet import HISTORY_LENGTH, PREDICTION_HORIZON
from imit2d.policy import COURT_NORMALIZER, IMAGE_NORMALIZER, WindowSet, extract_windows

MODE_LABELS = {("pre2d", "image"): "Pre 2D", ("post2d", "image"): "Post 2D", ("post2d", "task"): "T space", ("pre2d", "task"): "T space (pre)"}


def episode_windows(ep, mode, action="image", L_h=HISTORY_LENGTH, L_p=PREDICTION_HORIZON, stride=1):
    """Normalized windows of one episode; task-space actions use court coordinates for the chair."""
    ball = IMAGE_NORMALIZER.normalize(ep.ball_image)
    if action == "image":
        chair = IMAGE_NORMALIZER.normalize(ep.chair_image)
    else:
        chair = COURT_NORMALIZER.normalize(ep.chair_court)
    return extract_windows(ball, chair, chair, mode, L_h, L_p, stride, ep.id)


def dataset_windows(episodes, mode, action="image", **kw):
    return WindowSet.concat([episode_windows(ep, mode, action, **kw) for ep in episodes])


def to_court(policy_action, waypoints_n, homography):
    """Normalized waypoints (..., L_p, 2) to metres."""
    if policy_action == "task":
        return COURT_NORMALIZER.denormalize(waypoints_n)
    return apply_homography(invert_homography(homography), IMAGE_NORMALIZER.denormalize(waypoints_n))


class OraclePolicy:
    """Returns the ground-truth future of each window; for self-comparison checks."""

    kind = "oracle"
    label = "Oracle"

    def __init__(self, mode="post2d", action="image"):
        self.mode = mode
        self.action = action


@dataclass
class OfflineRow:
    policy: str
    mode: str
    rmse: float
    dtw: float
    icp: float
    jerk: float
    gt_jerk: float
    n_windows: int

    def as_dict(self):
        return dict(self.__dict__)


def evaluate_offline(policy, episodes, mode=None, seed=0, batch_size=512, fps=30):
    """Mean RMSE / DTW / ICP / jerk over every window of the held-out episodes."""
    mode = mode or policy.mode
    action = getattr(policy, "action", "image")
    rng = np.random.default_rng(seed)
    dt = 1.0 / fps
    sums = np.zeros(5)
    n = 0
    for ep in episodes:
        if not ep.valid:
            continue
        ws = episode_windows(ep, mode, action, L_h=getattr(policy, "L_h", HISTORY_LENGTH), L_p=getattr(policy, "L_p", PREDICTION_HORIZON))
        if len(ws) == 0:
            continue
        L_p = ws.target.shape[1]
        gt = ep.chair_court[ws.frame[:, None] + np.arange(L_p)[None, :]]
        for start in range(0, len(ws), batch_size):
            sl = slice(start, start + batch_size)
            if isinstance(policy, OraclePolicy):
                pred_n = ws.target[sl]
            else:
                pred_n = policy.predict(ws.ball[sl], ws.chair[sl], rng)
            pred = to_court(action, pred_n, ep.homography)
            for p, g in zip(pred, gt[sl]):
                sums += (metric_rmse(p, g), metric_dtw(p, g), metric_icp(p, g), metric_jerk(p, dt), metric_jerk(g, dt))
                n += 1
    if n == 0:
        raise NoValidWindows("no evaluable windows in the given episodes")
    m = sums / n
    return OfflineRow(policy.label, MODE_LABELS.get((mode, action), mode), *map(float, m), n)
