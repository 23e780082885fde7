"""PD waypoint tracking for the differential-drive wheelchair."""
import math
from dataclasses import dataclass

import numpy as np

from imit2d.court import HALF_LENGTH, HALF_WIDTH
from imit2d.dynamics import DEFAULT_DT, clamp_twist, wrap_angle

PLAN_SPACING = 1.0 / 30.0  # waypoint spacing of image-space plans
PLAN_MARGIN = 2.0
# waypoints tracked ahead of the time-indexed one (see notes on lag)
DEFAULT_LOOKAHEAD = 15


@dataclass(frozen=True)
class PDGains:
    k1p: float = 3.0
    k1d: float = 0.2
    k2p: float = 4.0
    k2d: float = 0.3

    def __post_init__(self):
        for name in ("k1p", "k1d", "k2p", "k2d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LocalPlan:
    waypoints: tuple
    created_at: float = 0.0
    replan_period: float = 0.2
    spacing: float = PLAN_SPACING

    def __post_init__(self):
        wp = np.array(self.waypoints, dtype=float).reshape(-1, 2)
        if len(wp) == 0:
            raise ValueError("a plan needs at least one waypoint")
        if not np.all(np.isfinite(wp)):
            raise ValueError("waypoints must be finite")
        wp = np.column_stack([
            np.clip(wp[:, 0], -HALF_LENGTH - PLAN_MARGIN, HALF_LENGTH + PLAN_MARGIN),
            np.clip(wp[:, 1], -HALF_WIDTH - PLAN_MARGIN, HALF_WIDTH + PLAN_MARGIN),
        ])
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)

    def __len__(self):
        return len(self.waypoints)


def errors_to(pose, target):
    """Distance error (projection on the heading) and wrapped bearing of ``target`` in the robot frame."""
    x0, y0, th = pose
    dx = target[0] - x0
    dy = target[1] - y0
    c, s = math.cos(th), math.sin(th)
    xr = c * dx + s * dy
    yr = -s * dx + c * dy
    ang = 0.0 if xr == 0.0 and yr == 0.0 else wrap_angle(math.atan2(yr, xr))
    return xr, ang


def pd_step(pose, target, gains, d_dot=0.0, theta_dot=0.0, turn_then_drive=True):
    """Twist command toward ``target``; ``pose`` is a WheelchairState or (x, y, theta)."""
    if hasattr(pose, "pose"):
        pose = pose.pose
    x_err, ang_err = errors_to(pose, target)
    v = gains.k1p * x_err + gains.k1d * d_dot
    omega = gains.k2p * ang_err + gains.k2d * theta_dot
    if turn_then_drive and abs(ang_err) > math.pi / 2:
        v *= max(math.cos(ang_err), 0.0)
    return clamp_twist(v, omega)


def active_index(plan, t, lookahead=DEFAULT_LOOKAHEAD):
    elapsed = max(t - plan.created_at, 0.0)
    k = int(math.floor(elapsed / plan.spacing + 1e-9)) + lookahead
    return min(k, len(plan) - 1)


class PlanTracker:
    """Stateful tracker; derivatives are backward differences of the error terms."""

    def __init__(self, gains=None, dt=DEFAULT_DT, lookahead=DEFAULT_LOOKAHEAD, turn_then_drive=True):
        self.gains = gains or PDGains()
        self.dt = dt
        self.lookahead = lookahead
        self.turn_then_drive = turn_then_drive
        self.prev_pose = None
        self._plan = None
        self._index = 0

    def reset(self):
        self.prev_pose = None
        self._plan = None
        self._index = 0

    def command(self, plan, state, t):
        if plan is not self._plan:
            self._plan = plan
            self._index = 0
        # monotone advance within one plan
        self._index = max(self._index, active_index(plan, t, self.lookahead))
        target = plan.waypoints[self._index]
        v, omega = track_step(state, target, self.gains, self.prev_pose, self.dt, self.turn_then_drive)
        self.prev_pose = state.pose
        return v, omega


def track_step(state, target, gains, prev_pose=None, dt=DEFAULT_DT, turn_then_drive=True):
    x_err, ang_err = errors_to(state.pose, target)
    if prev_pose is None:
        d_dot = theta_dot = 0.0
    else:
        px, pang = errors_to(prev_pose, target)
        d_dot = (x_err - px) / dt
        theta_dot = wrap_angle(ang_err - pang) / dt
    return pd_step(state.pose, target, gains, d_dot, theta_dot, turn_then_drive)


def track_plan(plan, state, t, gains=None, prev_pose=None, dt=DEFAULT_DT, lookahead=DEFAULT_LOOKAHEAD, turn_then_drive=True):
    """Stateless form of :class:`PlanTracker` for a single tick."""
    gains = gains or PDGains()
    target = plan.waypoints[active_index(plan, t, lookahead)]
    return track_step(state, target, gains, prev_pose, dt, turn_then_drive)
